"""Strided-convolution encoder classifier with hand-written backpropagation.

Six 3x3 stride-2 convolution blocks (batch norm + LeakyReLU after each)
collapse a 48x32 kernel to 1x1, followed by two dense layers ending in a
sigmoid. Training minimizes binary cross-entropy with Adam; every gradient
is derived by hand and float64 end to end, so finite-difference checks hold
to tight tolerance and runs are bit-reproducible given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, NonfiniteLoss, ShapeMismatch, SingleClassData
from .numeric import f32_exact, sigmoid

__all__ = [
    "ConvLayer",
    "BatchNorm",
    "Dense",
    "EncoderModel",
    "build_encoder",
    "spatial_trace",
    "conv2d_forward",
    "batchnorm_forward",
    "leaky_relu",
    "bce_loss",
    "encoder_forward",
    "parameter_gradients",
    "train_encoder",
]

DEFAULT_CHANNELS = (8, 16, 32, 64, 64, 64)
LEAKY_ALPHA = 0.01
BCE_CLAMP = 1e-7


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_ch, in_ch, 3, 3); stride 2, pad 1, no bias


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray


@dataclass
class EncoderModel:
    convs: list[ConvLayer]
    bns: list[BatchNorm]
    dense1: Dense
    dense2: Dense
    input_shape: tuple[int, int] = (48, 32)
    alpha: float = LEAKY_ALPHA
    train_meta: dict = field(default_factory=dict)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        params = []
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            params.append((f"conv{i}.w", conv.weights))
            params.append((f"bn{i}.gamma", bn.gamma))
            params.append((f"bn{i}.beta", bn.beta))
        params.append(("dense1.w", self.dense1.weights))
        params.append(("dense1.b", self.dense1.bias))
        params.append(("dense2.w", self.dense2.weights))
        params.append(("dense2.b", self.dense2.bias))
        return params


def spatial_trace(input_shape: tuple[int, int], layers: int) -> list[tuple[int, int]]:
    """Spatial dims after each stride-2 same-padded layer (ceil halving)."""
    h, w = input_shape
    trace = []
    for _ in range(layers):
        h = (h + 1) // 2
        w = (w + 1) // 2
        trace.append((h, w))
    return trace


def build_encoder(
    input_shape: tuple[int, int] = (48, 32),
    channels: tuple[int, ...] = DEFAULT_CHANNELS,
    hidden: int = 32,
    seed: int = 0,
) -> EncoderModel:
    """He-initialized encoder; rejects stacks that exhaust the image early.

    Hitting 1x1 before the final convolution layer means the extra layers
    cannot reduce anything (a seventh layer on 48x32 is a shape error).
    """
    trace = spatial_trace(input_shape, len(channels))
    for h, w in trace[:-1]:
        if (h, w) == (1, 1):
            raise ShapeMismatch(
                f"{input_shape} image is exhausted before layer {len(channels)}"
            )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    convs = []
    bns = []
    in_ch = 1
    for out_ch in channels:
        std = np.sqrt(2.0 / (in_ch * 9))
        convs.append(ConvLayer(rng.normal(0.0, std, size=(out_ch, in_ch, 3, 3))))
        bns.append(
            BatchNorm(
                gamma=np.ones(out_ch),
                beta=np.zeros(out_ch),
                running_mean=np.zeros(out_ch),
                running_var=np.ones(out_ch),
            )
        )
        in_ch = out_ch
    flat = channels[-1] * trace[-1][0] * trace[-1][1]
    dense1 = Dense(rng.normal(0.0, np.sqrt(2.0 / flat), size=(hidden, flat)), np.zeros(hidden))
    dense2 = Dense(rng.normal(0.0, np.sqrt(2.0 / hidden), size=(1, hidden)), np.zeros(1))
    return EncoderModel(convs, bns, dense1, dense2, input_shape)


# ---------------------------------------------------------------------------
# Layer forward/backward primitives
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int = 3, stride: int = 2, pad: int = 1) -> np.ndarray:
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(cols: np.ndarray, x_shape: tuple, k: int = 3, stride: int = 2, pad: int = 1) -> np.ndarray:
    n, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride] += cols[:, :, ky, kx]
    return xp[:, :, pad : pad + h, pad : pad + w]


def _conv_forward(x: np.ndarray, layer: ConvLayer):
    if x.ndim != 4 or x.shape[1] != layer.weights.shape[1]:
        raise ShapeMismatch(
            f"conv expects (N, {layer.weights.shape[1]}, H, W), got {x.shape}"
        )
    n, _, h, w = x.shape
    out_ch = layer.weights.shape[0]
    oh, ow = (h + 1) // 2, (w + 1) // 2
    cols = _im2col(x)
    w_mat = layer.weights.reshape(out_ch, -1)
    out = np.einsum("of,nfp->nop", w_mat, cols).reshape(n, out_ch, oh, ow)
    return out, cols


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """3x3 cross-correlation, stride 2, zero same-padding: dims ceil-halve."""
    return _conv_forward(np.asarray(x, dtype=np.float64), layer)[0]


def _conv_backward(d_out: np.ndarray, cols: np.ndarray, x_shape: tuple, layer: ConvLayer):
    n, out_ch, oh, ow = d_out.shape
    d_mat = d_out.reshape(n, out_ch, oh * ow)
    d_weights = np.einsum("nop,nfp->of", d_mat, cols).reshape(layer.weights.shape)
    w_mat = layer.weights.reshape(out_ch, -1)
    d_cols = np.einsum("of,nop->nfp", w_mat, d_mat)
    return d_weights, _col2im(d_cols, x_shape)


def _bn_forward(x: np.ndarray, bn: BatchNorm, mode: str, update_running: bool = True):
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("batch norm train mode needs a batch of at least 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_running:
            m = bn.momentum
            bn.running_mean[:] = m * bn.running_mean + (1 - m) * mean
            bn.running_var[:] = m * bn.running_var + (1 - m) * var
    elif mode == "infer":
        mean = bn.running_mean
        var = bn.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = bn.gamma[None, :, None, None] * x_hat + bn.beta[None, :, None, None]
    return out, (x_hat, inv_std)


def batchnorm_forward(x: np.ndarray, bn: BatchNorm, mode: str = "train") -> np.ndarray:
    """Normalize per channel by batch (train) or running (infer) statistics,
    then scale by gamma and shift by beta."""
    return _bn_forward(np.asarray(x, dtype=np.float64), bn, mode)[0]


def _bn_backward(d_out: np.ndarray, cache, bn: BatchNorm):
    x_hat, inv_std = cache
    d_gamma = (d_out * x_hat).sum(axis=(0, 2, 3))
    d_beta = d_out.sum(axis=(0, 2, 3))
    d_xhat = d_out * bn.gamma[None, :, None, None]
    mean_dxhat = d_xhat.mean(axis=(0, 2, 3))
    mean_dxhat_xhat = (d_xhat * x_hat).mean(axis=(0, 2, 3))
    d_x = inv_std[None, :, None, None] * (
        d_xhat - mean_dxhat[None, :, None, None] - x_hat * mean_dxhat_xhat[None, :, None, None]
    )
    return d_x, d_gamma, d_beta


def leaky_relu(x: np.ndarray, alpha: float = LEAKY_ALPHA) -> np.ndarray:
    return np.where(x > 0.0, x, alpha * x)


def bce_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped away from 0 and 1."""
    p = np.clip(np.asarray(predicted, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(target, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


# ---------------------------------------------------------------------------
# Whole-network forward and backward
# ---------------------------------------------------------------------------


def _forward(model: EncoderModel, x: np.ndarray, mode: str, keep_cache: bool):
    caches = []
    out = x
    for conv, bn in zip(model.convs, model.bns):
        conv_out, cols = _conv_forward(out, conv)
        bn_out, bn_cache = _bn_forward(conv_out, bn, mode)
        act = leaky_relu(bn_out, model.alpha)
        if keep_cache:
            caches.append((out.shape, cols, bn_cache, bn_out))
        out = act
    n = out.shape[0]
    flat = out.reshape(n, -1)
    pre1 = flat @ model.dense1.weights.T + model.dense1.bias
    h1 = leaky_relu(pre1, model.alpha)
    z2 = h1 @ model.dense2.weights.T + model.dense2.bias
    probs = sigmoid(z2[:, 0])
    if not keep_cache:
        return probs, None
    return probs, (caches, out.shape, flat, pre1, h1)


def encoder_forward(model: EncoderModel, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Class probabilities in (0, 1) for a batch shaped (N, 1, H, W)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 1 or batch.shape[2:] != model.input_shape:
        raise ShapeMismatch(
            f"expected (N, 1, {model.input_shape[0]}, {model.input_shape[1]}), got {batch.shape}"
        )
    return _forward(model, batch, mode, keep_cache=False)[0]


def parameter_gradients(model: EncoderModel, x: np.ndarray, y: np.ndarray, mode: str = "train"):
    """Loss and hand-derived parameter gradients for one batch.

    The gradient flows through sigmoid + cross-entropy as (p - y)/N, then
    back through the dense layers, LeakyReLU, full batch-statistics batch
    norm, and the stride-2 convolutions via column scatter.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    probs, cache = _forward(model, x, mode, keep_cache=True)
    caches, conv_shape, flat, pre1, h1 = cache
    n = len(y)
    loss = bce_loss(probs, y)

    grads: dict[str, np.ndarray] = {}
    d_z2 = ((probs - y) / n)[:, None]
    grads["dense2.w"] = d_z2.T @ h1
    grads["dense2.b"] = d_z2.sum(axis=0)
    d_h1 = d_z2 @ model.dense2.weights
    d_pre1 = d_h1 * np.where(pre1 > 0.0, 1.0, model.alpha)
    grads["dense1.w"] = d_pre1.T @ flat
    grads["dense1.b"] = d_pre1.sum(axis=0)
    d_flat = d_pre1 @ model.dense1.weights
    d_out = d_flat.reshape(conv_shape)

    for i in range(len(model.convs) - 1, -1, -1):
        x_shape, cols, bn_cache, bn_out = caches[i]
        d_act = d_out * np.where(bn_out > 0.0, 1.0, model.alpha)
        d_conv_out, d_gamma, d_beta = _bn_backward(d_act, bn_cache, model.bns[i])
        grads[f"bn{i}.gamma"] = d_gamma
        grads[f"bn{i}.beta"] = d_beta
        d_w, d_out = _conv_backward(d_conv_out, cols, x_shape, model.convs[i])
        grads[f"conv{i}.w"] = d_w
    return loss, probs, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class _Adam:
    def __init__(self, params: list[tuple[str, np.ndarray]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params}
        self.v = {name: np.zeros_like(p) for name, p in params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in self.params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _quantize(model: EncoderModel) -> None:
    for _, p in model.parameters():
        p[:] = f32_exact(p)
    for bn in model.bns:
        bn.running_mean[:] = f32_exact(bn.running_mean)
        bn.running_var[:] = f32_exact(bn.running_var)


def train_encoder(
    X: np.ndarray,
    y: np.ndarray,
    lr: float = 1e-3,
    batch_size: int = 32,
    epochs: int = 50,
    seed: int = 0,
    early_stop_acc: float | None = None,
    channels: tuple[int, ...] = DEFAULT_CHANNELS,
    hidden: int = 32,
) -> EncoderModel:
    """Train the encoder on kernels X (N, 1, H, W) with labels y in {0, 1}.

    Shuffling, initialization, and updates all derive from the seed, so
    identical inputs give bit-identical models. Per-epoch train loss and
    accuracy land in train_meta["log"]. Size-1 remainder batches are dropped
    (batch statistics need two samples).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 1:
        raise ShapeMismatch(f"X must be (N, 1, H, W), got {X.shape}")
    if len(set(np.unique(y))) < 2:
        raise SingleClassData("encoder training needs both classes")

    model = build_encoder(X.shape[2:], channels=channels, hidden=hidden, seed=seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    adam = _Adam(model.parameters(), lr)
    n = len(X)
    log: list[dict] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        seen = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            loss, probs, grads = parameter_gradients(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonfiniteLoss(
                    f"loss became {loss} at epoch {epoch}, batch offset {start}"
                )
            adam.step(grads)
            loss_sum += loss * len(idx)
            hits += int(((probs >= 0.5) == (y[idx] >= 0.5)).sum())
            seen += len(idx)
        entry = {
            "epoch": epoch,
            "train_loss": loss_sum / seen,
            "train_accuracy": hits / seen,
        }
        log.append(entry)
        if early_stop_acc is not None and entry["train_accuracy"] >= early_stop_acc:
            break

    _quantize(model)
    model.train_meta = {
        "seed": seed,
        "epochs_run": len(log),
        "lr": lr,
        "batch_size": batch_size,
        "final_loss": log[-1]["train_loss"],
        "log": log,
    }
    return model
