import numpy as np
import pytest

from glyphspot.errors import BatchTooSmall, ShapeMismatch, SingleClassData
from glyphspot.encoder import (
    BatchNorm,
    ConvLayer,
    bce_loss,
    batchnorm_forward,
    build_encoder,
    conv2d_forward,
    encoder_forward,
    leaky_relu,
    parameter_gradients,
    spatial_trace,
    train_encoder,
)


def naive_conv(x, w, stride=2, pad=1):
    """Direct six-nested-loop cross-correlation reference."""
    n, cin, h, wd = x.shape
    out_ch = w.shape[0]
    oh = (h + 2 * pad - 3) // stride + 1
    ow = (wd + 2 * pad - 3) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, out_ch, oh, ow))
    for ni in range(n):
        for o in range(out_ch):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(3):
                            for kx in range(3):
                                acc += xp[ni, ci, oy * stride + ky, ox * stride + kx] * w[o, ci, ky, kx]
                    out[ni, o, oy, ox] = acc
    return out


def forward_loss(model, X, y):
    return bce_loss(encoder_forward(model, X, mode="train"), y)


def numerical_gradients(model, X, y, h=1e-5):
    out = {}
    for name, p in model.parameters():
        grad = np.zeros_like(p)
        flat = p.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = forward_loss(model, X, y)
            flat[i] = orig - h
            lm = forward_loss(model, X, y)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        out[name] = grad
    return out


def separable_kernels(n, h, w, seed=0):
    """Half all-dark, half all-light kernels with a whisper of texture."""
    rng = np.random.default_rng(seed)
    dark = rng.uniform(0.0, 0.15, size=(n // 2, 1, h, w))
    light = rng.uniform(0.85, 1.0, size=(n - n // 2, 1, h, w))
    X = np.concatenate([dark, light])
    y = np.array([1] * (n // 2) + [0] * (n - n // 2))
    return X, y


class TestConv2d:
    def test_zero_kernel(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        out = conv2d_forward(x, ConvLayer(np.zeros((1, 1, 3, 3))))
        np.testing.assert_array_equal(out, np.zeros((1, 1, 2, 2)))

    def test_delta_kernel_subsamples_even_coordinates(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 1, 6, 6))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d_forward(x, ConvLayer(w))
        np.testing.assert_allclose(out[0, 0], x[0, 0, ::2, ::2], atol=1e-15)

    def test_matches_six_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        np.testing.assert_allclose(conv2d_forward(x, ConvLayer(w)), naive_conv(x, w), atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv2d_forward(np.zeros((1, 3, 4, 4)), ConvLayer(np.zeros((2, 1, 3, 3))))

    def test_ceil_division_output_dims(self):
        x = np.zeros((1, 1, 5, 3))
        out = conv2d_forward(x, ConvLayer(np.zeros((1, 1, 3, 3))))
        assert out.shape == (1, 1, 3, 2)


def make_bn(c, gamma=1.0, beta=0.0):
    return BatchNorm(
        gamma=np.full(c, float(gamma)),
        beta=np.full(c, float(beta)),
        running_mean=np.zeros(c),
        running_var=np.ones(c),
    )


class TestBatchNorm:
    def test_constant_batch_outputs_zero(self):
        x = np.full((4, 2, 3, 3), 5.0)
        out = batchnorm_forward(x, make_bn(2), mode="train")
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_two_point_scale_shift(self):
        x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)
        out = batchnorm_forward(x, make_bn(1, gamma=2.0, beta=1.0), mode="train")
        np.testing.assert_allclose(out.ravel(), [-1.0, 3.0], atol=1e-3)

    def test_train_mode_standardizes(self):
        rng = np.random.default_rng(2)
        x = rng.normal(3.0, 2.5, size=(8, 3, 5, 4))
        out = batchnorm_forward(x, make_bn(3), mode="train")
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.all(np.abs(mean) < 1e-6)
        assert np.all(np.abs(var - 1.0) < 1e-4)

    def test_running_stats_update_and_infer(self):
        bn = make_bn(1)
        x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
        batchnorm_forward(x, bn, mode="train")
        np.testing.assert_allclose(bn.running_mean, [0.9 * 0.0 + 0.1 * 2.0])
        np.testing.assert_allclose(bn.running_var, [0.9 * 1.0 + 0.1 * 1.0])
        out = batchnorm_forward(np.full((1, 1, 1, 1), 0.2), bn, mode="infer")
        expected = (0.2 - 0.2) / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.ravel(), [expected], atol=1e-12)

    def test_batch_too_small(self):
        with pytest.raises(BatchTooSmall):
            batchnorm_forward(np.zeros((1, 1, 2, 2)), make_bn(1), mode="train")


class TestBceLoss:
    def test_perfect_prediction_clamped(self):
        assert bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])) <= 1.2e-7

    def test_half_everywhere_is_ln2(self):
        assert bce_loss(np.full(10, 0.5), np.ones(10)) == pytest.approx(0.693147, abs=1e-6)

    def test_hand_arithmetic_two_sample_batch(self):
        loss = bce_loss(np.array([0.9, 0.2]), np.array([1.0, 0.0]))
        assert loss == pytest.approx((-np.log(0.9) - np.log(0.8)) / 2, abs=1e-12)
        assert loss == pytest.approx(0.164252, abs=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 1, 50)
        y = rng.integers(0, 2, 50)
        assert bce_loss(p, y) >= 0.0


class TestEncoderForward:
    def test_spatial_trace_48x32(self):
        assert spatial_trace((48, 32), 6) == [
            (24, 16), (12, 8), (6, 4), (3, 2), (2, 1), (1, 1),
        ]

    def test_seventh_layer_is_shape_error(self):
        with pytest.raises(ShapeMismatch):
            build_encoder((48, 32), channels=(8, 16, 32, 64, 64, 64, 64))

    def test_output_strictly_in_unit_interval(self):
        model = build_encoder(seed=1)
        rng = np.random.default_rng(4)
        probs = encoder_forward(model, rng.uniform(0, 1, size=(3, 1, 48, 32)))
        assert np.all(probs > 0.0) and np.all(probs < 1.0)

    def test_dead_network_outputs_half(self):
        model = build_encoder(seed=0)
        for _, p in model.parameters():
            p[:] = 0.0
        for bn in model.bns:
            bn.gamma[:] = 1.0
        probs = encoder_forward(model, np.random.default_rng(5).uniform(0, 1, (2, 1, 48, 32)))
        np.testing.assert_array_equal(probs, [0.5, 0.5])

    def test_shape_mismatch(self):
        model = build_encoder(seed=0)
        with pytest.raises(ShapeMismatch):
            encoder_forward(model, np.zeros((1, 1, 32, 48)))


class TestGradients:
    def test_finite_difference_check_downsized_net(self):
        model = build_encoder((12, 8), channels=(4, 8), hidden=16, seed=7)
        rng = np.random.default_rng(8)
        X = rng.uniform(0, 1, size=(4, 1, 12, 8))
        y = np.array([1.0, 0.0, 1.0, 0.0])
        _, _, analytic = parameter_gradients(model, X, y)
        numeric = numerical_gradients(model, X, y, h=1e-5)
        worst = 0.0
        for name, _ in model.parameters():
            a, n = analytic[name], numeric[name]
            rel = np.abs(a - n) / np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, 1e-6)])
            worst = max(worst, float(rel.max()))
        assert worst < 1e-4


class TestTraining:
    def test_separable_kernels_reach_full_accuracy_fast(self):
        X, y = separable_kernels(200, 48, 32, seed=0)
        model = train_encoder(X, y, epochs=5, seed=0)
        log = model.train_meta["log"]
        assert any(entry["train_accuracy"] == 1.0 for entry in log)

    def test_loss_nonincreasing_on_separable_set(self):
        X, y = separable_kernels(120, 48, 32, seed=1)
        model = train_encoder(X, y, lr=1e-3, epochs=6, seed=1)
        losses = [e["train_loss"] for e in model.train_meta["log"]]
        assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))

    def test_determinism_same_seed_identical(self):
        X, y = separable_kernels(64, 48, 32, seed=2)
        a = train_encoder(X, y, epochs=2, seed=3)
        b = train_encoder(X, y, epochs=2, seed=3)
        assert a.train_meta["final_loss"] == b.train_meta["final_loss"]
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_single_class_rejected(self):
        X = np.zeros((8, 1, 48, 32))
        with pytest.raises(SingleClassData):
            train_encoder(X, np.ones(8), epochs=1)

    def test_early_stop(self):
        X, y = separable_kernels(64, 48, 32, seed=4)
        model = train_encoder(X, y, epochs=30, seed=4, early_stop_acc=1.0)
        assert model.train_meta["epochs_run"] < 30


class TestLeakyRelu:
    def test_slope(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(leaky_relu(x), [-0.02, 0.0, 3.0])
