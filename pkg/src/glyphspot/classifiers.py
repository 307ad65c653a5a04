"""K-nearest neighbors and a linear soft-margin SVM over feature vectors.

Both expose the same prediction contract (label, confidence, raw score) so
the cascade can treat them interchangeably. Labels are 0 (reject) and
1 (character); every residual tie breaks toward reject, since a missed
character costs less than a false one when spotting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyModel, SingleClassData
from .numeric import f32_exact, sigmoid

__all__ = [
    "Prediction",
    "KnnModel",
    "SvmModel",
    "SweepResult",
    "euclidean",
    "knn_predict",
    "knn_sweep",
    "svm_train",
    "svm_predict",
    "svm_objective",
]


@dataclass
class Prediction:
    label: int  # 0 reject, 1 character
    confidence: float  # in [0, 1]
    raw_score: float  # KNN character-vote fraction, or SVM margin
    routed_to_second: bool = False

    @property
    def char_probability(self) -> float:
        """Estimated probability that the input is a complete character."""
        return self.confidence if self.label == 1 else 1.0 - self.confidence


def euclidean(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"{p.shape} vs {q.shape}")
    return float(np.sqrt(np.sum((q - p) ** 2)))


# ---------------------------------------------------------------------------
# KNN
# ---------------------------------------------------------------------------


@dataclass
class KnnModel:
    points: np.ndarray  # (n, d), held on the float32 grid for serialization
    labels: np.ndarray  # (n,) values in {0, 1}
    k: int = 3

    def __post_init__(self) -> None:
        self.points = f32_exact(np.atleast_2d(np.asarray(self.points, dtype=np.float64)))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.points) != len(self.labels):
            raise DimensionMismatch("points and labels differ in length")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be a positive odd integer, got {self.k}")
        if len(self.points) and self.k > len(self.points):
            raise ValueError(f"k={self.k} exceeds {len(self.points)} training points")


def knn_predict(model: KnnModel, x: np.ndarray) -> Prediction:
    """Majority vote among the k nearest training points (Euclidean).

    Equal distances resolve to the lower training index; a vote tie (only
    possible with even k) resolves to reject.
    """
    if len(model.points) == 0:
        raise EmptyModel("KNN model has no training points")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.points.shape[1],):
        raise DimensionMismatch(f"expected dim {model.points.shape[1]}, got {x.shape}")
    dist = np.sqrt(((model.points - x) ** 2).sum(axis=1))
    nearest = np.argsort(dist, kind="stable")[: model.k]
    votes_char = int(model.labels[nearest].sum())
    votes_rej = model.k - votes_char
    label = 1 if votes_char > votes_rej else 0
    return Prediction(label, max(votes_char, votes_rej) / model.k, votes_char / model.k)


@dataclass
class SweepResult:
    rows: list[tuple[int, float]]  # (k, accuracy) in sweep order
    best_k: int


def knn_sweep(
    train_X: np.ndarray,
    train_y: np.ndarray,
    val_X: np.ndarray,
    val_y: np.ndarray,
    k_values: list[int],
) -> SweepResult:
    """Accuracy of KNN on held-out data for each k; ties prefer the smaller k."""
    rows = []
    best_k, best_acc = None, -1.0
    for k in sorted(k_values):
        model = KnnModel(train_X, train_y, k=k)
        hits = sum(knn_predict(model, x).label == y for x, y in zip(val_X, val_y))
        acc = hits / len(val_y)
        rows.append((k, acc))
        if acc > best_acc:
            best_k, best_acc = k, acc
    return SweepResult(rows, best_k)


# ---------------------------------------------------------------------------
# Linear SVM (Pegasos-style subgradient training)
# ---------------------------------------------------------------------------


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    C: float = 1.0
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.w = f32_exact(np.asarray(self.w, dtype=np.float64))
        self.b = float(f32_exact(self.b))


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    """Regularized hinge objective with lambda = 1 / (n C)."""
    lam = 1.0 / (len(X) * C)
    margins = y * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean()
    return float(lam / 2.0 * (w @ w) + hinge)


def svm_train(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    epochs: int = 200,
    seed: int = 0,
) -> SvmModel:
    """Train a linear soft-margin SVM by seeded stochastic subgradient descent.

    y must hold both classes as -1/+1. Steps follow the 1/(lambda t)
    schedule with projection onto the ||w|| <= 1/sqrt(lambda) ball; the bias
    stays unregularized. The returned model is the running average of all
    iterates, whose per-epoch objective trajectory lands in training_meta.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise SingleClassData("training labels must include both -1 and +1")
    if C <= 0:
        raise ValueError("C must be positive")
    n, d = X.shape
    lam = 1.0 / (n * C)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    w = np.zeros(d)
    b = 0.0
    w_total = np.zeros(d)
    b_total = 0.0
    t = 0
    epoch_objectives = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (X[i] @ w + b) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * X[i]
                b += eta * y[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            w_total += w
            b_total += b
        epoch_objectives.append(svm_objective(w_total / t, b_total / t, X, y, C))

    w_avg = w_total / t
    b_avg = b_total / t
    meta = {
        "epochs": epochs,
        "seed": seed,
        "final_objective": svm_objective(w_avg, b_avg, X, y, C),
        "epoch_objectives": epoch_objectives,
    }
    return SvmModel(w_avg, b_avg, C, meta)


def svm_predict(model: SvmModel, x: np.ndarray) -> Prediction:
    """Signed-margin decision: positive side is character, zero falls to reject."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.w.shape:
        raise DimensionMismatch(f"expected dim {model.w.shape[0]}, got {x.shape}")
    raw = float(model.w @ x + model.b)
    label = 1 if raw > 0.0 else 0
    return Prediction(label, float(sigmoid(abs(raw))), raw)
