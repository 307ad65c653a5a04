"""Cascade composition, evaluation metrics, and whole-page spotting.

Classifiers are used here through one duck-typed contract: ``predict(kernel)
-> Prediction``. Feature models (KNN, SVM) carry their fitted PCA basis and
HOG parameters so a raw kernel can be featurized on the way in; the encoder
consumes pixels directly. Cascades route by first-stage confidence at
inference time, with a separate ground-truth-routed evaluation that mirrors
re-testing the first model's errors on the second.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import KnnModel, Prediction, SvmModel, knn_predict, svm_predict
from .encoder import EncoderModel, encoder_forward
from .errors import ModelFeatureMismatch, UnlabeledData
from .features import HogParams, PcaModel, hog, pca_transform
from .raster import GrayImage, binarize, load_image
from .segmentation import Box, Kernel, Manifest, extract_kernel, propose_regions

__all__ = [
    "Metrics",
    "FeatureClassifier",
    "EncoderClassifier",
    "CascadeModel",
    "SpotConfig",
    "SpotReport",
    "SpottingScore",
    "cascade_predict",
    "cascade_evaluate_oracle",
    "evaluate",
    "spot",
    "spotting_score",
    "load_labeled_kernels",
]


@dataclass
class Metrics:
    """Confusion-matrix summary with character as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / total if total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }


def _counts(pairs) -> Metrics:
    tp = fp = tn = fn = 0
    for predicted, actual in pairs:
        if actual == 1:
            if predicted == 1:
                tp += 1
            else:
                fn += 1
        else:
            if predicted == 1:
                fp += 1
            else:
                tn += 1
    return Metrics(tp, fp, tn, fn)


# ---------------------------------------------------------------------------
# Uniform kernel classifiers
# ---------------------------------------------------------------------------


def _kernel_pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, Kernel) else np.asarray(x, dtype=np.float64)


@dataclass
class FeatureClassifier:
    """KNN or SVM bundled with the PCA basis and HOG parameters it was fit on."""

    model: KnnModel | SvmModel
    pca: PcaModel
    hog_params: HogParams = field(default_factory=HogParams)

    def __post_init__(self) -> None:
        if self.pca is None:
            raise ModelFeatureMismatch("feature classifiers need their fitted PCA model")

    @property
    def kind(self) -> str:
        return "knn" if isinstance(self.model, KnnModel) else "svm"

    def featurize(self, x) -> np.ndarray:
        return pca_transform(self.pca, hog(_kernel_pixels(x), self.hog_params))

    def predict(self, x) -> Prediction:
        vec = self.featurize(x)
        if isinstance(self.model, KnnModel):
            return knn_predict(self.model, vec)
        return svm_predict(self.model, vec)


@dataclass
class EncoderClassifier:
    model: EncoderModel

    kind = "encoder"

    def predict(self, x) -> Prediction:
        p = float(encoder_forward(self.model, _kernel_pixels(x)[None, None], mode="infer")[0])
        label = 1 if p > 0.5 else 0
        return Prediction(label, max(p, 1.0 - p), p)


@dataclass
class CascadeModel:
    """Two-stage classifier: low-confidence first-stage calls go to the second."""

    first: object
    second: object
    threshold: float = 0.8
    mode: str = "confidence"

    kind = "cascade"

    def __post_init__(self) -> None:
        if self.first is self.second:
            raise ValueError("cascade stages must be distinct models")
        if not 0.5 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0.5, 1], got {self.threshold}")
        if self.mode not in ("confidence", "oracle"):
            raise ValueError(f"unknown cascade mode {self.mode!r}")

    def predict(self, x) -> Prediction:
        return cascade_predict(self, x)


def cascade_predict(cascade: CascadeModel, x) -> Prediction:
    """First stage answers when confident; otherwise the second stage does.

    Oracle mode routes on ground truth and therefore cannot predict; use
    cascade_evaluate_oracle for that reading.
    """
    if cascade.mode != "confidence":
        raise ValueError("only confidence mode can predict; oracle mode is evaluation-only")
    p1 = cascade.first.predict(x)
    if p1.confidence >= cascade.threshold:
        return p1
    p2 = cascade.second.predict(x)
    return Prediction(p2.label, p2.confidence, p2.raw_score, routed_to_second=True)


def evaluate(classifier, samples: list[tuple[object, int | None]]) -> Metrics:
    """Confusion metrics of a classifier over labeled inputs."""
    for _, label in samples:
        if label is None:
            raise UnlabeledData("evaluation requires every sample to carry a label")
    return _counts((classifier.predict(x).label, label) for x, label in samples)


def cascade_evaluate_oracle(first, second, samples: list[tuple[object, int | None]]) -> Metrics:
    """Ground-truth-routed cascade: first answers unless wrong, then second.

    A sample scores the first stage's prediction when correct and the second
    stage's otherwise, so combined accuracy can never fall below the first
    stage alone. Routing peeks at labels; this is an evaluation protocol,
    not a deployable predictor.
    """
    for _, label in samples:
        if label is None:
            raise UnlabeledData("oracle cascade evaluation requires labels")
    pairs = []
    for x, label in samples:
        p1 = first.predict(x)
        effective = p1.label if p1.label == label else second.predict(x).label
        pairs.append((effective, label))
    return _counts(pairs)


# ---------------------------------------------------------------------------
# Whole-page spotting
# ---------------------------------------------------------------------------


@dataclass
class SpotConfig:
    gap_threshold: int = 4
    min_area: int = 24

    def to_dict(self) -> dict:
        return {"gap_threshold": self.gap_threshold, "min_area": self.min_area}


@dataclass
class SpotReport:
    page_id: str
    accepted: list[tuple[Box, float]]
    rejected: list[tuple[Box, float]]
    model_id: str
    config: dict

    def to_dict(self) -> dict:
        return {
            "page": self.page_id,
            "accepted": [{"box": list(b.as_tuple()), "score": s} for b, s in self.accepted],
            "rejected": [{"box": list(b.as_tuple()), "score": s} for b, s in self.rejected],
            "model": self.model_id,
            "config": self.config,
        }


def spot(
    page: GrayImage,
    classifier,
    cfg: SpotConfig = SpotConfig(),
    page_id: str = "",
    model_id: str = "",
) -> SpotReport:
    """Binarize, propose whitespace-bound regions, classify each kernel.

    Scores are the estimated probability that a box holds a complete
    character; boxes labeled character go to accepted, the rest to rejected.
    """
    boxes = propose_regions(binarize(page), cfg.gap_threshold, cfg.min_area)
    accepted = []
    rejected = []
    for box in boxes:
        kernel = extract_kernel(page, box, page_id)
        pred = classifier.predict(kernel)
        score = pred.char_probability
        if pred.label == 1:
            accepted.append((box, score))
        else:
            rejected.append((box, score))
    return SpotReport(page_id, accepted, rejected, model_id, cfg.to_dict())


@dataclass
class SpottingScore:
    """Detection-style score of accepted boxes against truth character boxes."""

    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def spotting_score(
    reports: list[SpotReport],
    truths: list[tuple[list[tuple[int, int, int, int]], list[str]]],
    iou_min: float = 0.5,
) -> SpottingScore:
    """Match accepted boxes to truth character boxes one-to-one by IoU."""
    from .segmentation import iou

    tp = fp = fn = 0
    for report, (boxes, labels) in zip(reports, truths):
        chars = [b for b, l in zip(boxes, labels) if l == "character"]
        taken = [False] * len(chars)
        for box, _ in report.accepted:
            scored = [(iou(box, c), i) for i, c in enumerate(chars) if not taken[i]]
            best = max(scored, default=(0.0, -1))
            if best[0] >= iou_min:
                taken[best[1]] = True
                tp += 1
            else:
                fp += 1
        fn += taken.count(False)
    return SpottingScore(tp, fp, fn)


def load_labeled_kernels(manifest: Manifest, require_labels: bool = True) -> tuple[list[Kernel], list[int]]:
    """Load manifest kernels from disk as (kernels, 0/1 labels)."""
    kernels = []
    labels = []
    for entry in manifest.entries:
        if entry.label is None:
            if require_labels:
                raise UnlabeledData(f"{entry.kernel_path} has no label")
            continue
        img = load_image(Path(manifest.root) / entry.kernel_path)
        box = entry.box if entry.box is not None else Box(0, 0, img.width, img.height)
        kernels.append(Kernel(img.pixels, box, entry.page_id, entry.label))
        labels.append(1 if entry.label == "character" else 0)
    return kernels, labels
