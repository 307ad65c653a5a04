"""Model file format: one JSON envelope, checksummed base64 numeric payloads.

Arrays serialize as little-endian IEEE-754, 32-bit for classifier and
encoder parameters (which live on the float32 grid in memory) and 64-bit
for PCA fields. Serialization is canonical (sorted keys, fixed separators),
so save -> load -> save is byte-identical and any flipped payload byte
trips the checksum.
"""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .classifiers import KnnModel, SvmModel
from .encoder import BatchNorm, ConvLayer, Dense, EncoderModel
from .errors import ChecksumError, FormatError, VersionError
from .features import HogParams, PcaModel
from .pipeline import CascadeModel, EncoderClassifier, FeatureClassifier

FORMAT = "glyphspot-model"
VERSION = 1

__all__ = ["save_model", "load_model", "FORMAT", "VERSION"]


def _enc_array(arr: np.ndarray, dtype: str) -> dict:
    data = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
    return {
        "dtype": dtype,
        "shape": list(arr.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _dec_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"]).newbyteorder("<"))
    arr = arr.reshape(blob["shape"])
    if blob["dtype"].startswith("f"):
        return arr.astype(np.float64)
    return arr.astype(np.int64)


def _enc_pca(m: PcaModel) -> dict:
    return {
        "mean": _enc_array(m.mean, "f8"),
        "components": _enc_array(m.components, "f8"),
        "eigenvalues": _enc_array(m.eigenvalues, "f8"),
    }


def _dec_pca(p: dict) -> PcaModel:
    return PcaModel(_dec_array(p["mean"]), _dec_array(p["components"]), _dec_array(p["eigenvalues"]))


def _enc_knn(fc: FeatureClassifier) -> dict:
    m = fc.model
    return {
        "points": _enc_array(m.points, "f4"),
        "labels": _enc_array(m.labels, "i8"),
        "k": m.k,
        "pca": _enc_pca(fc.pca),
        "hog": asdict(fc.hog_params),
    }


def _dec_knn(p: dict) -> FeatureClassifier:
    model = KnnModel(_dec_array(p["points"]), _dec_array(p["labels"]), k=p["k"])
    return FeatureClassifier(model, _dec_pca(p["pca"]), HogParams(**p["hog"]))


def _enc_svm(fc: FeatureClassifier) -> dict:
    m = fc.model
    return {
        "w": _enc_array(m.w, "f4"),
        "b": m.b,
        "C": m.C,
        "meta": m.training_meta,
        "pca": _enc_pca(fc.pca),
        "hog": asdict(fc.hog_params),
    }


def _dec_svm(p: dict) -> FeatureClassifier:
    model = SvmModel(_dec_array(p["w"]), p["b"], p["C"], p.get("meta", {}))
    return FeatureClassifier(model, _dec_pca(p["pca"]), HogParams(**p["hog"]))


def _enc_encoder(m: EncoderModel) -> dict:
    return {
        "input_shape": list(m.input_shape),
        "alpha": m.alpha,
        "convs": [_enc_array(c.weights, "f4") for c in m.convs],
        "bns": [
            {
                "gamma": _enc_array(bn.gamma, "f4"),
                "beta": _enc_array(bn.beta, "f4"),
                "running_mean": _enc_array(bn.running_mean, "f4"),
                "running_var": _enc_array(bn.running_var, "f4"),
                "eps": bn.eps,
                "momentum": bn.momentum,
            }
            for bn in m.bns
        ],
        "dense1": {"w": _enc_array(m.dense1.weights, "f4"), "b": _enc_array(m.dense1.bias, "f4")},
        "dense2": {"w": _enc_array(m.dense2.weights, "f4"), "b": _enc_array(m.dense2.bias, "f4")},
        "meta": m.train_meta,
    }


def _dec_encoder(p: dict) -> EncoderModel:
    convs = [ConvLayer(_dec_array(c)) for c in p["convs"]]
    bns = [
        BatchNorm(
            gamma=_dec_array(bn["gamma"]),
            beta=_dec_array(bn["beta"]),
            running_mean=_dec_array(bn["running_mean"]),
            running_var=_dec_array(bn["running_var"]),
            eps=bn["eps"],
            momentum=bn["momentum"],
        )
        for bn in p["bns"]
    ]
    dense1 = Dense(_dec_array(p["dense1"]["w"]), _dec_array(p["dense1"]["b"]))
    dense2 = Dense(_dec_array(p["dense2"]["w"]), _dec_array(p["dense2"]["b"]))
    return EncoderModel(
        convs, bns, dense1, dense2, tuple(p["input_shape"]), p["alpha"], p.get("meta", {})
    )


def _encode(model) -> tuple[str, dict]:
    if isinstance(model, PcaModel):
        return "pca", _enc_pca(model)
    if isinstance(model, FeatureClassifier):
        return (model.kind, _enc_knn(model) if model.kind == "knn" else _enc_svm(model))
    if isinstance(model, EncoderClassifier):
        return "encoder", _enc_encoder(model.model)
    if isinstance(model, EncoderModel):
        return "encoder", _enc_encoder(model)
    if isinstance(model, CascadeModel):
        first_kind, first_payload = _encode(model.first)
        second_kind, second_payload = _encode(model.second)
        if "cascade" in (first_kind, second_kind):
            raise FormatError("cascades cannot nest")
        return "cascade", {
            "first": {"kind": first_kind, "payload": first_payload},
            "second": {"kind": second_kind, "payload": second_payload},
            "threshold": model.threshold,
            "mode": model.mode,
        }
    raise FormatError(f"cannot serialize {type(model).__name__}")


def _decode(kind: str, payload: dict):
    if kind == "pca":
        return _dec_pca(payload)
    if kind == "knn":
        return _dec_knn(payload)
    if kind == "svm":
        return _dec_svm(payload)
    if kind == "encoder":
        return EncoderClassifier(_dec_encoder(payload))
    if kind == "cascade":
        first = _decode(payload["first"]["kind"], payload["first"]["payload"])
        second = _decode(payload["second"]["kind"], payload["second"]["payload"])
        return CascadeModel(first, second, payload["threshold"], payload["mode"])
    raise FormatError(f"unknown model kind {kind!r}")


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def save_model(model, path: str | Path) -> None:
    """Write a model envelope; loadable kinds: knn, svm, pca, encoder, cascade."""
    kind, payload = _encode(model)
    body = _canonical(payload)
    envelope = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "checksum": zlib.crc32(body.encode("utf-8")),
        "payload": payload,
    }
    Path(path).write_text(_canonical(envelope) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    """Load and verify a model envelope.

    Feature kinds come back as FeatureClassifier bundles and encoders as
    EncoderClassifier, both ready to predict on kernels; pca loads bare.
    """
    path = Path(path)
    try:
        envelope = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a model file") from exc
    if not isinstance(envelope, dict) or envelope.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} file")
    if envelope.get("version") != VERSION:
        raise VersionError(f"{path}: unsupported version {envelope.get('version')!r}")
    payload = envelope.get("payload")
    body = _canonical(payload)
    if zlib.crc32(body.encode("utf-8")) != envelope.get("checksum"):
        raise ChecksumError(f"{path}: payload does not match its checksum")
    return _decode(envelope.get("kind"), payload)
