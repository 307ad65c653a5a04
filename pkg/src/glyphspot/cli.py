"""Command-line entry point.

Subcommands: synth (corpus generation), extract (pages to kernels +
manifest), train (knn | svm | encoder | cascade), eval (metrics JSON and
K sweeps), spot (per-page reports with optional overlays), serve (labeling
API + UI). Machine output goes to stdout or files; progress notes go to
stderr. Every subcommand is deterministic given its config and seed, and
GLYPHSPOT_SEED overrides any configured seed globally.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import figures
from .classifiers import KnnModel, knn_sweep, svm_train
from .encoder import train_encoder
from .errors import GlyphspotError, UnlabeledData
from .features import HogParams, pca_fit, pca_transform, hog
from .labels import append_label
from .persist import load_model, save_model
from .pipeline import (
    CascadeModel,
    EncoderClassifier,
    FeatureClassifier,
    SpotConfig,
    cascade_evaluate_oracle,
    evaluate,
    load_labeled_kernels,
    spot,
    spotting_score,
)
from .raster import (
    GrayImage,
    SynthConfig,
    binarize,
    load_image,
    read_truth,
    save_image,
    write_corpus,
)
from .segmentation import (
    INDEX_NAME,
    Box,
    build_manifest,
    extract_kernel,
    match_truth_label,
    propose_regions,
)
from .service import run_server


@dataclass
class RunConfig:
    """Flat, JSON-loadable configuration; CLI flags override file values."""

    seed: int = 7
    # synthetic corpus
    page_width: int = 640
    page_height: int = 480
    glyphs: int = 16
    rejects: int = 4
    noise_sigma: float = 0.05
    gap_min: int = 8
    stroke_thickness: int = 3
    # segmentation
    gap_threshold: int = 4
    min_area: int = 24
    # features
    hog_cell: int = 8
    hog_bins: int = 9
    hog_block: int = 2
    hog_stride: int = 1
    hog_clip: float = 0.2
    pca_variance: float = 0.95
    pca_k: int | None = None
    # classifiers
    knn_k: int = 3
    svm_c: float = 1.0
    svm_epochs: int = 200
    # encoder
    encoder_lr: float = 1e-3
    encoder_batch: int = 32
    encoder_epochs: int = 50
    encoder_early_stop: float | None = None
    # cascade
    cascade_threshold: float = 0.8

    def hog_params(self) -> HogParams:
        return HogParams(
            cell_size=self.hog_cell,
            bins=self.hog_bins,
            block=self.hog_block,
            block_stride=self.hog_stride,
            clip=self.hog_clip,
        )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise GlyphspotError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def _resolve(flag_value, config_value):
    return config_value if flag_value is None else flag_value


def _resolve_seed(flag_value, cfg: RunConfig) -> int:
    env = os.environ.get("GLYPHSPOT_SEED")
    if env is not None:
        return int(env)
    return int(_resolve(flag_value, cfg.seed))


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    synth_cfg = SynthConfig(
        width=_resolve(args.width, cfg.page_width),
        height=_resolve(args.height, cfg.page_height),
        glyphs=_resolve(args.glyphs, cfg.glyphs),
        rejects=_resolve(args.rejects, cfg.rejects),
        stroke_thickness=_resolve(args.thickness, cfg.stroke_thickness),
        noise_sigma=_resolve(args.noise_sigma, cfg.noise_sigma),
        gap_min=_resolve(args.gap_min, cfg.gap_min),
    )
    seed = _resolve_seed(args.seed, cfg)
    paths = write_corpus(args.out, synth_cfg, args.pages, seed)
    _note(f"wrote {len(paths)} pages to {args.out}")
    return 0


def _page_files(path: Path) -> list[Path]:
    if path.is_dir():
        pages = sorted(path.glob("page_*.png"))
        if not pages:
            pages = sorted(path.glob("*.png"))
        return pages
    return [path]


def cmd_extract(args, cfg: RunConfig) -> int:
    corpus = Path(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gap_threshold = _resolve(args.gap_threshold, cfg.gap_threshold)
    min_area = _resolve(args.min_area, cfg.min_area)
    labels_file = Path(args.labels) if args.labels else out / "labels.jsonl"

    index_lines = []
    total = 0
    for page_path in _page_files(corpus):
        page = load_image(page_path)
        page_id = page_path.stem
        boxes = propose_regions(binarize(page), gap_threshold, min_area)
        truth = None
        if args.labels_from_truth:
            truth_path = page_path.with_name(page_path.stem + ".truth.json")
            truth = read_truth(truth_path)
        for i, box in enumerate(boxes):
            kernel = extract_kernel(page, box, page_id)
            name = f"{page_id}_k{i:03d}.png"
            save_image(GrayImage(kernel.pixels), out / name)
            index_lines.append(
                json.dumps(
                    {"kernel": name, "page": page_id, "box": list(box.as_tuple())},
                    separators=(",", ":"),
                )
            )
            if truth is not None:
                label = match_truth_label(box, truth[0], truth[1])
                append_label(labels_file, name, label, ts=0)
            total += 1
    (out / INDEX_NAME).write_text("\n".join(index_lines) + ("\n" if index_lines else ""))
    manifest = build_manifest(out, labels_file if labels_file.exists() else None)
    manifest.write(out / "manifest.jsonl")
    _note(f"extracted {total} kernels to {out}")
    return 0


def _load_manifest_arg(path: str):
    from .segmentation import load_manifest

    return load_manifest(path)


def _feature_matrix(kernels, params: HogParams) -> np.ndarray:
    return np.array([hog(k, params) for k in kernels])


def cmd_train(args, cfg: RunConfig) -> int:
    seed = _resolve_seed(args.seed, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.kind == "cascade":
        first = load_model(args.first)
        second = load_model(args.second)
        model = CascadeModel(first, second, _resolve(args.threshold, cfg.cascade_threshold))
        save_model(model, out)
        _note(f"saved cascade ({first.kind} -> {second.kind}) to {out}")
        return 0

    manifest = _load_manifest_arg(args.manifest)
    kernels, labels = load_labeled_kernels(manifest, require_labels=False)
    if not kernels:
        raise UnlabeledData(f"{args.manifest} has no labeled kernels to train on")
    labels = np.array(labels)
    _note(f"training {args.kind} on {len(kernels)} labeled kernels")

    if args.kind == "encoder":
        X = np.stack([k.pixels for k in kernels])[:, None, :, :]
        model = train_encoder(
            X,
            labels,
            lr=_resolve(args.lr, cfg.encoder_lr),
            batch_size=_resolve(args.batch, cfg.encoder_batch),
            epochs=_resolve(args.epochs, cfg.encoder_epochs),
            seed=seed,
            early_stop_acc=_resolve(args.early_stop_acc, cfg.encoder_early_stop),
        )
        save_model(EncoderClassifier(model), out)
        log = model.train_meta["log"]
        csv_path = Path(args.log_csv) if args.log_csv else out.with_suffix(".training_log.csv")
        with open(csv_path, "w") as fh:
            fh.write("epoch,train_loss,train_accuracy\n")
            for e in log:
                fh.write(f"{e['epoch']},{e['train_loss']!r},{e['train_accuracy']!r}\n")
        figures.render_training_curve(log, csv_path.with_suffix(".png"))
        _note(
            f"saved encoder to {out} (final accuracy "
            f"{log[-1]['train_accuracy']:.4f}); log: {csv_path}"
        )
        return 0

    params = cfg.hog_params()
    feats = _feature_matrix(kernels, params)
    pca = pca_fit(feats, k=_resolve(args.pca_k, cfg.pca_k), variance=_resolve(args.pca_variance, cfg.pca_variance))
    X = pca_transform(pca, feats)
    if args.kind == "knn":
        model = FeatureClassifier(KnnModel(X, labels, k=_resolve(args.k, cfg.knn_k)), pca, params)
    else:
        svm = svm_train(
            X,
            np.where(labels == 1, 1.0, -1.0),
            C=_resolve(args.C, cfg.svm_c),
            epochs=_resolve(args.epochs, cfg.svm_epochs),
            seed=seed,
        )
        model = FeatureClassifier(svm, pca, params)
    save_model(model, out)
    _note(f"saved {args.kind} (pca k={pca.k}) to {out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    manifest = _load_manifest_arg(args.manifest)
    kernels, labels = load_labeled_kernels(manifest, require_labels=True)
    samples = list(zip(kernels, labels))
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)

    output = {"model": Path(args.model).name, "metrics": evaluate(model, samples).to_dict()}

    if args.oracle_second:
        second = load_model(args.oracle_second)
        oracle = cascade_evaluate_oracle(model, second, samples)
        output["oracle_cascade"] = oracle.to_dict()

    if args.k_sweep:
        if not (isinstance(model, FeatureClassifier) and isinstance(model.model, KnnModel)):
            raise GlyphspotError("--k-sweep needs a knn model")
        ks = [int(v) for v in args.k_sweep.split(",")]
        val_X = np.array([model.featurize(k) for k in kernels])
        sweep = knn_sweep(model.model.points, model.model.labels, val_X, np.array(labels), ks)
        csv_path = report_dir / "k_sweep.csv"
        with open(csv_path, "w") as fh:
            fh.write("k,accuracy\n")
            for k, acc in sweep.rows:
                fh.write(f"{k},{acc!r}\n")
        figures.render_k_sweep(sweep.rows, report_dir / "k_sweep.png")
        output["k_sweep"] = {"rows": sweep.rows, "best_k": sweep.best_k}
        _note(f"k sweep written to {csv_path} (best k = {sweep.best_k})")

    text = json.dumps(output, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_spot(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    spot_cfg = SpotConfig(
        gap_threshold=_resolve(args.gap_threshold, cfg.gap_threshold),
        min_area=_resolve(args.min_area, cfg.min_area),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_id = Path(args.model).name

    reports = []
    truths = []
    for page_path in _page_files(Path(args.pages)):
        page = load_image(page_path)
        report = spot(page, model, spot_cfg, page_id=page_path.stem, model_id=model_id)
        reports.append(report)
        (out / f"{page_path.stem}.spot.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n"
        )
        if args.overlay:
            figures.render_overlay(page, report, out / f"{page_path.stem}.overlay.png")
        if args.score_truth:
            truths.append(read_truth(page_path.with_name(page_path.stem + ".truth.json")))

    _note(f"spotted {len(reports)} pages into {out}")
    if args.score_truth:
        score = spotting_score(reports, truths)
        summary = {
            "pages": len(reports),
            "tp": score.tp,
            "fp": score.fp,
            "fn": score.fn,
            "precision": score.precision,
            "recall": score.recall,
            "f1": score.f1,
        }
        text = json.dumps(summary, indent=2)
        print(text)
        (out / "spotting.json").write_text(text + "\n")
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    _note(f"serving kernels from {args.kernels} on port {args.port}")
    run_server(args.port, args.kernels, args.labels, args.ui)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphspot",
        description="Character spotting on degraded document images",
    )
    parser.add_argument("--config", help="JSON config file (flat RunConfig schema)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic degraded-page corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pages", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--glyphs", type=int)
    p.add_argument("--rejects", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--gap-min", type=int)
    p.add_argument("--thickness", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="segment pages into 48x32 kernels + manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gap-threshold", type=int)
    p.add_argument("--min-area", type=int)
    p.add_argument("--labels", help="label store path (default <out>/labels.jsonl)")
    p.add_argument(
        "--labels-from-truth",
        action="store_true",
        help="auto-label kernels from the generator's truth boxes",
    )
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a classifier from a labeled manifest")
    p.add_argument("kind", choices=["knn", "svm", "encoder", "cascade"])
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="knn neighbor count")
    p.add_argument("--pca-k", type=int)
    p.add_argument("--pca-variance", type=float)
    p.add_argument("--C", type=float, help="svm soft-margin constant")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--early-stop-acc", type=float)
    p.add_argument("--log-csv", help="encoder per-epoch csv path")
    p.add_argument("--first", help="cascade: first model file")
    p.add_argument("--second", help="cascade: second model file")
    p.add_argument("--threshold", type=float, help="cascade confidence threshold")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="confusion metrics on a labeled manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="also write the metrics JSON here")
    p.add_argument("--report-dir", default=".")
    p.add_argument("--k-sweep", help="comma-separated odd k values")
    p.add_argument("--oracle-second", help="also report the truth-routed cascade with this second model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spot", help="find character boxes on pages")
    p.add_argument("--model", required=True)
    p.add_argument("--pages", required=True, help="page PNG or corpus directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--overlay", action="store_true", help="render box overlays")
    p.add_argument("--score-truth", action="store_true", help="score against truth JSONs")
    p.add_argument("--gap-threshold", type=int)
    p.add_argument("--min-area", type=int)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("serve", help="labeling HTTP service + UI")
    p.add_argument("--kernels", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--port", type=int, default=8444)
    p.add_argument("--ui", help="static UI bundle directory")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.kind == "cascade":
        if not (args.first and args.second):
            parser.error("train cascade needs --first and --second")
    elif args.command == "train" and not args.manifest:
        parser.error(f"train {args.kind} needs --manifest")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (GlyphspotError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
