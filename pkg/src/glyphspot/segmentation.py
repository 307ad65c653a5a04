"""Whitespace-bound region proposal and fixed-size kernel extraction.

Candidate regions are connected ink components whose bounding boxes get
merged whenever less than a gap threshold of whitespace separates them in
both axes; this reconstructs multi-stroke characters without assuming any
line or column structure. Each accepted region is cut into a fixed 48x32
kernel (aspect preserved, background padded) for the classifiers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoxOutOfBounds, DimensionError
from .labels import replay_labels
from .raster import BinaryImage, GrayImage

KERNEL_H = 48
KERNEL_W = 32

__all__ = [
    "KERNEL_H",
    "KERNEL_W",
    "Box",
    "Kernel",
    "ManifestEntry",
    "Manifest",
    "iou",
    "propose_regions",
    "extract_kernel",
    "build_manifest",
    "match_truth_label",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box: top-left corner plus extents (w, h >= 1)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be >= 1, got {self.w}x{self.h}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


def iou(a: Box | tuple, b: Box | tuple) -> float:
    """Intersection-over-union of two boxes given as Box or (x, y, w, h)."""
    ax, ay, aw, ah = a.as_tuple() if isinstance(a, Box) else a
    bx, by, bw, bh = b.as_tuple() if isinstance(b, Box) else b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


@dataclass
class Kernel:
    """A fixed 48x32 grayscale window cut from a page."""

    pixels: np.ndarray
    source_box: Box
    page_id: str = ""
    label: str | None = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (KERNEL_H, KERNEL_W):
            raise DimensionError(
                f"kernel must be {KERNEL_H}x{KERNEL_W}, got {self.pixels.shape}"
            )


# ---------------------------------------------------------------------------
# Connected components over ink runs
# ---------------------------------------------------------------------------


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _ink_runs(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """Horizontal ink runs plus an 8-connected component id per run.

    Returns (rows, starts, ends, component_of_run); ends are exclusive,
    runs sorted by (row, start).
    """
    h = bits.shape[0]
    padded = np.zeros((h, bits.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = bits
    delta = np.diff(padded, axis=1)
    start_pos = np.argwhere(delta == 1)  # (row, start col), row-major sorted
    end_pos = np.argwhere(delta == -1)  # (row, one past end col)
    rows = start_pos[:, 0]
    starts = start_pos[:, 1]
    ends = end_pos[:, 1]
    n = len(rows)
    if n == 0:
        return rows, starts, ends, []

    row_first = np.searchsorted(rows, np.arange(h + 1))
    uf = _UnionFind(n)
    for y in range(h - 1):
        i, i_end = row_first[y], row_first[y + 1]
        j, j_end = row_first[y + 1], row_first[y + 2]
        while i < i_end and j < j_end:
            # 8-connectivity: runs touch if their column spans come within 1
            if starts[i] <= ends[j] and starts[j] <= ends[i]:
                uf.union(i, j)
            if ends[i] < ends[j]:
                i += 1
            else:
                j += 1
    return rows, starts, ends, [uf.find(i) for i in range(n)]


def _ink_components(bits: np.ndarray) -> list[tuple[int, int, int, int, int]]:
    """8-connected components as (x0, y0, x1, y1, ink_count), coords inclusive."""
    rows, starts, ends, comp = _ink_runs(bits)
    groups: dict[int, list[int]] = {}
    for idx, root in enumerate(comp):
        groups.setdefault(root, []).append(idx)
    components = []
    for members in groups.values():
        m = np.array(members)
        components.append(
            (
                int(starts[m].min()),
                int(rows[m].min()),
                int(ends[m].max()) - 1,
                int(rows[m].max()),
                int((ends[m] - starts[m]).sum()),
            )
        )
    return components


def _merge_round(
    items: list[tuple[int, int, int, int, int]], gap_threshold: int, page_h: int, page_w: int
) -> list[tuple[int, int, int, int, int]]:
    """One simultaneous merge round: union all box pairs with sub-threshold gaps.

    Boxes grown by (gap_threshold - 1) toward the bottom-right become
    8-connected on a canvas exactly when the whitespace gap between the
    originals is < gap_threshold in both axes, so labeling the painted
    canvas finds every qualifying group in one pass.
    """
    grow = gap_threshold - 1
    canvas = np.zeros((page_h + grow + 1, page_w + grow + 1), dtype=np.uint8)
    for x0, y0, x1, y1, _ in items:
        canvas[y0 : y1 + grow + 1, x0 : x1 + grow + 1] = 1
    rows, starts, ends, comp = _ink_runs(canvas)
    row_first = np.searchsorted(rows, np.arange(canvas.shape[0] + 1))

    def blob_at(y: int, x: int) -> int:
        i = row_first[y] + int(np.searchsorted(starts[row_first[y] : row_first[y + 1]], x, side="right")) - 1
        return comp[i]

    merged: dict[int, tuple[int, int, int, int, int]] = {}
    for x0, y0, x1, y1, count in items:
        label = blob_at(y0, x0)
        if label in merged:
            mx0, my0, mx1, my1, mcount = merged[label]
            merged[label] = (min(mx0, x0), min(my0, y0), max(mx1, x1), max(my1, y1), mcount + count)
        else:
            merged[label] = (x0, y0, x1, y1, count)
    return list(merged.values())


def propose_regions(bin_img: BinaryImage, gap_threshold: int = 4, min_area: int = 24) -> list[Box]:
    """Whitespace-bound candidate boxes, sorted top-to-bottom then left-to-right.

    gap_threshold is the minimum whitespace (background pixels, per axis)
    treated as a boundary; components separated by less than that in both
    axes merge, iterating until stable. Merged regions with fewer than
    min_area ink pixels are dropped.
    """
    if gap_threshold < 1:
        raise ValueError("gap_threshold must be >= 1")
    items = _ink_components(bin_img.bits)
    while True:
        merged = _merge_round(items, gap_threshold, bin_img.height, bin_img.width)
        if len(merged) == len(items):
            items = merged
            break
        items = merged
    kept = [it for it in items if it[4] >= min_area]
    kept.sort(key=lambda it: (it[1], it[0]))
    return [Box(x0, y0, x1 - x0 + 1, y1 - y0 + 1) for x0, y0, x1, y1, _ in kept]


# ---------------------------------------------------------------------------
# Kernel extraction
# ---------------------------------------------------------------------------


def _bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers (area-consistent for 2x)."""
    in_h, in_w = src.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = (1.0 - wx) * src[np.ix_(y0, x0)] + wx * src[np.ix_(y0, x1)]
    bottom = (1.0 - wx) * src[np.ix_(y1, x0)] + wx * src[np.ix_(y1, x1)]
    return (1.0 - wy) * top + wy * bottom


def _fit_size(box_h: int, box_w: int) -> tuple[int, int]:
    """Aspect-preserving size inside 48x32: the limiting side maps exactly,
    the other rounds up."""
    if KERNEL_H * box_w <= KERNEL_W * box_h:  # height limits the fit
        return KERNEL_H, min(KERNEL_W, (box_w * KERNEL_H + box_h - 1) // box_h)
    return min(KERNEL_H, (box_h * KERNEL_W + box_w - 1) // box_w), KERNEL_W


def extract_kernel(img: GrayImage, box: Box, page_id: str = "", label: str | None = None) -> Kernel:
    """Crop a box and fit it into 48x32: aspect-preserving resize plus padding.

    The side that limits the fit maps exactly to the target extent; the other
    side scales with it (rounded up) and is padded symmetrically with the
    crop's background estimate (median of its border pixels). A box already
    at 48x32 is returned as an untouched crop.
    """
    if box.x < 0 or box.y < 0 or box.x + box.w > img.width or box.y + box.h > img.height:
        raise BoxOutOfBounds(f"{box} outside {img.width}x{img.height} image")
    crop = img.pixels[box.y : box.y + box.h, box.x : box.x + box.w]
    if crop.shape == (KERNEL_H, KERNEL_W):
        return Kernel(crop.copy(), box, page_id, label)

    new_h, new_w = _fit_size(box.h, box.w)
    resized = _bilinear_resize(crop, new_h, new_w)

    border = np.concatenate([crop[0, :], crop[-1, :], crop[1:-1, 0], crop[1:-1, -1]])
    background = float(np.median(border))
    out = np.full((KERNEL_H, KERNEL_W), background, dtype=np.float64)
    top = (KERNEL_H - new_h) // 2
    left = (KERNEL_W - new_w) // 2
    out[top : top + new_h, left : left + new_w] = resized
    return Kernel(out, box, page_id, label)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

INDEX_NAME = "kernels.jsonl"


@dataclass
class ManifestEntry:
    kernel_path: str  # relative to the manifest root
    page_id: str
    box: Box | None
    label: str | None


@dataclass
class Manifest:
    root: Path
    entries: list[ManifestEntry]

    def labeled(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.label is not None]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                record = {
                    "kernel_path": e.kernel_path,
                    "page_id": e.page_id,
                    "box": list(e.box.as_tuple()) if e.box else None,
                    "label": e.label,
                }
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_manifest(path: str | Path, root: str | Path | None = None) -> Manifest:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            box = Box(*record["box"]) if record.get("box") else None
            entries.append(
                ManifestEntry(record["kernel_path"], record.get("page_id", ""), box, record.get("label"))
            )
    return Manifest(Path(root) if root else path.parent, entries)


def build_manifest(kernel_dir: str | Path, labels_file: str | Path | None = None) -> Manifest:
    """Join the kernels in a directory with the label store.

    Kernel metadata comes from the extraction index (kernels.jsonl) when
    present; bare directories of PNGs fall back to name order with no box
    information. Unlabeled kernels carry a null label.
    """
    kernel_dir = Path(kernel_dir)
    labels = replay_labels(labels_file) if labels_file else {}
    entries: list[ManifestEntry] = []
    index = kernel_dir / INDEX_NAME
    if index.exists():
        with open(index, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                box = Box(*record["box"]) if record.get("box") else None
                entries.append(
                    ManifestEntry(record["kernel"], record.get("page", ""), box, labels.get(record["kernel"]))
                )
    else:
        for png in sorted(kernel_dir.glob("*.png")):
            entries.append(ManifestEntry(png.name, "", None, labels.get(png.name)))
    return Manifest(kernel_dir, entries)


def match_truth_label(
    box: Box,
    truth_boxes: list[tuple[int, int, int, int]],
    truth_labels: list[str],
    iou_min: float = 0.5,
) -> str:
    """Label a proposed box from generator ground truth.

    The best-overlapping truth box (IoU >= iou_min) decides; a proposal that
    matches nothing is a spurious detection and labels as reject.
    """
    best = iou_min
    label = "reject"
    for tb, tl in zip(truth_boxes, truth_labels):
        score = iou(box, tb)
        if score > best:
            best = score
            label = tl
    return label
