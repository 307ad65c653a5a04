"""Image representation, file I/O, binarization, and the synthetic page generator.

Pages are grayscale rasters with intensities in [0, 1]; ink is dark
(estampage convention: dark text on light ground). The synthetic generator
stands in for an unavailable inscription corpus: it renders stroke-blob
glyphs separated by whitespace gaps, plus optional speckle distractors, and
records tight ground-truth boxes for every item.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateImageWarning, FormatError, PlacementError

__all__ = [
    "GrayImage",
    "BinaryImage",
    "SynthConfig",
    "SynthPage",
    "load_image",
    "save_image",
    "otsu_threshold",
    "binarize",
    "synth_page",
    "write_corpus",
    "read_truth",
]


@dataclass
class GrayImage:
    """2-D intensity raster, row-major float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise FormatError(f"expected 2-D pixel array, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise FormatError("intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class BinaryImage:
    """2-D ink mask: 1 = ink, 0 = background."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2:
            raise FormatError(f"expected 2-D bit array, got shape {self.bits.shape}")
        if self.bits.size and self.bits.max() > 1:
            raise FormatError("binary image values must be 0 or 1")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


# ---------------------------------------------------------------------------
# File I/O: PGM (P5, 8-bit) and PNG (8-bit grayscale)
# ---------------------------------------------------------------------------


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed, followed by one whitespace byte then raster.
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: truncated or malformed PGM header")
        fields.append(int(token))
    pos += 1  # single whitespace separating header from raster
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {width * height} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _write_pgm(path: Path, levels: np.ndarray) -> None:
    header = f"P5\n{levels.shape[1]} {levels.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + levels.astype(np.uint8).tobytes())


def load_image(path: str | Path) -> GrayImage:
    """Load a PGM (P5) or 8-bit grayscale PNG, scaling levels to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        levels = _read_pgm(path)
    elif suffix == ".png":
        with Image.open(path) as im:
            if im.mode != "L":
                raise FormatError(f"{path}: PNG mode {im.mode!r}, need 8-bit grayscale")
            levels = np.asarray(im, dtype=np.uint8)
    else:
        raise FormatError(f"{path}: unsupported image format {suffix!r}")
    return GrayImage(levels.astype(np.float64) / 255.0)


def save_image(img: GrayImage, path: str | Path) -> None:
    """Write a grayscale image as PGM or PNG, quantizing to 8 bits."""
    path = Path(path)
    levels = np.rint(img.pixels * 255.0).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, levels)
    elif suffix == ".png":
        Image.fromarray(levels, mode="L").save(path)
    else:
        raise FormatError(f"{path}: unsupported image format {suffix!r}")


# ---------------------------------------------------------------------------
# Binarization
# ---------------------------------------------------------------------------


def otsu_threshold(img: GrayImage) -> float | None:
    """Global threshold maximizing between-class variance on the 256-bin histogram.

    Returns the threshold intensity, placed halfway between the optimal level
    split, or None if the histogram is degenerate (a single occupied bin).
    Ties between equally good splits resolve to the lowest level.
    """
    levels = np.rint(img.pixels * 255.0).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    bin_values = np.arange(256, dtype=np.float64)
    weighted = hist * bin_values
    w0 = np.cumsum(hist)[:-1]  # class 0: levels <= k, for k = 0..254
    w1 = total - w0
    sum0 = np.cumsum(weighted)[:-1]
    mu0 = np.divide(sum0, w0, out=np.zeros_like(sum0), where=w0 > 0)
    mu1 = np.divide(weighted.sum() - sum0, w1, out=np.zeros_like(sum0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    if not np.any(between > 0.0):
        return None
    k = int(np.argmax(between))
    return (k + 0.5) / 255.0


def binarize(img: GrayImage) -> BinaryImage:
    """Threshold a page with Otsu's method; pixels darker than t become ink.

    A degenerate (single-level) image yields an all-background mask and a
    DegenerateImageWarning.
    """
    t = otsu_threshold(img)
    if t is None:
        warnings.warn(
            "all pixels equal; returning all-background mask", DegenerateImageWarning
        )
        return BinaryImage(np.zeros_like(img.pixels, dtype=np.uint8))
    return BinaryImage((img.pixels < t).astype(np.uint8))


# ---------------------------------------------------------------------------
# Synthetic degraded-page generator
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Knobs for the synthetic corpus generator.

    Glyphs are chained random quadratic strokes; rejects are speckle blobs
    drawn by a pixel random walk. Items are laid out with whitespace gaps of
    at least ``gap_min`` pixels in both axes.
    """

    width: int = 640
    height: int = 480
    glyphs: int = 16
    rejects: int = 4
    stroke_thickness: int = 3
    noise_sigma: float = 0.05
    gap_min: int = 8
    background: float = 0.92
    ink_range: tuple[float, float] = (0.05, 0.25)
    glyph_w: tuple[int, int] = (16, 30)
    glyph_h: tuple[int, int] = (18, 40)


@dataclass
class SynthPage:
    image: GrayImage
    truth_boxes: list[tuple[int, int, int, int]] = field(default_factory=list)
    truth_labels: list[str] = field(default_factory=list)
    seed: int = 0


def _layout_cells(cfg: SynthConfig, sizes: list[tuple[int, int]], rng: np.random.Generator) -> list[tuple[int, int]]:
    """Place item cells left-to-right, top-to-bottom with gaps >= gap_min."""
    margin = cfg.gap_min
    jitter_max = cfg.gap_min // 2
    positions: list[tuple[int, int]] = []
    x = margin
    y = margin
    row_bottom = y
    for w, h in sizes:
        if x + w + margin > cfg.width:
            x = margin
            y = row_bottom + cfg.gap_min
            row_bottom = y
        jitter = int(rng.integers(0, jitter_max + 1)) if jitter_max > 0 else 0
        top = y + jitter
        if top + h + margin > cfg.height or x + w + margin > cfg.width:
            raise PlacementError(
                f"cannot place {len(sizes)} items of requested size on a "
                f"{cfg.width}x{cfg.height} page with gap_min {cfg.gap_min}"
            )
        positions.append((x, top))
        row_bottom = max(row_bottom, top + h)
        gap = cfg.gap_min + int(rng.integers(0, cfg.gap_min + 1))
        x += w + gap
    return positions


def _stamp_disk(page: np.ndarray, cx: int, cy: int, radius: float, value: float) -> None:
    r = int(np.ceil(radius))
    y0, y1 = max(cy - r, 0), min(cy + r + 1, page.shape[0])
    x0, x1 = max(cx - r, 0), min(cx + r + 1, page.shape[1])
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    region = page[y0:y1, x0:x1]
    region[mask] = np.minimum(region[mask], value)


def _draw_glyph(page: np.ndarray, cell: tuple[int, int, int, int], cfg: SynthConfig, rng: np.random.Generator) -> None:
    """Chained quadratic strokes stamped as overlapping disks (one component)."""
    x, y, w, h = cell
    radius = max(cfg.stroke_thickness / 2.0, 0.5)
    inset = int(np.ceil(radius))
    lo = np.array([x + inset, y + inset], dtype=np.float64)
    hi = np.array([x + w - 1 - inset, y + h - 1 - inset], dtype=np.float64)
    hi = np.maximum(hi, lo)
    ink = rng.uniform(*cfg.ink_range)
    point = rng.uniform(lo, hi)
    for _ in range(int(rng.integers(2, 5))):
        ctrl = rng.uniform(lo, hi)
        end = rng.uniform(lo, hi)
        approx_len = np.linalg.norm(ctrl - point) + np.linalg.norm(end - ctrl)
        n = max(int(np.ceil(approx_len / 0.5)), 2)
        ts = np.linspace(0.0, 1.0, n)
        for t in ts:
            p = (1 - t) ** 2 * point + 2 * (1 - t) * t * ctrl + t * t * end
            _stamp_disk(page, int(round(p[0])), int(round(p[1])), radius, ink)
        point = end


def _draw_speckle(page: np.ndarray, cell: tuple[int, int, int, int], cfg: SynthConfig, rng: np.random.Generator) -> None:
    """Unit-step random-walk scribble: connected, but texturally unlike a stroke."""
    x, y, w, h = cell
    ink = rng.uniform(*cfg.ink_range)
    px = x + w // 2
    py = y + h // 2
    steps = max(w * h // 3, 30)
    for _ in range(steps):
        page[py, px] = min(page[py, px], ink)
        dx, dy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
        px = min(max(px + dx, x), x + w - 1)
        py = min(max(py + dy, y), y + h - 1)


def _tight_box(before: np.ndarray, after: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(after < before)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def synth_page(cfg: SynthConfig, seed: int) -> SynthPage:
    """Render one synthetic page; identical (cfg, seed) yields identical output."""
    if cfg.glyphs < 0 or cfg.rejects < 0:
        raise ValueError("item counts must be non-negative")
    if cfg.gap_min < 1:
        raise ValueError("gap_min must be at least 1 pixel")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    page = np.full((cfg.height, cfg.width), cfg.background, dtype=np.float64)

    kinds = ["character"] * cfg.glyphs + ["reject"] * cfg.rejects
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    sizes = [
        (int(rng.integers(cfg.glyph_w[0], cfg.glyph_w[1] + 1)),
         int(rng.integers(cfg.glyph_h[0], cfg.glyph_h[1] + 1)))
        for _ in kinds
    ]
    positions = _layout_cells(cfg, sizes, rng)

    boxes: list[tuple[int, int, int, int]] = []
    labels: list[str] = []
    for kind, (w, h), (x, y) in zip(kinds, sizes, positions):
        before = page.copy()
        if kind == "character":
            _draw_glyph(page, (x, y, w, h), cfg, rng)
        else:
            _draw_speckle(page, (x, y, w, h), cfg, rng)
        boxes.append(_tight_box(before, page))
        labels.append(kind)

    if cfg.noise_sigma > 0:
        page = page + rng.normal(0.0, cfg.noise_sigma, size=page.shape)
    page = np.clip(page, 0.0, 1.0)
    return SynthPage(GrayImage(page), boxes, labels, seed)


# ---------------------------------------------------------------------------
# Corpus files: page_NNNN.png + page_NNNN.truth.json
# ---------------------------------------------------------------------------


def page_seed(base_seed: int, index: int) -> int:
    """Stable 64-bit per-page seed derived from (base seed, page index)."""
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def write_corpus(out_dir: str | Path, cfg: SynthConfig, pages: int, base_seed: int) -> list[Path]:
    """Generate `pages` synthetic pages under out_dir; returns the PNG paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(pages):
        sp = synth_page(cfg, page_seed(base_seed, i))
        png = out_dir / f"page_{i:04d}.png"
        save_image(sp.image, png)
        truth = {"boxes": [list(b) for b in sp.truth_boxes], "labels": sp.truth_labels}
        (out_dir / f"page_{i:04d}.truth.json").write_text(
            json.dumps(truth, separators=(",", ":")) + "\n"
        )
        paths.append(png)
    return paths


def read_truth(path: str | Path) -> tuple[list[tuple[int, int, int, int]], list[str]]:
    data = json.loads(Path(path).read_text())
    boxes = [tuple(int(v) for v in b) for b in data["boxes"]]
    return boxes, list(data["labels"])
