"""HOG descriptor with L2-hys block normalization, and PCA over those features.

The descriptor uses unsigned orientations over [0, 180) with nine bins whose
centers sit at 10, 30, ..., 170 degrees; orientation is measured so that a
vertical step edge (horizontal gradient) lands in the 90-degree bin. Votes
split bilinearly between the two nearest bin centers, circularly.

PCA fits the sample covariance with the 1/(n-1) convention and diagonalizes
it with cyclic Jacobi rotations; eigenvectors are sign-fixed so each row's
largest-magnitude entry is positive, which makes fitted models reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionError, DimensionMismatch, InsufficientData
from .segmentation import KERNEL_H, KERNEL_W, Kernel

__all__ = [
    "HogParams",
    "PcaModel",
    "hog",
    "l2hys",
    "pca_fit",
    "pca_transform",
    "hog_length",
]


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 8
    bins: int = 9
    block: int = 2  # cells per block side
    block_stride: int = 1  # in cells
    clip: float = 0.2
    eps: float = 1e-5


def hog_length(params: HogParams = HogParams()) -> int:
    cells_y = KERNEL_H // params.cell_size
    cells_x = KERNEL_W // params.cell_size
    blocks_y = (cells_y - params.block) // params.block_stride + 1
    blocks_x = (cells_x - params.block) // params.block_stride + 1
    return blocks_y * blocks_x * params.block * params.block * params.bins


def l2hys(block: np.ndarray, clip: float = 0.2, eps: float = 1e-5) -> np.ndarray:
    """L2-normalize, clip, renormalize. A zero block stays zero (eps guard)."""
    v = np.asarray(block, dtype=np.float64)
    v = v / np.sqrt(np.sum(v * v) + eps * eps)
    v = np.minimum(v, clip)
    return v / np.sqrt(np.sum(v * v) + eps * eps)


def hog(kernel: Kernel | np.ndarray, params: HogParams = HogParams()) -> np.ndarray:
    """Histogram-of-oriented-gradients descriptor of a 48x32 kernel.

    Centered [-1, 0, 1] gradient filters with replicated edges, per-cell
    orientation histograms with bilinear angular vote splitting, and L2-hys
    per 2x2-cell block; blocks concatenate row-major. Length 540 with the
    default parameters.
    """
    pixels = kernel.pixels if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)
    if pixels.shape != (KERNEL_H, KERNEL_W):
        raise DimensionError(f"hog expects {KERNEL_H}x{KERNEL_W}, got {pixels.shape}")
    if KERNEL_H % params.cell_size or KERNEL_W % params.cell_size:
        raise DimensionError("kernel dimensions must divide the cell size")

    padded = np.pad(pixels, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 1.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 1.0
    mag = np.hypot(gx, gy)
    # 0 deg = vertical gradient (horizontal edge); 90 deg = vertical edge
    ang = np.degrees(np.arctan2(gx, gy)) % 180.0

    bin_width = 180.0 / params.bins
    pos = ang / bin_width - 0.5
    low = np.floor(pos).astype(np.int64)
    frac = pos - low
    low_bin = low % params.bins
    high_bin = (low + 1) % params.bins

    cells_y = KERNEL_H // params.cell_size
    cells_x = KERNEL_W // params.cell_size
    yy, xx = np.mgrid[0:KERNEL_H, 0:KERNEL_W]
    cy = yy // params.cell_size
    cx = xx // params.cell_size
    hist = np.zeros((cells_y, cells_x, params.bins))
    np.add.at(hist, (cy, cx, low_bin), mag * (1.0 - frac))
    np.add.at(hist, (cy, cx, high_bin), mag * frac)

    blocks_y = (cells_y - params.block) // params.block_stride + 1
    blocks_x = (cells_x - params.block) // params.block_stride + 1
    out = []
    for by in range(blocks_y):
        for bx in range(blocks_x):
            y0 = by * params.block_stride
            x0 = bx * params.block_stride
            block = hist[y0 : y0 + params.block, x0 : x0 + params.block].ravel()
            out.append(l2hys(block, params.clip, params.eps))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@njit(cache=True)
def _jacobi_rotate(a: np.ndarray, v: np.ndarray, tol: float, scale_floor: float, max_sweeps: int) -> int:
    """Cyclic Jacobi sweeps over a symmetric matrix, in place.

    Rotations below a per-element skip threshold are skipped; a full sweep
    with no rotation certifies the off-diagonal Frobenius norm is under tol.
    """
    d = a.shape[0]
    npairs = d * (d - 1) / 2.0
    skip = tol / np.sqrt(2.0 * npairs) if npairs > 0 else tol
    sweeps = 0
    for _ in range(max_sweeps):
        off2 = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off2 += 2.0 * a[i, j] * a[i, j]
        if np.sqrt(off2) < max(tol, scale_floor):
            break
        sweeps += 1
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        if not rotated:
            break
    return sweeps


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), unsorted. The iteration
    stops when the off-diagonal Frobenius norm falls below tol (or below a
    machine-precision floor relative to the matrix scale).
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"need a square matrix, got {a.shape}")
    d = a.shape[0]
    v = np.eye(d)
    if d > 1:
        scale_floor = 1e-15 * float(np.linalg.norm(a)) * d
        _jacobi_rotate(a, v, tol, scale_floor, max_sweeps)
    return np.diag(a).copy(), v


@dataclass
class PcaModel:
    """Mean and top-k eigenvector basis of the feature covariance.

    components rows are orthonormal eigenvectors (descending eigenvalue
    order); eigenvalues holds the full descending spectrum with negative
    round-off clamped to zero.
    """

    mean: np.ndarray
    components: np.ndarray  # (k, d)
    eigenvalues: np.ndarray  # (d,)

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_fit(X: np.ndarray, k: int | None = None, variance: float = 0.95) -> PcaModel:
    """Fit PCA on rows of X using the 1/(n-1) sample covariance.

    Retains an explicit k when given, otherwise the smallest k whose
    eigenvalue mass reaches the requested variance fraction (at least 1).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"need a 2-D sample matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise InsufficientData(f"PCA needs at least 2 samples, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    eigvals = np.where(eigvals < 0.0, 0.0, eigvals)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    rows = eigvecs[:, order].T
    # fix sign: largest-magnitude entry of every eigenvector is positive
    flips = np.sign(rows[np.arange(d), np.argmax(np.abs(rows), axis=1)])
    flips[flips == 0] = 1.0
    rows = rows * flips[:, None]

    if k is None:
        total = eigvals.sum()
        if total <= 0.0:
            k = 1
        else:
            k = int(np.searchsorted(np.cumsum(eigvals) / total, variance) + 1)
            k = min(k, d)
    if not 1 <= k <= d:
        raise DimensionMismatch(f"k must be in [1, {d}], got {k}")
    return PcaModel(mean, rows[:k], eigvals)


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project centered vectors onto the retained eigenvector basis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise DimensionMismatch(f"expected dim {model.mean.shape[0]}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T
