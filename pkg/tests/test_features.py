import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphspot.errors import DimensionError, DimensionMismatch, InsufficientData
from glyphspot.features import (
    HogParams,
    PcaModel,
    hog,
    hog_length,
    jacobi_eigh,
    l2hys,
    pca_fit,
    pca_transform,
)
from glyphspot.segmentation import KERNEL_H, KERNEL_W


# --- independent oracles ----------------------------------------------------


def naive_hog(pixels, cell=8, bins=9, block=2, stride=1, clip=0.2, eps=1e-5):
    """Direct per-pixel histogram accumulation with plain Python loops."""
    h, w = len(pixels), len(pixels[0])
    hist = [[[0.0] * bins for _ in range(w // cell)] for _ in range(h // cell)]
    for y in range(h):
        for x in range(w):
            gx = pixels[y][min(x + 1, w - 1)] - pixels[y][max(x - 1, 0)]
            gy = pixels[min(y + 1, h - 1)][x] - pixels[max(y - 1, 0)][x]
            m = math.hypot(gx, gy)
            theta = math.degrees(math.atan2(gx, gy)) % 180.0
            pos = theta / (180.0 / bins) - 0.5
            lo = math.floor(pos)
            f = pos - lo
            hist[y // cell][x // cell][lo % bins] += m * (1.0 - f)
            hist[y // cell][x // cell][(lo + 1) % bins] += m * f
    desc = []
    for by in range((h // cell - block) // stride + 1):
        for bx in range((w // cell - block) // stride + 1):
            vals = []
            for dy in range(block):
                for dx in range(block):
                    vals.extend(hist[by * stride + dy][bx * stride + dx])
            norm = math.sqrt(sum(v * v for v in vals) + eps * eps)
            vals = [min(v / norm, clip) for v in vals]
            norm = math.sqrt(sum(v * v for v in vals) + eps * eps)
            desc.extend(v / norm for v in vals)
    return np.array(desc)


def power_iteration_eigs(matrix, count, iters=20000):
    """Dominant eigenvalues by power iteration with deflation."""
    a = np.array(matrix, dtype=np.float64)
    rng = np.random.default_rng(123)
    values = []
    for _ in range(count):
        v = rng.normal(size=a.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = a @ v
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                lam = 0.0
                break
            v = w / norm
            new_lam = v @ a @ v
            if abs(new_lam - lam) < 1e-14 * max(1.0, abs(new_lam)):
                lam = new_lam
                break
            lam = new_lam
        values.append(lam)
        a = a - lam * np.outer(v, v)
    return values


def random_kernel(seed):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(KERNEL_H, KERNEL_W))


# --- L2-hys -----------------------------------------------------------------


class TestL2Hys:
    def test_zero_block(self):
        np.testing.assert_array_equal(l2hys(np.zeros(8)), np.zeros(8))

    def test_single_spike_fixpoint(self):
        out = l2hys(np.array([1.0, 0.0, 0.0, 0.0]), clip=0.2)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0, 0.0], atol=1e-6)

    def test_three_four_hand_arithmetic(self):
        out = l2hys(np.array([3.0, 4.0]), clip=0.5, eps=1e-5)
        np.testing.assert_allclose(out, [0.7071, 0.7071], atol=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=36))
    def test_output_bounded(self, values):
        out = l2hys(np.array(values))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.linalg.norm(out) <= 1.0 + 1e-12


# --- HOG --------------------------------------------------------------------


class TestHog:
    def test_length_540(self):
        assert hog_length() == 540
        assert hog(random_kernel(0)).shape == (540,)

    def test_constant_kernel_zero_vector(self):
        np.testing.assert_array_equal(hog(np.full((KERNEL_H, KERNEL_W), 0.37)), np.zeros(540))

    def test_additive_offset_invariance_exact(self):
        # dyadic intensities keep the float additions exact, so the shifted
        # gradients cancel bit-for-bit
        rng = np.random.default_rng(1)
        base = rng.integers(0, 129, size=(KERNEL_H, KERNEL_W)) / 256.0
        np.testing.assert_array_equal(hog(base), hog(base + 0.25))

    def test_values_in_unit_interval(self):
        d = hog(random_kernel(2))
        assert d.min() >= 0.0 and d.max() <= 1.0

    def test_vertical_step_edge_mass_in_90_degree_bin(self):
        px = np.full((KERNEL_H, KERNEL_W), 0.3)
        px[:, 16:] = 0.7
        desc = hog(px)
        by_bin = desc.reshape(-1, 9)
        active_bins = np.nonzero(by_bin.sum(axis=0))[0]
        np.testing.assert_array_equal(active_bins, [4])  # bin centered at 90 deg
        # only blocks touching cell columns 1 and 2 (edge at column 16) carry mass
        blocks = desc.reshape(5, 3, 4, 9)
        cellwise = blocks.sum(axis=(0, 3))  # per block column, per cell
        assert cellwise.sum() > 0
        ink_cells = np.nonzero(blocks.sum(axis=(0, 2, 3)))[0]
        np.testing.assert_array_equal(ink_cells, [0, 1, 2])

    @pytest.mark.parametrize("seed", [3, 4, 5])
    def test_matches_naive_per_pixel_oracle(self, seed):
        px = random_kernel(seed)
        np.testing.assert_allclose(hog(px), naive_hog(px.tolist()), atol=1e-6)

    def test_wrong_shape_rejected(self):
        with pytest.raises(DimensionError):
            hog(np.zeros((32, 48)))


# --- Jacobi & PCA -----------------------------------------------------------


class TestJacobi:
    def test_random_symmetric_residual(self):
        rng = np.random.default_rng(6)
        m = rng.normal(size=(8, 8))
        sym = (m + m.T) / 2.0
        vals, vecs = jacobi_eigh(sym)
        assert np.max(np.abs(sym @ vecs - vecs * vals)) < 1e-10
        assert np.max(np.abs(vecs.T @ vecs - np.eye(8))) < 1e-10

    def test_one_by_one(self):
        vals, vecs = jacobi_eigh(np.array([[3.5]]))
        assert vals[0] == 3.5 and vecs[0, 0] == 1.0


class TestPcaFit:
    def test_collinear_three_points(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        m = pca_fit(X, k=2)
        np.testing.assert_allclose(sorted(m.eigenvalues, reverse=True), [2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(m.components[0]), [np.sqrt(0.5)] * 2, atol=1e-12)
        assert m.components[0][0] > 0 and m.components[0][1] > 0  # sign fixed

    def test_identical_rows_k_floor(self):
        X = np.tile([2.0, 5.0, 1.0], (6, 1))
        m = pca_fit(X)
        assert m.k == 1
        np.testing.assert_allclose(m.eigenvalues, 0.0, atol=1e-15)

    def test_random_20x5_against_power_iteration_oracle(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(20, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.2])
        m = pca_fit(X, k=5)
        cov = (X - X.mean(0)).T @ (X - X.mean(0)) / (len(X) - 1)
        oracle = power_iteration_eigs(cov, 5)
        np.testing.assert_allclose(m.eigenvalues, sorted(oracle, reverse=True), atol=1e-8)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(5), atol=1e-8)

    def test_transformed_variance_equals_eigenvalues(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(20, 5))
        m = pca_fit(X, k=5)
        Y = pca_transform(m, X)
        var = ((Y - Y.mean(0)) ** 2).sum(0) / (len(X) - 1)
        np.testing.assert_allclose(var, m.eigenvalues[:5], atol=1e-8)

    def test_reconstruction_error_nonincreasing_zero_at_full_rank(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(30, 6))
        x = X[0]
        errors = []
        for k in range(1, 7):
            m = pca_fit(X, k=k)
            recon = m.mean + pca_transform(m, x) @ m.components
            errors.append(np.linalg.norm(x - recon))
        assert all(a >= b - 1e-10 for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-8

    def test_variance_fraction_selection(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(50, 4)) * np.array([10.0, 0.1, 0.1, 0.1])
        assert pca_fit(X, variance=0.95).k == 1
        assert pca_fit(X, variance=1.0).k == 4

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            pca_fit(np.ones((1, 3)))


class TestPcaTransform:
    def test_mean_maps_to_zero(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(10, 4))
        m = pca_fit(X, k=3)
        np.testing.assert_allclose(pca_transform(m, m.mean), np.zeros(3), atol=1e-15)

    def test_identity_basis(self):
        m = PcaModel(np.zeros(3), np.eye(3), np.ones(3))
        x = np.array([0.3, -1.2, 4.5])
        np.testing.assert_array_equal(pca_transform(m, x), x)

    def test_collinear_projection_value(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        m = pca_fit(X, k=1)
        y = pca_transform(m, np.array([4.0, 4.0]))
        np.testing.assert_allclose(y, [2.0 * np.sqrt(2.0)], atol=1e-10)

    def test_affine_property(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(12, 6))
        m = pca_fit(X, k=4)
        a, b = rng.normal(size=6), rng.normal(size=6)
        for alpha in (0.0, 0.25, 0.8, 1.0):
            mix = pca_transform(m, alpha * a + (1 - alpha) * b)
            split = alpha * pca_transform(m, a) + (1 - alpha) * pca_transform(m, b)
            np.testing.assert_allclose(mix, split, atol=1e-10)

    def test_dimension_mismatch(self):
        m = PcaModel(np.zeros(3), np.eye(3), np.ones(3))
        with pytest.raises(DimensionMismatch):
            pca_transform(m, np.zeros(4))
