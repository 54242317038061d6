"""Kernel backend parity: the compiled core and the numpy fallback must be
bit-identical, and both must equal plain brute force."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_knn_means, brute_pair_count
from pipegraph._kernels import _kernels_py

try:
    from pipegraph._kernels import _core
except ImportError:
    _core = None

needs_compiled = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


def clouds(rng, kind, n):
    if kind == "blob":
        return rng.normal(0, 0.3, (n, 3))
    if kind == "line":
        t = rng.uniform(0, 2, n)
        return np.stack([t, 0.02 * rng.normal(size=n), 0.02 * rng.normal(size=n)], axis=1)
    return rng.uniform(-1, 1, (n, 3))


class TestFallbackAgainstBruteForce:
    def test_radius_neighbors(self, rng):
        pts = clouds(rng, "uniform", 80)
        indptr, indices = _kernels_py.radius_neighbors(pts, 0.4)
        for i in range(80):
            expected = [
                j for j in range(80)
                if float(((pts[i] - pts[j]) ** 2).sum()) <= 0.4 * 0.4
            ]
            assert indices[indptr[i]:indptr[i + 1]].tolist() == expected

    def test_knn_means(self, rng):
        pts = clouds(rng, "blob", 50)
        np.testing.assert_allclose(
            _kernels_py.knn_mean_dists(pts, 6), brute_knn_means(pts, 6), atol=1e-12
        )

    def test_pairwise_count(self, rng):
        a = clouds(rng, "blob", 40)
        b = clouds(rng, "blob", 30) + 0.2
        assert _kernels_py.pairwise_count_within(a, b, 0.5) == brute_pair_count(a, b, 0.5)

    def test_nearest_neighbor(self, rng):
        a = clouds(rng, "uniform", 25)
        b = clouds(rng, "uniform", 35)
        dists, idx = _kernels_py.nearest_neighbor(a, b)
        for i in range(25):
            all_d = np.linalg.norm(b - a[i], axis=1)
            assert idx[i] == int(np.argmin(all_d))
            assert dists[i] == pytest.approx(float(all_d.min()), abs=1e-12)


@needs_compiled
class TestBackendParity:
    @pytest.mark.parametrize("kind", ["blob", "line", "uniform"])
    @pytest.mark.parametrize("eps", [0.05, 0.2, 0.8])
    def test_radius_neighbors_bit_identical(self, rng, kind, eps):
        pts = clouds(rng, kind, 400)
        a_ptr, a_idx = _core.radius_neighbors(pts, eps)
        b_ptr, b_idx = _kernels_py.radius_neighbors(pts, eps)
        assert np.array_equal(a_ptr, b_ptr)
        assert np.array_equal(a_idx, b_idx)

    def test_knn_bit_identical(self, rng):
        pts = clouds(rng, "blob", 300)
        for k in (1, 4, 16):
            assert np.array_equal(
                _core.knn_mean_dists(pts, k), _kernels_py.knn_mean_dists(pts, k)
            )

    def test_pairwise_bit_identical(self, rng):
        a = clouds(rng, "uniform", 200)
        b = clouds(rng, "uniform", 150)
        for dist in (0.1, 0.5, 2.0):
            assert _core.pairwise_count_within(a, b, dist) == \
                _kernels_py.pairwise_count_within(a, b, dist)

    def test_nearest_bit_identical(self, rng):
        a = clouds(rng, "blob", 200)
        b = clouds(rng, "blob", 170)
        da, ia = _core.nearest_neighbor(a, b)
        db, ib = _kernels_py.nearest_neighbor(a, b)
        assert np.array_equal(da, db)
        assert np.array_equal(ia, ib)

    def test_grid_handles_extreme_coordinates(self, rng):
        # out-of-range grid cells must transparently use the fallback path
        pts = rng.normal(0, 1, (50, 3)) * 1e9
        a = _core.radius_neighbors(pts, 0.5)
        b = _kernels_py.radius_neighbors(pts, 0.5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_force_numpy_env_selects_fallback():
    code = "import pipegraph; print(pipegraph.KERNEL_BACKEND)"
    env = dict(os.environ, PIPEGRAPH_FORCE_NUMPY="1",
               PYTHONPATH=str(Path(__file__).resolve().parents[1] / "src"))
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"
