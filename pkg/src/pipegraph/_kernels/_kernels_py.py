"""Pure-numpy implementations of the hot distance kernels.

These are the fallback backend selected at import time when the compiled
extension is unavailable. Semantics (including floating-point evaluation
order) match ``_core.pyx`` exactly: squared distances are accumulated
component-wise, neighbor rows are ascending, k-NN distance sums run over
the ascending-sorted values. Tests assert bit-identical results between
the two backends.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

# Cap on scratch matrix size for chunked brute-force passes (~32 MB of f64).
_CHUNK_BUDGET = 4_000_000


def _chunk_rows(n_rows: int, n_cols: int) -> int:
    if n_cols <= 0:
        return n_rows
    return max(1, min(n_rows, _CHUNK_BUDGET // max(n_cols, 1)))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) squared distances, accumulated dx^2 + dy^2 + dz^2."""
    d2 = np.subtract.outer(a[:, 0], b[:, 0]) ** 2
    d2 += np.subtract.outer(a[:, 1], b[:, 1]) ** 2
    d2 += np.subtract.outer(a[:, 2], b[:, 2]) ** 2
    return d2


def radius_neighbors(points: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """CSR eps-neighborhoods (d <= eps, self included), row indices ascending.

    Returns (indptr, indices) with indptr of length n + 1.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    if n == 0:
        return indptr, np.zeros(0, dtype=np.int64)
    eps2 = eps * eps
    chunks = []
    step = _chunk_rows(n, n)
    for start in range(0, n, step):
        stop = min(start + step, n)
        mask = _sq_dists(pts[start:stop], pts) <= eps2
        indptr[start + 1 : stop + 1] = mask.sum(axis=1)
        chunks.append(np.nonzero(mask)[1].astype(np.int64))
    np.cumsum(indptr, out=indptr)
    return indptr, np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def pairwise_count_within(a: np.ndarray, b: np.ndarray, dist: float) -> int:
    """Number of (i, j) pairs with |a_i - b_j| strictly below dist."""
    aa = np.ascontiguousarray(a, dtype=np.float64)
    bb = np.ascontiguousarray(b, dtype=np.float64)
    if aa.shape[0] == 0 or bb.shape[0] == 0:
        return 0
    thr = dist * dist
    total = 0
    step = _chunk_rows(aa.shape[0], bb.shape[0])
    for start in range(0, aa.shape[0], step):
        stop = min(start + step, aa.shape[0])
        total += int((_sq_dists(aa[start:stop], bb) < thr).sum())
    return total


def knn_mean_dists(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its k nearest other points.

    Requires len(points) > k. The k smallest squared distances are sorted
    ascending before the sqrt-sum so the accumulation order is fixed.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    out = np.empty(n, dtype=np.float64)
    step = _chunk_rows(n, n)
    for start in range(0, n, step):
        stop = min(start + step, n)
        d2 = _sq_dists(pts[start:stop], pts)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        smallest = np.partition(d2, k - 1, axis=1)[:, :k]
        smallest.sort(axis=1)
        out[start:stop] = np.cumsum(np.sqrt(smallest), axis=1)[:, -1] / k
    return out


def nearest_neighbor(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance to and index of each a-point's nearest b-point (first index on ties)."""
    aa = np.ascontiguousarray(a, dtype=np.float64)
    bb = np.ascontiguousarray(b, dtype=np.float64)
    n = aa.shape[0]
    dists = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    if n == 0:
        return dists, idx
    if bb.shape[0] == 0:
        raise ValueError("nearest_neighbor: empty reference cloud")
    step = _chunk_rows(n, bb.shape[0])
    for start in range(0, n, step):
        stop = min(start + step, n)
        d2 = _sq_dists(aa[start:stop], bb)
        best = np.argmin(d2, axis=1)
        idx[start:stop] = best
        dists[start:stop] = np.sqrt(d2[np.arange(stop - start), best])
    return dists, idx
