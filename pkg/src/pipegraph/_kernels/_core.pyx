# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled distance kernels.

Grid-accelerated eps-neighborhoods plus brute-force pair kernels. Results
are bit-identical to ``_kernels_py`` (same comparison thresholds, same
accumulation order); only the speed differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt
from libc.stdlib cimport qsort

cnp.import_array()

BACKEND_NAME = "compiled"

# Packed 21-bit grid coordinate fields; cells beyond this fall back to the
# numpy path (absurd for metric scenes, but stay correct regardless).
_FIELD_OFF = 2 ** 20
_FIELD_LIMIT = _FIELD_OFF - 2
_FIELD_LO = 2 ** 21  # multiplier for the middle field
_FIELD_HI = 2 ** 42  # multiplier for the leading field


cdef int _cmp_int64(const void* pa, const void* pb) noexcept nogil:
    cdef long long va = (<const long long*> pa)[0]
    cdef long long vb = (<const long long*> pb)[0]
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def radius_neighbors(points, double eps):
    """CSR eps-neighborhoods (d <= eps, self included), row indices ascending."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    if n == 0:
        return indptr_arr, np.zeros(0, dtype=np.int64)

    cells = np.floor(pts / eps)
    if not np.isfinite(cells).all() or np.abs(cells).max() >= _FIELD_LIMIT:
        from . import _kernels_py
        return _kernels_py.radius_neighbors(pts, eps)
    cells_i = cells.astype(np.int64)
    keys_arr = (
        (cells_i[:, 0] + _FIELD_OFF) * _FIELD_HI
        + (cells_i[:, 1] + _FIELD_OFF) * _FIELD_LO
        + (cells_i[:, 2] + _FIELD_OFF)
    )
    order_arr = np.argsort(keys_arr, kind="stable").astype(np.int64)
    sorted_keys = keys_arr[order_arr]

    steps = np.array([-1, 0, 1], dtype=np.int64)
    deltas = (
        steps[:, None, None] * _FIELD_HI
        + steps[None, :, None] * _FIELD_LO
        + steps[None, None, :]
    ).ravel()
    nbr_keys = keys_arr[:, None] + deltas[None, :]
    lo_arr = np.searchsorted(sorted_keys, nbr_keys, side="left").astype(np.int64)
    hi_arr = np.searchsorted(sorted_keys, nbr_keys, side="right").astype(np.int64)

    cdef double[:, ::1] p = pts
    cdef long long[::1] order = order_arr
    cdef long long[:, ::1] lo = lo_arr
    cdef long long[:, ::1] hi = hi_arr
    cdef long long[::1] indptr = indptr_arr
    cdef double eps2 = eps * eps
    cdef Py_ssize_t i, c, t, j
    cdef double dx, dy, dz, d2
    cdef long long cnt

    with nogil:
        for i in range(n):
            cnt = 0
            for c in range(27):
                for t in range(lo[i, c], hi[i, c]):
                    j = order[t]
                    dx = p[i, 0] - p[j, 0]
                    dy = p[i, 1] - p[j, 1]
                    dz = p[i, 2] - p[j, 2]
                    d2 = dx * dx + dy * dy
                    d2 = d2 + dz * dz
                    if d2 <= eps2:
                        cnt += 1
            indptr[i + 1] = indptr[i] + cnt

    indices_arr = np.empty(indptr_arr[n], dtype=np.int64)
    cdef long long[::1] indices = indices_arr
    cdef long long pos
    with nogil:
        for i in range(n):
            pos = indptr[i]
            for c in range(27):
                for t in range(lo[i, c], hi[i, c]):
                    j = order[t]
                    dx = p[i, 0] - p[j, 0]
                    dy = p[i, 1] - p[j, 1]
                    dz = p[i, 2] - p[j, 2]
                    d2 = dx * dx + dy * dy
                    d2 = d2 + dz * dz
                    if d2 <= eps2:
                        indices[pos] = j
                        pos += 1
            if indptr[i + 1] > indptr[i]:
                qsort(
                    &indices[indptr[i]],
                    <size_t> (indptr[i + 1] - indptr[i]),
                    sizeof(long long),
                    _cmp_int64,
                )
    return indptr_arr, indices_arr


def pairwise_count_within(a, b, double dist):
    """Number of (i, j) pairs with |a_i - b_j| strictly below dist."""
    aa = np.ascontiguousarray(a, dtype=np.float64)
    bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] pa = aa.reshape(-1, 3)
    cdef double[:, ::1] pb = bb.reshape(-1, 3)
    cdef Py_ssize_t n = pa.shape[0], m = pb.shape[0]
    cdef double thr = dist * dist
    cdef long long count = 0
    cdef Py_ssize_t i, j
    cdef double dx, dy, dz, d2
    with nogil:
        for i in range(n):
            for j in range(m):
                dx = pa[i, 0] - pb[j, 0]
                dy = pa[i, 1] - pb[j, 1]
                dz = pa[i, 2] - pb[j, 2]
                d2 = dx * dx + dy * dy
                d2 = d2 + dz * dz
                if d2 < thr:
                    count += 1
    return int(count)


def knn_mean_dists(points, int k):
    """Mean distance from each point to its k nearest other points."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] p = pts.reshape(-1, 3)
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    best_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, t, filled
    cdef double dx, dy, dz, d2, s
    with nogil:
        for i in range(n):
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                dx = p[i, 0] - p[j, 0]
                dy = p[i, 1] - p[j, 1]
                dz = p[i, 2] - p[j, 2]
                d2 = dx * dx + dy * dy
                d2 = d2 + dz * dz
                if filled < k:
                    # insertion keeps best[0..filled) ascending
                    t = filled
                    while t > 0 and best[t - 1] > d2:
                        best[t] = best[t - 1]
                        t -= 1
                    best[t] = d2
                    filled += 1
                elif d2 < best[k - 1]:
                    t = k - 1
                    while t > 0 and best[t - 1] > d2:
                        best[t] = best[t - 1]
                        t -= 1
                    best[t] = d2
            s = 0.0
            for t in range(k):
                s = s + sqrt(best[t])
            out[i] = s / k
    return out_arr


def nearest_neighbor(a, b):
    """Distance to and index of each a-point's nearest b-point (first index on ties)."""
    aa = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 3)
    bb = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] pa = aa
    cdef double[:, ::1] pb = bb
    cdef Py_ssize_t n = pa.shape[0], m = pb.shape[0]
    dists_arr = np.empty(n, dtype=np.float64)
    idx_arr = np.empty(n, dtype=np.int64)
    if n == 0:
        return dists_arr, idx_arr
    if m == 0:
        raise ValueError("nearest_neighbor: empty reference cloud")
    cdef double[::1] dists = dists_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t i, j, bj
    cdef double dx, dy, dz, d2, bd
    with nogil:
        for i in range(n):
            bd = -1.0
            bj = 0
            for j in range(m):
                dx = pa[i, 0] - pb[j, 0]
                dy = pa[i, 1] - pb[j, 1]
                dz = pa[i, 2] - pb[j, 2]
                d2 = dx * dx + dy * dy
                d2 = d2 + dz * dz
                if bd < 0.0 or d2 < bd:
                    bd = d2
                    bj = j
            dists[i] = sqrt(bd)
            idx[i] = bj
    return dists_arr, idx_arr
