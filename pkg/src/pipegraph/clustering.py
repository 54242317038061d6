"""Density clustering and statistical outlier removal.

DBSCAN semantics are pinned exactly so an O(n^2) brute-force oracle can
assert equality: a core point has >= min_pts neighbors within eps
(inclusive, counting itself); clusters are discovered in ascending order
of their lowest core point index; border points keep the first cluster
that reaches them.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from . import _kernels
from .errors import DomainError, TooFewPoints
from .model import as_cloud

NOISE = -1


def dbscan(cloud: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Cluster labels per point: -1 noise, 0..k-1 contiguous cluster ids."""
    if eps <= 0:
        raise DomainError(f"dbscan eps must be positive, got {eps}")
    if min_pts < 1:
        raise DomainError(f"dbscan min_pts must be >= 1, got {min_pts}")
    pts = as_cloud(cloud)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    indptr, indices = _kernels.radius_neighbors(pts, float(eps))
    core = (indptr[1:] - indptr[:-1]) >= min_pts
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in indices[indptr[p] : indptr[p + 1]]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    return labels


def statistical_outlier_removal(
    cloud: np.ndarray, k: int, std_ratio: float
) -> np.ndarray:
    """Drop points whose mean k-NN distance exceeds mean + std_ratio * std."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if std_ratio <= 0:
        raise DomainError(f"std_ratio must be positive, got {std_ratio}")
    pts = as_cloud(cloud)
    if pts.shape[0] <= k:
        raise TooFewPoints(f"cloud of {pts.shape[0]} points needs more than k={k}")
    means = _kernels.knn_mean_dists(pts, int(k))
    threshold = means.mean() + std_ratio * means.std()
    return pts[means <= threshold]


def scalar_outlier_filter(values: np.ndarray, n_std: float) -> np.ndarray:
    """Indices of 3-vectors within n_std per-coordinate deviations of the mean.

    A zero-variance coordinate passes everything on that coordinate.
    """
    vals = as_cloud(values)
    if vals.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    mean = vals.mean(axis=0)
    std = vals.std(axis=0)
    keep = np.ones(vals.shape[0], dtype=bool)
    for c in range(3):
        if std[c] > 0:
            keep &= np.abs(vals[:, c] - mean[c]) <= n_std * std[c]
    return np.nonzero(keep)[0]
