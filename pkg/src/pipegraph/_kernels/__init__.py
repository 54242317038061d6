"""Distance kernels: compiled core when built, numpy fallback otherwise.

The active backend is reported in ``BACKEND`` ("compiled" or "numpy").
Setting the environment variable ``PIPEGRAPH_FORCE_NUMPY=1`` before import
forces the fallback, which is useful for benchmarking and cross-checking.
"""

from __future__ import annotations

import os

from . import _kernels_py

_impl = _kernels_py
if not os.environ.get("PIPEGRAPH_FORCE_NUMPY"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        pass

BACKEND: str = _impl.BACKEND_NAME

radius_neighbors = _impl.radius_neighbors
pairwise_count_within = _impl.pairwise_count_within
knn_mean_dists = _impl.knn_mean_dists
nearest_neighbor = _impl.nearest_neighbor

__all__ = [
    "BACKEND",
    "radius_neighbors",
    "pairwise_count_within",
    "knn_mean_dists",
    "nearest_neighbor",
]
