"""Non-pipe branch: lift pump/tank/valve detections to 3D, match them across
images with the pairwise-distance voxel fraction, and merge each matched group
into one world object with outlier-robust endpoint averages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .clustering import dbscan, scalar_outlier_filter, statistical_outlier_removal
from .config import PipelineConfig
from .errors import EmptyCloud, EmptyObservation, TooFewPoints
from .geometry import unproject_pixels, voxel_downsample
from .model import (
    KEYPOINT_LIMITS,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    Detection,
    ObjectClass,
    WorldObject,
)

logger = logging.getLogger(__name__)

_BBOX_SHRINK = 0.20  # inset per side, fraction of the box dimension
_SAMPLE_STRIDE = 4


@dataclass
class NonPipeObservation:
    """One lifted non-pipe detection: its sampled cloud and 3D keypoints."""

    image_id: str
    det_id: int
    cls: ObjectClass
    cloud: np.ndarray
    keypoints_3d: np.ndarray  # (K, 3)
    match_cloud: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))


def lift_keypoints(
    det: Detection, depth: DepthMap, intr: CameraIntrinsics, pose: CameraPose
) -> np.ndarray:
    """Unproject each keypoint at the median valid depth of its 3x3 window.

    Keypoints whose window holds no valid depth are dropped.
    """
    points = []
    for u, v in det.keypoints:
        ui = int(round(u))
        vi = int(round(v))
        u0, u1 = max(ui - 1, 0), min(ui + 1, intr.width - 1)
        v0, v1 = max(vi - 1, 0), min(vi + 1, intr.height - 1)
        window = depth.values[v0 : v1 + 1, u0 : u1 + 1].astype(np.float64)
        valid = window[np.isfinite(window) & (window > 0)]
        if valid.size == 0:
            continue
        d = float(np.median(valid))
        points.append(unproject_pixels([u], [v], [d], intr, pose)[0])
    if not points:
        return np.zeros((0, 3))
    return np.stack(points)


def observation_cloud(
    det: Detection,
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    sor_k: int = 16,
    sor_std_ratio: float = 2.0,
) -> np.ndarray:
    """Approximate object cloud: shrunken bbox, stride-sampled pixels, outlier removal.

    Raises EmptyObservation when no valid pixels remain or the sample is too
    small to survive statistical outlier removal (<= sor_k points).
    """
    x0, y0, x1, y1 = det.bbox
    dx = (x1 - x0) * _BBOX_SHRINK
    dy = (y1 - y0) * _BBOX_SHRINK
    u_lo = max(int(np.ceil(x0 + dx)), 0)
    u_hi = min(int(np.floor(x1 - dx)), intr.width - 1)
    v_lo = max(int(np.ceil(y0 + dy)), 0)
    v_hi = min(int(np.floor(y1 - dy)), intr.height - 1)
    if u_hi < u_lo or v_hi < v_lo:
        raise EmptyObservation(f"detection {det.det_id}: bbox empty after shrink")
    us, vs = np.meshgrid(
        np.arange(u_lo, u_hi + 1, _SAMPLE_STRIDE),
        np.arange(v_lo, v_hi + 1, _SAMPLE_STRIDE),
    )
    us = us.ravel()
    vs = vs.ravel()
    d = depth.values[vs, us].astype(np.float64)
    valid = np.isfinite(d) & (d > 0)
    if valid.sum() <= sor_k:
        raise EmptyObservation(
            f"detection {det.det_id}: {int(valid.sum())} valid samples "
            f"(need > {sor_k} for outlier removal)"
        )
    cloud = unproject_pixels(us[valid], vs[valid], d[valid], intr, pose)
    try:
        return statistical_outlier_removal(cloud, sor_k, sor_std_ratio)
    except TooFewPoints as exc:  # pragma: no cover - guarded by the check above
        raise EmptyObservation(str(exc)) from exc


def match_fraction(a: np.ndarray, b: np.ndarray, np_max_distance: float) -> float:
    """Fraction of all |a| x |b| point pairs closer than np_max_distance."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyCloud("match_fraction requires two non-empty clouds")
    count = _kernels.pairwise_count_within(a, b, float(np_max_distance))
    return count / (a.shape[0] * b.shape[0])


def match_objects(
    observations: list[NonPipeObservation],
    np_max_distance: float,
    np_min_percentage: float,
) -> list[list[NonPipeObservation]]:
    """Group same-class observations whose match fraction strictly exceeds
    np_min_percentage; groups are connected components of that relation."""
    parent = list(range(len(observations)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(observations)):
        for j in range(i + 1, len(observations)):
            a, b = observations[i], observations[j]
            if a.cls != b.cls:
                continue
            if match_fraction(a.match_cloud, b.match_cloud, np_max_distance) > np_min_percentage:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(observations)):
        groups.setdefault(find(i), []).append(i)
    # deterministic order: by first member index
    ordered = sorted(groups.values(), key=lambda idxs: idxs[0])
    return [[observations[i] for i in idxs] for idxs in ordered]


def merge_group(
    group: list[NonPipeObservation], config: PipelineConfig
) -> WorldObject:
    """Fuse one matched group: union cloud plus per-connection-slot endpoints.

    Slots come from clustering all group keypoints; each kept slot is the
    outlier-filtered mean of its members. Objects without any lifted
    keypoint are still emitted (endpoints empty) with a logged warning.
    """
    cls = group[0].cls
    cloud = voxel_downsample(
        np.concatenate([obs.cloud for obs in group]), config.merge_downsample_cell
    )
    keypoints = [obs.keypoints_3d for obs in group if obs.keypoints_3d.shape[0]]
    endpoints: list[np.ndarray] = []
    if keypoints:
        pts = np.concatenate(keypoints)
        # false predictions are discarded against the whole keypoint set first
        pts = pts[scalar_outlier_filter(pts, 2.0)]
        slot_eps = min(config.np_max_distance, config.keypoint_slot_eps)
        labels = dbscan(pts, slot_eps, 1)
        counts = np.bincount(labels)
        order = sorted(range(counts.shape[0]), key=lambda c: (-counts[c], c))
        for cluster in order[: KEYPOINT_LIMITS[cls]]:
            members = pts[labels == cluster]
            keep = scalar_outlier_filter(members, 2.0)
            endpoints.append(members[keep].mean(axis=0))
    else:
        logger.warning(
            "merged %s object from %d observation(s) has no keypoints; "
            "emitting without endpoints",
            cls.value,
            len(group),
        )
    sources = sorted((obs.image_id, obs.det_id) for obs in group)
    return WorldObject(object_id=-1, cls=cls, cloud=cloud, endpoints=endpoints, sources=sources)


def build_observation(
    image_id: str,
    det: Detection,
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    config: PipelineConfig,
) -> NonPipeObservation | None:
    """Lift one non-pipe detection; None when it yields no usable cloud."""
    try:
        cloud = observation_cloud(det, depth, intr, pose, config.sor_k, config.sor_std_ratio)
    except EmptyObservation as exc:
        logger.warning("image %s: %s", image_id, exc)
        return None
    keypoints_3d = lift_keypoints(det, depth, intr, pose)
    return NonPipeObservation(
        image_id=image_id,
        det_id=det.det_id,
        cls=det.cls,
        cloud=cloud,
        keypoints_3d=keypoints_3d,
        match_cloud=voxel_downsample(cloud, config.match_downsample_cell),
    )


def fuse_nonpipe(
    observations: list[NonPipeObservation], config: PipelineConfig
) -> list[WorldObject]:
    """Match and merge all non-pipe observations into world objects."""
    groups = match_objects(observations, config.np_max_distance, config.np_min_percentage)
    return [merge_group(group, config) for group in groups]
