"""Pipe branch: clean instance masks, project to world space, drop masks that
sit on non-pipe objects, match pipe instances across images via reprojection,
and estimate two endpoints per fused pipe object."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .clustering import dbscan, statistical_outlier_removal
from .config import PipelineConfig
from .errors import DegenerateCloud
from .geometry import (
    erode_mask,
    mask_to_cloud,
    project_points,
    rasterize_polygons,
    rotated_bbox,
    voxel_downsample,
    voxel_downsample_indexed,
)
from .model import (
    Detection,
    ImageRecord,
    ObjectClass,
    WorldObject,
    as_cloud,
)

logger = logging.getLogger(__name__)

MASK_EROSION_PX = 2


class PipeShape(Enum):
    STRAIGHT = "straight"
    NON_STRAIGHT = "non_straight"


# short aliases; classify_shape callers read `shape is Straight`
Straight = PipeShape.STRAIGHT
NonStraight = PipeShape.NON_STRAIGHT


@dataclass
class PipeObservation:
    """One cleaned pipe instance: eroded mask plus its world-space cloud.

    The stored mask is eroded 1 px (not the full cloud erosion): reprojected
    points from other views land within +-1 px of the true silhouette, so a
    1 px margin separates adjacent instances without starving thin pipes of
    cross-view intersections.
    """

    image_id: str
    det_id: int
    confidence: float
    mask: np.ndarray  # (H, W) bool, eroded 1 px
    cloud: np.ndarray  # (N, 3)


def cleanup_observation(
    image: ImageRecord, det: Detection, config: PipelineConfig
) -> PipeObservation | None:
    """Erode, unproject, keep the densest cluster, strip outliers.

    Returns None (discarded) when any stage empties the observation.
    """
    raw = rasterize_polygons(det.mask, image.intrinsics.width, image.intrinsics.height)
    margin_mask = erode_mask(raw, 1)
    eroded = erode_mask(margin_mask, MASK_EROSION_PX - 1)
    cloud = mask_to_cloud(eroded, image.depth, image.intrinsics, image.pose)
    if cloud.shape[0] == 0:
        return None
    labels = dbscan(cloud, config.cleanup_eps, config.cleanup_min_pts)
    if labels.max(initial=-1) < 0:
        return None
    counts = np.bincount(labels[labels >= 0])
    cloud = cloud[labels == int(np.argmax(counts))]
    if cloud.shape[0] <= config.sor_k:
        return None
    cloud = statistical_outlier_removal(cloud, config.sor_k, config.sor_std_ratio)
    return PipeObservation(
        image_id=image.image_id,
        det_id=det.det_id,
        confidence=det.confidence,
        mask=margin_mask,
        cloud=cloud,
    )


def overlap_filter(
    obs: PipeObservation,
    nonpipe_clouds: list[np.ndarray],
    p_overlap: float,
    margin: float = 0.03,
    cell: float = 0.01,
) -> bool:
    """True to keep the observation.

    Drops it when, for any single non-pipe object, more than p_overlap of the
    observation's (downsampled) points lie within `margin` of that object's
    (downsampled) cloud.
    """
    if not nonpipe_clouds:
        return True
    obs_pts = voxel_downsample(obs.cloud, cell)
    for other in nonpipe_clouds:
        if other.shape[0] == 0:
            continue
        dists, _ = _kernels.nearest_neighbor(obs_pts, other)
        fraction = float((dists <= margin).mean())
        if fraction > p_overlap:
            return False
    return True


def reprojection_candidates(
    obs: PipeObservation,
    image: ImageRecord,
    image_observations: list[PipeObservation],
    occlusion_tolerance: float = 0.05,
) -> list[tuple[int, int]]:
    """(detection id, intersection pixel count) for each mask of `image` that
    the observation's cloud lands on after occlusion checking."""
    intr = image.intrinsics
    uv, z, in_front = project_points(obs.cloud, intr, image.pose)
    if not in_front.any():
        return []
    us = np.round(uv[in_front, 0]).astype(np.int64)
    vs = np.round(uv[in_front, 1]).astype(np.int64)
    z = z[in_front]
    inside = (us >= 0) & (us < intr.width) & (vs >= 0) & (vs < intr.height)
    if not inside.any():
        return []
    us, vs, z = us[inside], vs[inside], z[inside]
    stored = image.depth.values[vs, us].astype(np.float64)
    visible = np.isfinite(stored) & (stored > 0) & (np.abs(z - stored) <= occlusion_tolerance)
    if not visible.any():
        return []
    flat = np.unique(vs[visible] * intr.width + us[visible])
    results = []
    for other in image_observations:
        hits = int(other.mask.ravel()[flat].sum())
        if hits > 0:
            results.append((other.det_id, hits))
    return results


def match_pipes(
    observations: list[PipeObservation],
    images: dict[str, ImageRecord],
    config: PipelineConfig,
) -> list[WorldObject]:
    """Fuse pipe observations into world objects.

    Builds the cross-image candidate graph from mask reprojection overlap
    (an edge when either direction intersects), then splits each connected
    component's unioned cloud with DBSCAN so that distinct objects at least
    match_cluster_eps apart come out separately.
    """
    by_image: dict[str, list[PipeObservation]] = {}
    index_of = {}
    for i, obs in enumerate(observations):
        by_image.setdefault(obs.image_id, []).append(obs)
        index_of[(obs.image_id, obs.det_id)] = i

    parent = list(range(len(observations)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, obs in enumerate(observations):
        for image_id, others in by_image.items():
            if image_id == obs.image_id:
                continue
            for det_id, _count in reprojection_candidates(
                obs, images[image_id], others, config.occlusion_tolerance
            ):
                parent[find(i)] = find(index_of[(image_id, det_id)])

    components: dict[int, list[int]] = {}
    for i in range(len(observations)):
        components.setdefault(find(i), []).append(i)

    objects = []
    for comp in sorted(components.values(), key=lambda idxs: idxs[0]):
        clouds = [observations[i].cloud for i in comp]
        sources = np.concatenate(
            [np.full(c.shape[0], k, dtype=np.int64) for k, c in enumerate(clouds)]
        )
        union = np.concatenate(clouds)
        down, inverse = voxel_downsample_indexed(union, config.merge_downsample_cell)
        labels = dbscan(down, config.match_cluster_eps, config.match_cluster_min_pts)
        if labels.max(initial=-1) < 0:
            logger.warning(
                "pipe component of %d observation(s) dissolved into noise", len(comp)
            )
            continue
        # map each original point to its downsampled cell's cluster
        point_labels = labels[inverse]
        for cluster in range(int(labels.max()) + 1):
            cluster_cloud = down[labels == cluster]
            members = np.unique(sources[point_labels == cluster])
            provenance = sorted(
                (observations[comp[k]].image_id, observations[comp[k]].det_id)
                for k in members
            )
            objects.append(
                WorldObject(
                    object_id=-1,
                    cls=ObjectClass.PIPE,
                    cloud=cluster_cloud,
                    endpoints=[],
                    sources=provenance,
                )
            )
    objects.sort(key=lambda o: o.sources)
    return objects


def classify_shape(obj: WorldObject, p_threshold: float) -> PipeShape:
    """Straight when both long/short box-extent ratios exceed p_threshold."""
    box = rotated_bbox(obj.cloud)
    e0, e1, e2 = box.half_extents
    r1 = np.inf if e1 <= 0 else e0 / e1
    r2 = np.inf if e2 <= 0 else e0 / e2
    return Straight if (r1 > p_threshold and r2 > p_threshold) else NonStraight


def endpoints_straight(
    obj: WorldObject, bin_fraction: float = 0.05
) -> tuple[np.ndarray, np.ndarray]:
    """Means of the first and last axial bins along the box's long axis."""
    cloud = as_cloud(obj.cloud)
    if cloud.shape[0] == 0:
        raise DegenerateCloud("endpoints_straight requires a non-empty cloud")
    box = rotated_bbox(cloud)
    axis = box.axes[0]
    t = cloud @ axis
    t_min = float(t.min())
    t_max = float(t.max())
    span = t_max - t_min
    if span <= 0:
        center = cloud.mean(axis=0)
        return center, center.copy()
    width = bin_fraction * span
    first = cloud[t <= t_min + width].mean(axis=0)
    last = cloud[t >= t_max - width].mean(axis=0)
    return first, last


def endpoints_nonstraight(
    obj: WorldObject,
    others: list[WorldObject],
    max_dist: float,
    p_w: float,
    cell: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Centroid pulled toward the two most point-populated neighbor objects.

    Each endpoint is (1 - p_w) * centroid + p_w * r where r is the chosen
    neighbor's nearest point; with no qualifying neighbor it stays at the
    centroid. The second pick excludes the first neighbor object.
    """
    centroid = obj.cloud.mean(axis=0)
    obj_down = voxel_downsample(obj.cloud, cell)
    candidates = []
    for other in others:
        if other is obj or other.cloud.shape[0] == 0:
            continue
        other_down = voxel_downsample(other.cloud, cell)
        dists, _ = _kernels.nearest_neighbor(other_down, obj_down)
        within = int((dists <= max_dist).sum())
        if within > 0:
            nearest = other_down[int(np.argmin(dists))]
            candidates.append((within, other.object_id, nearest))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    endpoints = []
    for rank in range(2):
        if rank < len(candidates):
            _, _, nearest = candidates[rank]
            endpoints.append((1.0 - p_w) * centroid + p_w * nearest)
        else:
            endpoints.append(centroid.copy())
    return endpoints[0], endpoints[1]


def estimate_endpoints(
    pipes: list[WorldObject],
    all_objects: list[WorldObject],
    config: PipelineConfig,
) -> None:
    """Attach two endpoints to every pipe object in place."""
    for obj in pipes:
        shape = classify_shape(obj, config.p_threshold)
        if shape is Straight:
            first, last = endpoints_straight(obj, config.endpoint_bin_fraction)
        else:
            others = [o for o in all_objects if o is not obj]
            first, last = endpoints_nonstraight(
                obj, others, config.graph_endpoints_max_distance, config.p_w
            )
        obj.endpoints = [first, last]
