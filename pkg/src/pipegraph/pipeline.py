"""End-to-end orchestration: ingest filtering, both branches, graph stage.

Per-image lifting and cleanup run on a bounded thread pool
(PIPEGRAPH_THREADS caps it); results are collected in image order so the
pipeline stays deterministic regardless of scheduling.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .config import PipelineConfig
from .graph import SceneGraph, enforce, initial_graph, hydraulic_ruleset
from .ingest import filter_by_confidence, nms
from .model import NON_PIPE_CLASSES, ImageRecord, ObjectClass, SceneBundle, WorldObject
from .nonpipe import NonPipeObservation, build_observation, fuse_nonpipe
from .pipe import (
    PipeObservation,
    cleanup_observation,
    estimate_endpoints,
    match_pipes,
    overlap_filter,
)

logger = logging.getLogger(__name__)


@dataclass
class RunStats:
    stage_seconds: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def log(self) -> None:
        for stage, seconds in self.stage_seconds.items():
            logger.info("stage %-18s %7.3f s", stage, seconds)
        for name, value in self.counts.items():
            logger.info("count %-18s %d", name, value)


def _worker_count() -> int:
    env = os.environ.get("PIPEGRAPH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer PIPEGRAPH_THREADS=%r", env)
    return os.cpu_count() or 1


def _process_image(
    image: ImageRecord, config: PipelineConfig
) -> tuple[list[NonPipeObservation], list[PipeObservation]]:
    nonpipe_dets = [d for d in image.detections if d.cls in NON_PIPE_CLASSES]
    pipe_dets = [d for d in image.detections if d.cls is ObjectClass.PIPE]
    nonpipe_dets = nms(
        filter_by_confidence(nonpipe_dets, config.np_confidence), config.np_iou
    )
    pipe_dets = nms(
        filter_by_confidence(pipe_dets, config.p_min_confidence), config.pipe_nms_iou
    )
    np_obs = []
    for det in nonpipe_dets:
        obs = build_observation(
            image.image_id, det, image.depth, image.intrinsics, image.pose, config
        )
        if obs is not None:
            np_obs.append(obs)
    p_obs = []
    for det in pipe_dets:
        obs = cleanup_observation(image, det, config)
        if obs is not None:
            p_obs.append(obs)
    return np_obs, p_obs


def run_pipeline(
    bundle: SceneBundle, config: PipelineConfig, dump_dir=None
) -> tuple[SceneGraph, list[WorldObject], RunStats]:
    """Produce the enforced, typed scene graph for a bundle.

    With dump_dir set, per-stage PLY clouds are written there: every cleaned
    pipe observation (post-cleanup) and every fused object (post-matching).
    """
    config.validate()
    stats = RunStats()
    t0 = time.perf_counter()

    workers = min(_worker_count(), len(bundle.images))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_image = list(
                pool.map(lambda img: _process_image(img, config), bundle.images)
            )
    else:
        per_image = [_process_image(img, config) for img in bundle.images]
    nonpipe_obs = [obs for np_obs, _ in per_image for obs in np_obs]
    pipe_obs = [obs for _, p_obs in per_image for obs in p_obs]
    stats.stage_seconds["observations"] = time.perf_counter() - t0
    stats.counts["nonpipe_observations"] = len(nonpipe_obs)
    stats.counts["pipe_observations"] = len(pipe_obs)
    if dump_dir is not None:
        from pathlib import Path

        from .geometry import write_ply

        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for obs in pipe_obs:
            write_ply(obs.cloud, dump / f"cleanup_{obs.image_id}_{obs.det_id}.ply")

    t0 = time.perf_counter()
    nonpipe_objects = fuse_nonpipe(nonpipe_obs, config)
    stats.stage_seconds["nonpipe_matching"] = time.perf_counter() - t0
    stats.counts["nonpipe_objects"] = len(nonpipe_objects)

    t0 = time.perf_counter()
    nonpipe_clouds = [obj.cloud for obj in nonpipe_objects]
    kept = [
        obs
        for obs in pipe_obs
        if overlap_filter(obs, nonpipe_clouds, config.p_overlap, config.overlap_margin)
    ]
    stats.counts["pipe_observations_kept"] = len(kept)
    stats.stage_seconds["overlap_filter"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    images = {img.image_id: img for img in bundle.images}
    pipe_objects = match_pipes(kept, images, config)
    stats.stage_seconds["pipe_matching"] = time.perf_counter() - t0
    stats.counts["pipe_objects"] = len(pipe_objects)

    # stable object ids: non-pipe objects first, then pipes, both by provenance
    nonpipe_objects.sort(key=lambda o: (o.cls.value, o.sources))
    for i, obj in enumerate(nonpipe_objects):
        obj.object_id = i
    for j, obj in enumerate(pipe_objects):
        obj.object_id = len(nonpipe_objects) + j
    objects = nonpipe_objects + pipe_objects

    if dump_dir is not None:
        from pathlib import Path

        from .geometry import write_ply

        dump = Path(dump_dir)
        for obj in objects:
            write_ply(obj.cloud, dump / f"object_{obj.object_id:03d}_{obj.cls.value}.ply")

    t0 = time.perf_counter()
    estimate_endpoints(pipe_objects, objects, config)
    stats.stage_seconds["pipe_endpoints"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    graph = initial_graph(objects, config.graph_connections_max_distance)
    stats.counts["initial_edges"] = len(graph.edges)
    graph = enforce(graph, hydraulic_ruleset(), config.enforcement_mode)
    stats.counts["final_edges"] = len(graph.edges)
    stats.counts["final_nodes"] = len(graph.nodes)
    stats.stage_seconds["graph"] = time.perf_counter() - t0
    stats.log()
    return graph, objects, stats
