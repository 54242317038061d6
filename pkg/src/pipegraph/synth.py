"""Synthetic scene bundles: parametric pipe networks ray-cast to analytic
depth maps with perfect-or-perturbed detections plus a ground-truth graph.

Rendering is exact: each pixel's planar depth is the closed-form nearest
ray-primitive intersection, and the id map records which object owns it.
Detections are derived from the id map, then degraded per NoiseSpec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import intrinsics_from_fov, look_at_pose, project
from .graph import GraphNode, SceneGraph
from .ingest import write_scene
from .model import (
    DETECTION_CLASSES,
    KEYPOINT_LIMITS,
    PIPE_FAMILY,
    CameraPose,
    DepthMap,
    Detection,
    ImageRecord,
    ObjectClass,
    SceneBundle,
)

_RAY_EPS = 1e-9
_MIN_DETECTION_PIXELS = 20


@dataclass(frozen=True)
class Cylinder:
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    object_id: int
    cls: ObjectClass


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    object_id: int
    cls: ObjectClass
    # axes rows; identity = axis-aligned
    axes: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass
class NoiseSpec:
    depth_sigma: float = 0.0  # meters
    keypoint_sigma: float = 0.0  # pixels
    mask_boundary_jitter: float = 0.0  # pixels
    drop_detection_prob: float = 0.0
    spurious_detection_rate: float = 0.0  # expected count per image

    def to_dict(self) -> dict:
        return {
            "depth_sigma": self.depth_sigma,
            "keypoint_sigma": self.keypoint_sigma,
            "mask_boundary_jitter": self.mask_boundary_jitter,
            "drop_detection_prob": self.drop_detection_prob,
            "spurious_detection_rate": self.spurious_detection_rate,
        }


@dataclass
class SceneSpec:
    name: str
    primitives: list
    cameras: list[CameraPose]
    truth: SceneGraph
    width: int = 480
    height: int = 270
    fov_deg: float = 114.0

    def object_classes(self) -> dict[int, ObjectClass]:
        return {p.object_id: p.cls for p in self.primitives}


@dataclass
class SyntheticScene:
    """A generated bundle plus the ground truth the tests lean on."""

    bundle: SceneBundle
    truth: SceneGraph
    id_maps: list[np.ndarray]  # per camera, (H, W) int32 object ids, -1 = background
    clean_depths: list[np.ndarray]  # per camera, (H, W) float64 before noise
    detection_objects: dict[tuple[str, int], int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# ray casting


def _ray_cylinder(origin, dirs, cyl: Cylinder) -> np.ndarray:
    """Smallest positive ray parameter per direction, inf on miss (caps included)."""
    p0 = np.asarray(cyl.p0, dtype=np.float64)
    p1 = np.asarray(cyl.p1, dtype=np.float64)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    axis = axis / length
    m = origin - p0
    m_a = float(m @ axis)
    d_a = dirs @ axis
    d_perp = dirs - d_a[:, None] * axis
    m_perp = m - m_a * axis
    a = (d_perp * d_perp).sum(axis=1)
    b = 2.0 * d_perp @ m_perp
    c = float(m_perp @ m_perp) - cyl.radius * cyl.radius

    best = np.full(dirs.shape[0], np.inf)
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > _RAY_EPS)
    if ok.any():
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for sign in (-1.0, 1.0):
            s = np.where(ok, (-b + sign * sq) / (2.0 * np.where(ok, a, 1.0)), 0.0)
            h = m_a + s * d_a
            valid = ok & (s > _RAY_EPS) & (h >= 0.0) & (h <= length)
            best = np.where(valid & (s < best), s, best)
    # end caps
    safe_da = np.where(np.abs(d_a) < _RAY_EPS, np.copysign(_RAY_EPS, d_a + _RAY_EPS), d_a)
    for cap_h in (0.0, length):
        s = (cap_h - m_a) / safe_da
        hit = origin + s[:, None] * dirs - (p0 + cap_h * axis)
        radial = (hit * hit).sum(axis=1) - (hit @ axis) ** 2
        valid = (np.abs(d_a) >= _RAY_EPS) & (s > _RAY_EPS) & (radial <= cyl.radius * cyl.radius)
        best = np.where(valid & (s < best), s, best)
    return best


def _ray_box(origin, dirs, box: Box) -> np.ndarray:
    axes = np.asarray(box.axes, dtype=np.float64)
    he = np.asarray(box.half_extents, dtype=np.float64)
    o_local = axes @ (origin - np.asarray(box.center, dtype=np.float64))
    d_local = dirs @ axes.T
    d_safe = np.where(np.abs(d_local) < 1e-300, np.copysign(1e-300, d_local + 1e-300), d_local)
    t1 = (-he - o_local) / d_safe
    t2 = (he - o_local) / d_safe
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_far >= np.maximum(t_near, _RAY_EPS))
    s = np.where(t_near > _RAY_EPS, t_near, t_far)
    return np.where(hit & (s > _RAY_EPS), s, np.inf)


def render_depth(spec: SceneSpec, camera_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Planar depth (float64, 0 = no hit) and object id map (-1 = background)."""
    intr = intrinsics_from_fov(spec.width, spec.height, spec.fov_deg)
    pose = spec.cameras[camera_index]
    us, vs = np.meshgrid(np.arange(spec.width), np.arange(spec.height))
    cam_dirs = np.stack(
        [
            (us.ravel() - intr.cx) / intr.fx,
            (vs.ravel() - intr.cy) / intr.fy,
            np.ones(us.size),
        ],
        axis=1,
    )
    dirs = cam_dirs @ pose.rotation().T
    best = np.full(dirs.shape[0], np.inf)
    ids = np.full(dirs.shape[0], -1, dtype=np.int32)
    for prim in spec.primitives:
        if isinstance(prim, Cylinder):
            s = _ray_cylinder(pose.position, dirs, prim)
        else:
            s = _ray_box(pose.position, dirs, prim)
        closer = s < best
        best = np.where(closer, s, best)
        ids = np.where(closer, np.int32(prim.object_id), ids)
    depth = np.where(np.isfinite(best), best, 0.0)
    return depth.reshape(spec.height, spec.width), ids.reshape(spec.height, spec.width)


# ---------------------------------------------------------------------------
# detections


def _region_runs(region: np.ndarray) -> list[tuple[int, int, int]]:
    """(row, u_start, u_end inclusive) for every horizontal pixel run."""
    runs = []
    for v in np.nonzero(region.any(axis=1))[0]:
        xs = np.nonzero(region[v])[0]
        breaks = np.nonzero(np.diff(xs) > 1)[0]
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [xs.size - 1]])
        for a, b in zip(starts, ends):
            runs.append((int(v), int(xs[a]), int(xs[b])))
    return runs


def _runs_to_polygons(
    runs, width: int, jitter: float, rng: np.random.Generator | None
) -> list[np.ndarray]:
    """One rectangle polygon per run; disjoint, so even-odd equals union."""
    by_row: dict[int, list[list[float]]] = {}
    for v, u_start, u_end in runs:
        u0 = u_start - 0.5
        u1 = u_end + 0.5
        if jitter > 0 and rng is not None:
            u0 += float(rng.normal(0.0, jitter))
            u1 += float(rng.normal(0.0, jitter))
        u0 = max(u0, -0.5)
        u1 = min(u1, width - 0.5)
        if u1 - u0 < 0.5:
            continue
        by_row.setdefault(v, []).append([u0, u1])
    polygons = []
    for v in sorted(by_row):
        intervals = sorted(by_row[v])
        merged = [intervals[0]]
        for u0, u1 in intervals[1:]:
            if u0 <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], u1)
            else:
                merged.append([u0, u1])
        for u0, u1 in merged:
            polygons.append(
                np.array(
                    [[u0, v - 0.5], [u1, v - 0.5], [u1, v + 0.5], [u0, v + 0.5]]
                )
            )
    return polygons


def render_detections(
    spec: SceneSpec,
    camera_index: int,
    id_map: np.ndarray,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> tuple[list[Detection], list[int]]:
    """Detections for one camera plus the source object id per detection
    (-1 for spurious ones)."""
    intr = intrinsics_from_fov(spec.width, spec.height, spec.fov_deg)
    pose = spec.cameras[camera_index]
    classes = spec.object_classes()
    truth_nodes = {n.node_id: n for n in spec.truth.nodes}

    detections: list[Detection] = []
    provenance: list[int] = []
    det_id = 0
    for oid in sorted(classes):
        region = id_map == oid
        n_pixels = int(region.sum())
        if n_pixels < _MIN_DETECTION_PIXELS:
            continue
        if noise.drop_detection_prob > 0 and rng.random() < noise.drop_detection_prob:
            continue
        ys, xs = np.nonzero(region)
        bbox = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
        # the detector has no fitting classes: every pipe-family object is "Pipe"
        cls = ObjectClass.PIPE if classes[oid] in PIPE_FAMILY else classes[oid]
        if cls is ObjectClass.PIPE:
            polygons = _runs_to_polygons(
                _region_runs(region), spec.width, noise.mask_boundary_jitter, rng
            )
            if not polygons:
                continue
            det = Detection(det_id, cls, 1.0, bbox, mask=polygons)
        else:
            keypoints = []
            for endpoint in truth_nodes[oid].endpoints:
                projected = project(endpoint, intr, pose)
                if projected is None:
                    continue
                (u, v), _ = projected
                if noise.keypoint_sigma > 0:
                    u += float(rng.normal(0.0, noise.keypoint_sigma))
                    v += float(rng.normal(0.0, noise.keypoint_sigma))
                if 0 <= u <= intr.width - 1 and 0 <= v <= intr.height - 1:
                    keypoints.append([u, v])
            keypoints = keypoints[: KEYPOINT_LIMITS[cls]]
            det = Detection(det_id, cls, 1.0, bbox, keypoints=np.array(keypoints).reshape(-1, 2))
        detections.append(det)
        provenance.append(oid)
        det_id += 1

    if noise.spurious_detection_rate > 0:
        for _ in range(int(rng.poisson(noise.spurious_detection_rate))):
            cls = DETECTION_CLASSES[int(rng.integers(len(DETECTION_CLASSES)))]
            w = float(rng.uniform(0.05, 0.20)) * spec.width
            h = float(rng.uniform(0.05, 0.20)) * spec.height
            x0 = float(rng.uniform(0, spec.width - w - 1))
            y0 = float(rng.uniform(0, spec.height - h - 1))
            bbox = (x0, y0, x0 + w, y0 + h)
            confidence = float(rng.uniform(0.25, 0.95))
            if cls is ObjectClass.PIPE:
                poly = np.array(
                    [[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]]
                )
                det = Detection(det_id, cls, confidence, bbox, mask=[poly])
            else:
                count = int(rng.integers(1, KEYPOINT_LIMITS[cls] + 1))
                pts = np.stack(
                    [rng.uniform(x0, x0 + w, count), rng.uniform(y0, y0 + h, count)],
                    axis=1,
                )
                det = Detection(det_id, cls, confidence, bbox, keypoints=pts)
            detections.append(det)
            provenance.append(-1)
            det_id += 1
    return detections, provenance


def generate(spec: SceneSpec, noise: NoiseSpec | None = None, seed: int = 0) -> SyntheticScene:
    """Render every camera and assemble a validated scene bundle."""
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(seed)
    images = []
    id_maps = []
    clean_depths = []
    detection_objects: dict[tuple[str, int], int] = {}
    intr = intrinsics_from_fov(spec.width, spec.height, spec.fov_deg)
    for cam_idx in range(len(spec.cameras)):
        depth, id_map = render_depth(spec, cam_idx)
        clean_depths.append(depth)
        id_maps.append(id_map)
        noisy = depth.copy()
        if noise.depth_sigma > 0:
            valid = noisy > 0
            noisy[valid] = np.maximum(
                noisy[valid] + rng.normal(0.0, noise.depth_sigma, int(valid.sum())),
                1e-4,
            )
        detections, provenance = render_detections(spec, cam_idx, id_map, noise, rng)
        image_id = f"cam{cam_idx:02d}"
        for det, oid in zip(detections, provenance):
            detection_objects[(image_id, det.det_id)] = oid
        images.append(
            ImageRecord(
                image_id=image_id,
                intrinsics=intr,
                pose=spec.cameras[cam_idx],
                depth=DepthMap(values=noisy.astype(np.float32)),
                detections=detections,
            )
        )
    bundle = SceneBundle(
        images=images,
        metadata={
            "generator": "pipegraph-synth",
            "scene": spec.name,
            "seed": seed,
            "noise": noise.to_dict(),
        },
    )
    return SyntheticScene(
        bundle=bundle,
        truth=spec.truth,
        id_maps=id_maps,
        clean_depths=clean_depths,
        detection_objects=detection_objects,
    )


def write_synthetic_scene(scene: SyntheticScene, out_dir) -> None:
    """Scene bundle plus truth_graph.json, byte-deterministic for a fixed seed."""
    from pathlib import Path

    from .graph import export

    out = Path(out_dir)
    write_scene(scene.bundle, out)
    (out / "truth_graph.json").write_bytes(export(scene.truth, "json"))


# ---------------------------------------------------------------------------
# builtin scene


def _orbit_cameras(
    target, radius: float, z: float, count: int
) -> list[CameraPose]:
    cameras = []
    for k in range(count):
        angle = 2.0 * math.pi * k / count
        position = (
            target[0] + radius * math.cos(angle),
            target[1] + radius * math.sin(angle),
            z,
        )
        cameras.append(look_at_pose(position, target))
    return cameras


def build_system1_like(
    width: int = 480,
    height: int = 270,
    fov_deg: float = 114.0,
    include_sprinkler: bool = False,
) -> SceneSpec:
    """A tank-pump-valve network with three T-fittings, topologically matching
    the single-tank test system: 15 nodes, 14 edges, tree-shaped."""
    z = 0.30  # main run height
    r = 0.035  # pipe radius
    stub_top = 0.42
    branch_top = 0.70
    # Pipes stand off 5 cm from tank/pump/valve bodies (the unmodeled flange);
    # welded pipe-to-pipe joints stay flush. Keeps attached pipes clear of the
    # non-pipe observation clouds that the overlap filter tests against.

    # (class, primitives, endpoints, position)
    layout = [
        (ObjectClass.TANK,
         [("cyl", (-0.86, 0, 0.10), (-0.86, 0, 0.50), 0.13)],
         [(-0.73, 0, z)], (-0.86, 0, z)),
        (ObjectClass.REDUCER_EXPANDER,
         [("cyl", (-0.68, 0, z), (-0.51, 0, z), r)],
         [(-0.68, 0, z), (-0.51, 0, z)], (-0.595, 0, z)),
        (ObjectClass.PUMP,
         [("box", (-0.33, 0, z), (0.13, 0.085, 0.095))],
         [(-0.46, 0, z), (-0.20, 0, z)], (-0.33, 0, z)),
        (ObjectClass.REDUCER_EXPANDER,
         [("cyl", (-0.15, 0, z), (0.02, 0, z), r)],
         [(-0.15, 0, z), (0.02, 0, z)], (-0.065, 0, z)),
        (ObjectClass.PIPE_CROSSING,
         [("cyl", (0.02, 0, z), (0.18, 0, z), r), ("cyl", (0.10, 0, z), (0.10, 0, stub_top), r)],
         [(0.02, 0, z), (0.18, 0, z), (0.10, 0, stub_top)], (0.10, 0, 0.33)),
        (ObjectClass.PIPE,
         [("cyl", (0.18, 0, z), (0.44, 0, z), r)],
         [(0.18, 0, z), (0.44, 0, z)], (0.31, 0, z)),
        (ObjectClass.PIPE_CROSSING,
         [("cyl", (0.44, 0, z), (0.60, 0, z), r), ("cyl", (0.52, 0, z), (0.52, 0, stub_top), r)],
         [(0.44, 0, z), (0.60, 0, z), (0.52, 0, stub_top)], (0.52, 0, 0.33)),
        (ObjectClass.PIPE,
         [("cyl", (0.10, 0, stub_top + 0.05), (0.10, 0, branch_top), r)],
         [(0.10, 0, stub_top + 0.05), (0.10, 0, branch_top)], (0.10, 0, 0.585)),
        (ObjectClass.PIPE,
         [("cyl", (0.60, 0, z), (0.86, 0, z), r)],
         [(0.60, 0, z), (0.86, 0, z)], (0.73, 0, z)),
        (ObjectClass.PIPE_CROSSING,
         [("cyl", (0.86, 0, z), (1.02, 0, z), r), ("cyl", (0.94, 0, z), (0.94, 0, stub_top), r)],
         [(0.86, 0, z), (1.02, 0, z), (0.94, 0, stub_top)], (0.94, 0, 0.33)),
        (ObjectClass.PIPE,
         [("cyl", (0.52, 0, stub_top + 0.05), (0.52, 0, branch_top), r)],
         [(0.52, 0, stub_top + 0.05), (0.52, 0, branch_top)], (0.52, 0, 0.585)),
        (ObjectClass.PIPE,
         [("cyl", (1.02, 0, z), (1.19, 0, z), r)],
         [(1.02, 0, z), (1.19, 0, z)], (1.105, 0, z)),
        (ObjectClass.VALVE,
         [("box", (1.35, 0, z), (0.11, 0.075, 0.075))],
         [(1.24, 0, z), (1.46, 0, z)], (1.35, 0, z)),
        (ObjectClass.PIPE,
         [("cyl", (1.51, 0, z), (1.73, 0, z), r)],
         [(1.51, 0, z), (1.73, 0, z)], (1.62, 0, z)),
        (ObjectClass.PIPE,
         [("cyl", (0.94, 0, stub_top + 0.05), (0.94, 0, branch_top), r)],
         [(0.94, 0, stub_top + 0.05), (0.94, 0, branch_top)], (0.94, 0, 0.585)),
    ]
    edges = [
        (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (4, 7),
        (5, 6), (6, 8), (6, 10), (8, 9), (9, 11), (9, 14),
        (11, 12), (12, 13),
    ]
    if include_sprinkler:
        layout.append(
            (ObjectClass.SPRINKLER,
             [("cyl", (0.94, 0, branch_top), (0.94, 0, 0.76), 0.05)],
             [(0.94, 0, branch_top)], (0.94, 0, 0.73)),
        )
        edges.append((14, 15))

    primitives = []
    nodes = []
    for oid, (cls, prims, endpoints, position) in enumerate(layout):
        for prim in prims:
            if prim[0] == "cyl":
                primitives.append(Cylinder(prim[1], prim[2], prim[3], oid, cls))
            else:
                primitives.append(Box(prim[1], prim[2], oid, cls))
        nodes.append(
            GraphNode(
                node_id=oid,
                cls=cls,
                position=np.array(position, dtype=np.float64),
                endpoints=[np.array(e, dtype=np.float64) for e in endpoints],
            )
        )
    truth = SceneGraph(nodes=nodes, edges={tuple(sorted(e)): 0.0 for e in edges})
    cameras = _orbit_cameras((0.375, 0.0, 0.35), radius=1.5, z=1.15, count=16)
    return SceneSpec(
        name="system1",
        primitives=primitives,
        cameras=cameras,
        truth=truth,
        width=width,
        height=height,
        fov_deg=fov_deg,
    )


BUILTIN_SCENES = {"system1": build_system1_like}


# ---------------------------------------------------------------------------
# scene spec files


def spec_to_dict(spec: SceneSpec) -> dict:
    from .graph import graph_to_dict

    primitives = []
    for prim in spec.primitives:
        if isinstance(prim, Cylinder):
            primitives.append(
                {
                    "kind": "cylinder",
                    "p0": list(prim.p0),
                    "p1": list(prim.p1),
                    "radius": prim.radius,
                    "object_id": prim.object_id,
                    "class": prim.cls.value,
                }
            )
        else:
            primitives.append(
                {
                    "kind": "box",
                    "center": list(prim.center),
                    "half_extents": list(prim.half_extents),
                    "axes": [list(row) for row in prim.axes],
                    "object_id": prim.object_id,
                    "class": prim.cls.value,
                }
            )
    return {
        "name": spec.name,
        "width": spec.width,
        "height": spec.height,
        "fov_deg": spec.fov_deg,
        "primitives": primitives,
        "cameras": [
            {"position": c.position.tolist(), "quaternion": c.quaternion.tolist()}
            for c in spec.cameras
        ],
        "truth": graph_to_dict(spec.truth),
    }


def spec_from_dict(data: dict) -> SceneSpec:
    from .errors import SchemaViolation
    from .graph import parse_graph_dict

    try:
        primitives = []
        for p in data["primitives"]:
            cls = ObjectClass(p["class"])
            if p["kind"] == "cylinder":
                primitives.append(
                    Cylinder(tuple(p["p0"]), tuple(p["p1"]), float(p["radius"]),
                             int(p["object_id"]), cls)
                )
            elif p["kind"] == "box":
                primitives.append(
                    Box(tuple(p["center"]), tuple(p["half_extents"]),
                        int(p["object_id"]), cls,
                        axes=tuple(tuple(row) for row in p.get(
                            "axes", ((1, 0, 0), (0, 1, 0), (0, 0, 1)))))
                )
            else:
                raise SchemaViolation(f"unknown primitive kind '{p['kind']}'")
        cameras = [
            CameraPose(position=np.asarray(c["position"], dtype=np.float64),
                       quaternion=np.asarray(c["quaternion"], dtype=np.float64))
            for c in data["cameras"]
        ]
        for cam in cameras:
            cam.validate()
        return SceneSpec(
            name=str(data.get("name", "custom")),
            primitives=primitives,
            cameras=cameras,
            truth=parse_graph_dict(data["truth"]),
            width=int(data.get("width", 480)),
            height=int(data.get("height", 270)),
            fov_deg=float(data.get("fov_deg", 114.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"scene spec: {exc}") from exc


def load_scene_spec(path) -> SceneSpec:
    import json
    from pathlib import Path

    from .errors import SchemaViolation

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    return spec_from_dict(data)
