"""Scene bundle parsing, validation and detection-level filtering.

On-disk format:
  * ``scene.json`` manifest (UTF-8 JSON) describing every image: intrinsics
    (either ``fov_deg`` or explicit fx/fy/cx/cy), pose, depth file name and
    detections
  * one binary depth file per image: magic ``PGDP``, u32 width, u32 height
    (little-endian), then width*height float32 little-endian row-major
    planar depths in meters
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import (
    DepthDimensionMismatch,
    MissingFile,
    SchemaViolation,
)
from .model import (
    DETECTION_CLASSES,
    KEYPOINT_LIMITS,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    Detection,
    ImageRecord,
    ObjectClass,
    SceneBundle,
)

DEPTH_MAGIC = b"PGDP"


def read_depth(path: Path) -> DepthMap:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"depth file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != DEPTH_MAGIC:
        raise SchemaViolation(f"depth file {path.name}: bad magic")
    width, height = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * width * height
    if len(blob) != expected:
        raise DepthDimensionMismatch(
            f"depth file {path.name}: {len(blob) - 12} payload bytes, "
            f"expected {width}x{height} float32"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=12).reshape(height, width)
    return DepthMap(values=values.copy())


def write_depth(path: Path, depth: DepthMap) -> None:
    payload = depth.values.astype("<f4").tobytes()
    header = DEPTH_MAGIC + struct.pack("<II", depth.width, depth.height)
    Path(path).write_bytes(header + payload)


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaViolation(f"{where}: missing field '{key}'")
    return record[key]


def _parse_intrinsics(img: dict, where: str) -> CameraIntrinsics:
    width = int(_require(img, "width", where))
    height = int(_require(img, "height", where))
    if "fov_deg" in img:
        fov = float(img["fov_deg"])
        if not 0.0 < fov < 180.0:
            raise SchemaViolation(f"{where}: fov_deg out of range (0, 180)")
        f = width / (2.0 * math.tan(math.radians(fov) / 2.0))
        intr = CameraIntrinsics(width, height, f, f, width / 2.0, height / 2.0)
    else:
        try:
            intr = CameraIntrinsics(
                width,
                height,
                float(_require(img, "fx", where)),
                float(_require(img, "fy", where)),
                float(_require(img, "cx", where)),
                float(_require(img, "cy", where)),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(f"{where}: non-numeric intrinsics ({exc})") from exc
    intr.validate()
    return intr


def _parse_pose(img: dict, where: str) -> CameraPose:
    pose = _require(img, "pose", where)
    position = _require(pose, "position", f"{where}.pose")
    quaternion = _require(pose, "quaternion", f"{where}.pose")
    if len(position) != 3:
        raise SchemaViolation(f"{where}.pose.position: expected 3 values")
    if len(quaternion) != 4:
        raise SchemaViolation(f"{where}.pose.quaternion: expected 4 values (w, x, y, z)")
    out = CameraPose(position=np.array(position, dtype=np.float64),
                     quaternion=np.array(quaternion, dtype=np.float64))
    out.validate()
    return out


def _parse_detection(det: dict, intr: CameraIntrinsics, where: str) -> Detection:
    det_id = int(_require(det, "id", where))
    cls_name = _require(det, "class", where)
    try:
        cls = ObjectClass(cls_name)
    except ValueError:
        raise SchemaViolation(f"{where}: unknown class '{cls_name}'") from None
    if cls not in DETECTION_CLASSES:
        raise SchemaViolation(f"{where}: class '{cls_name}' is not a detector class")
    confidence = float(_require(det, "confidence", where))
    if not 0.0 <= confidence <= 1.0:
        raise SchemaViolation(f"{where}: confidence {confidence} outside [0, 1]")
    bbox = _require(det, "bbox", where)
    if len(bbox) != 4:
        raise SchemaViolation(f"{where}: bbox must have 4 values")
    x0, y0, x1, y1 = (float(b) for b in bbox)
    if not (x0 < x1 and y0 < y1):
        raise SchemaViolation(f"{where}: bbox must satisfy x_min < x_max, y_min < y_max")
    if x0 < 0 or y0 < 0 or x1 > intr.width or y1 > intr.height:
        raise SchemaViolation(f"{where}: bbox outside image bounds")
    keypoints = np.asarray(det.get("keypoints", []), dtype=np.float64).reshape(-1, 2)
    mask = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in det.get("mask", [])]
    if cls is ObjectClass.PIPE:
        if keypoints.shape[0]:
            raise SchemaViolation(f"{where}: Pipe detections carry no keypoints")
        if not mask:
            raise SchemaViolation(f"{where}: Pipe detections require a mask")
    else:
        if mask:
            raise SchemaViolation(f"{where}: only Pipe detections carry a mask")
        limit = KEYPOINT_LIMITS[cls]
        if keypoints.shape[0] > limit:
            raise SchemaViolation(
                f"{where}: {cls.value} allows at most {limit} keypoints, "
                f"got {keypoints.shape[0]}"
            )
    return Detection(det_id=det_id, cls=cls, confidence=confidence,
                     bbox=(x0, y0, x1, y1), keypoints=keypoints, mask=mask)


def load_scene(path) -> SceneBundle:
    """Parse and validate a scene bundle directory."""
    root = Path(path)
    manifest_path = root / "scene.json"
    if not manifest_path.is_file():
        raise MissingFile(f"scene manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"scene.json: invalid JSON ({exc})") from exc
    images_raw = _require(manifest, "images", "scene.json")
    if not images_raw:
        raise SchemaViolation("scene.json: images list is empty")

    images: list[ImageRecord] = []
    seen_ids: set[str] = set()
    for idx, img in enumerate(images_raw):
        where = f"images[{idx}]"
        image_id = str(_require(img, "image_id", where))
        if image_id in seen_ids:
            raise SchemaViolation(f"{where}: duplicate image_id '{image_id}'")
        seen_ids.add(image_id)
        intr = _parse_intrinsics(img, where)
        pose = _parse_pose(img, where)
        depth = read_depth(root / _require(img, "depth_file", where))
        if depth.width != intr.width or depth.height != intr.height:
            raise DepthDimensionMismatch(
                f"{where}: depth is {depth.width}x{depth.height}, "
                f"image is {intr.width}x{intr.height}"
            )
        detections = [
            _parse_detection(det, intr, f"{where}.detections[{k}]")
            for k, det in enumerate(img.get("detections", []))
        ]
        det_ids = [d.det_id for d in detections]
        if len(det_ids) != len(set(det_ids)):
            raise SchemaViolation(f"{where}: duplicate detection ids")
        images.append(ImageRecord(image_id, intr, pose, depth, detections))
    return SceneBundle(images=images, metadata=dict(manifest.get("metadata", {})))


def write_scene(bundle: SceneBundle, path) -> None:
    """Write a bundle in the exact format load_scene reads (lossless round trip)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    images = []
    for img in bundle.images:
        depth_file = f"depth_{img.image_id}.pgdp"
        write_depth(root / depth_file, img.depth)
        detections = []
        for det in img.detections:
            entry = {
                "id": det.det_id,
                "class": det.cls.value,
                "confidence": det.confidence,
                "bbox": list(det.bbox),
                "keypoints": det.keypoints.tolist(),
            }
            if det.cls is ObjectClass.PIPE:
                entry["mask"] = [p.tolist() for p in det.mask]
            detections.append(entry)
        images.append(
            {
                "image_id": img.image_id,
                "width": img.intrinsics.width,
                "height": img.intrinsics.height,
                "fx": img.intrinsics.fx,
                "fy": img.intrinsics.fy,
                "cx": img.intrinsics.cx,
                "cy": img.intrinsics.cy,
                "pose": {
                    "position": img.pose.position.tolist(),
                    "quaternion": img.pose.quaternion.tolist(),
                },
                "depth_file": depth_file,
                "detections": detections,
            }
        )
    manifest = {"images": images, "metadata": bundle.metadata}
    (root / "scene.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )


def filter_by_confidence(detections: list[Detection], threshold: float) -> list[Detection]:
    """Detections with confidence >= threshold, original order preserved."""
    return [d for d in detections if d.confidence >= threshold]


def bbox_iou(a, b) -> float:
    """Intersection-over-union of two (x0, y0, x1, y1) boxes; 0 when disjoint."""
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy class-wise NMS.

    Candidates are visited by confidence descending (ties by id ascending);
    a candidate is dropped when its IoU with an already kept detection of
    the same class exceeds the threshold. Output follows the visit order.
    """
    ordered = sorted(detections, key=lambda d: (-d.confidence, d.det_id))
    kept: list[Detection] = []
    for det in ordered:
        suppressed = any(
            k.cls == det.cls and bbox_iou(det.bbox, k.bbox) > iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(det)
    return kept
