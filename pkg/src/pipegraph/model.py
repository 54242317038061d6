"""Core domain types shared across the pipeline.

Point clouds are plain ``(N, 3)`` float64 numpy arrays in the world frame,
meters. Everything that carries structure beyond an array is a dataclass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidQuaternion


class ObjectClass(str, Enum):
    PIPE = "Pipe"
    PUMP = "Pump"
    TANK = "Tank"
    VALVE = "Valve"
    SPRINKLER = "Sprinkler"
    PIPE_CROSSING = "PipeCrossing"
    REDUCER_EXPANDER = "ReducerExpander"


# Classes a detector can emit (fused-only types like PipeCrossing never
# appear in detections).
DETECTION_CLASSES = (
    ObjectClass.PIPE,
    ObjectClass.PUMP,
    ObjectClass.TANK,
    ObjectClass.VALVE,
    ObjectClass.SPRINKLER,
)

NON_PIPE_CLASSES = (
    ObjectClass.PUMP,
    ObjectClass.TANK,
    ObjectClass.VALVE,
    ObjectClass.SPRINKLER,
)

# Pipe-family node types produced by graph typing rules.
PIPE_FAMILY = frozenset(
    {ObjectClass.PIPE, ObjectClass.PIPE_CROSSING, ObjectClass.REDUCER_EXPANDER}
)

# Maximum connection points per non-pipe class: one for tanks, two for pumps
# and valves. Sprinklers take one (a sprinkler head has a single inlet).
KEYPOINT_LIMITS = {
    ObjectClass.TANK: 1,
    ObjectClass.PUMP: 2,
    ObjectClass.VALVE: 2,
    ObjectClass.SPRINKLER: 1,
}

QUATERNION_NORM_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self) -> None:
        from .errors import SchemaViolation

        if self.width <= 0 or self.height <= 0:
            raise SchemaViolation("intrinsics width/height must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaViolation("intrinsics fx/fy must be positive")
        if not (0 <= self.cx < self.width):
            raise SchemaViolation("intrinsics cx out of image bounds")
        if not (0 <= self.cy < self.height):
            raise SchemaViolation("intrinsics cy out of image bounds")


@dataclass
class CameraPose:
    """Camera position plus camera-to-world rotation as a (w, x, y, z) quaternion."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64).reshape(4)

    def validate(self) -> None:
        norm = float(np.linalg.norm(self.quaternion))
        if abs(norm - 1.0) > QUATERNION_NORM_TOL:
            raise InvalidQuaternion(f"quaternion norm {norm!r} is not 1 within 1e-9")

    def rotation(self) -> np.ndarray:
        """3x3 camera-to-world rotation matrix."""
        w, x, y, z = self.quaternion
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )


@dataclass
class DepthMap:
    """Per-pixel depth along the optical axis, meters; <= 0 or non-finite marks invalid."""

    values: np.ndarray  # (height, width) float32

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)


@dataclass
class Detection:
    """One 2D detection: bbox always, keypoints for non-pipe classes, mask polygons for pipes."""

    det_id: int
    cls: ObjectClass
    confidence: float
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    keypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    mask: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.mask = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.mask]


@dataclass
class ImageRecord:
    image_id: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    depth: DepthMap
    detections: list[Detection]


@dataclass
class SceneBundle:
    images: list[ImageRecord]
    metadata: dict = field(default_factory=dict)


@dataclass
class WorldObject:
    """A fused 3D object: member cloud, up to 3 endpoints, and source detections."""

    object_id: int
    cls: ObjectClass
    cloud: np.ndarray  # (N, 3) float64
    endpoints: list[np.ndarray] = field(default_factory=list)
    sources: list[tuple[str, int]] = field(default_factory=list)

    def centroid(self) -> np.ndarray:
        return self.cloud.mean(axis=0)


@dataclass
class RotatedBox:
    """PCA-oriented bounding box: axes rows are orthonormal, extents sorted descending."""

    center: np.ndarray  # (3,)
    axes: np.ndarray  # (3, 3), row k = axis k
    half_extents: np.ndarray  # (3,), descending


def as_cloud(points) -> np.ndarray:
    """Coerce to an (N, 3) float64 contiguous array."""
    arr = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if arr.size == 0:
        return arr.reshape(0, 3)
    return arr.reshape(-1, 3)
