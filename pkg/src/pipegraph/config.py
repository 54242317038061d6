"""Pipeline configuration: the published hyperparameters plus engine knobs.

Defaults are the System 1 parameter column. Config files are flat
``key = value`` text with ``#`` comments::

    np_confidence = 0.70
    enforcement_mode = fixed_point
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import SchemaViolation

_RATIO_FIELDS = (
    "np_confidence",
    "np_iou",
    "np_min_percentage",
    "p_overlap",
    "p_min_confidence",
    "p_w",
    "pipe_nms_iou",
)
_POSITIVE_FIELDS = (
    "np_max_distance",
    "graph_endpoints_max_distance",
    "graph_connections_max_distance",
    "cleanup_eps",
    "match_cluster_eps",
    "keypoint_slot_eps",
    "match_downsample_cell",
    "merge_downsample_cell",
    "overlap_margin",
    "occlusion_tolerance",
    "sor_std_ratio",
    "endpoint_bin_fraction",
)
ENFORCEMENT_MODES = ("fixed_point", "sequential")


@dataclass
class PipelineConfig:
    # Published hyperparameters (System 1 column)
    np_confidence: float = 0.70
    np_iou: float = 0.50
    np_max_distance: float = 0.50
    np_min_percentage: float = 0.20
    p_overlap: float = 0.01
    p_min_confidence: float = 0.85
    p_threshold: float = 0.30
    p_w: float = 0.30
    graph_endpoints_max_distance: float = 0.50
    graph_connections_max_distance: float = 1.00

    # Fixed by the method description: instance-segmentation NMS IoU
    pipe_nms_iou: float = 0.70

    # Clustering / filtering engine defaults
    cleanup_eps: float = 0.05
    cleanup_min_pts: int = 8
    match_cluster_eps: float = 0.10
    match_cluster_min_pts: int = 4
    sor_k: int = 16
    sor_std_ratio: float = 2.0
    keypoint_slot_eps: float = 0.10
    match_downsample_cell: float = 0.02
    merge_downsample_cell: float = 0.01
    overlap_margin: float = 0.03
    occlusion_tolerance: float = 0.08
    endpoint_bin_fraction: float = 0.05

    enforcement_mode: str = "fixed_point"
    seed: int = 0

    def validate(self) -> None:
        for name in _RATIO_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SchemaViolation(f"{name}: {value} outside [0, 1]")
        if self.p_threshold < 0:
            raise SchemaViolation(f"p_threshold: {self.p_threshold} must be >= 0")
        for name in _POSITIVE_FIELDS:
            value = getattr(self, name)
            if value <= 0:
                raise SchemaViolation(f"{name}: {value} must be positive")
        for name in ("cleanup_min_pts", "match_cluster_min_pts", "sor_k"):
            if getattr(self, name) < 1:
                raise SchemaViolation(f"{name}: must be >= 1")
        if self.enforcement_mode not in ENFORCEMENT_MODES:
            raise SchemaViolation(
                f"enforcement_mode: '{self.enforcement_mode}' not one of {ENFORCEMENT_MODES}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def parse_config_text(text: str) -> PipelineConfig:
    known = {f.name: f.type for f in fields(PipelineConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaViolation(f"config line {lineno}: expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in known:
            raise SchemaViolation(f"config line {lineno}: unknown key '{key}'")
        if key in ("enforcement_mode",):
            values[key] = value.strip("\"'")
        elif key in ("seed", "cleanup_min_pts", "match_cluster_min_pts", "sor_k"):
            try:
                values[key] = int(value)
            except ValueError:
                raise SchemaViolation(f"{key}: expected integer, got '{value}'") from None
        else:
            try:
                values[key] = float(value)
            except ValueError:
                raise SchemaViolation(f"{key}: expected number, got '{value}'") from None
    config = PipelineConfig(**values)
    config.validate()
    return config


def load_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def write_config(config: PipelineConfig, path) -> None:
    lines = [f"{name} = {value}" for name, value in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
