"""pipegraph: photogrammetry-to-graph reconstruction of hydraulic systems.

Turns per-image depth maps, camera poses and 2D object detections into a
typed relational graph (nodes = objects, edges = physical connections),
with a synthetic scene generator for test data.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
from .config import PipelineConfig  # noqa: F401
from .model import ObjectClass, SceneBundle, WorldObject  # noqa: F401
from .pipeline import run_pipeline  # noqa: F401
