import numpy as np
import pytest

from pipegraph.config import PipelineConfig
from pipegraph.model import CameraIntrinsics, CameraPose


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def identity_pose():
    return CameraPose(position=np.zeros(3), quaternion=np.array([1.0, 0, 0, 0]))


@pytest.fixture
def simple_intrinsics():
    return CameraIntrinsics(width=64, height=48, fx=100.0, fy=100.0, cx=32.0, cy=24.0)


@pytest.fixture
def default_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def system1_scene():
    """Noise-free System-1 bundle, rendered once for the whole session."""
    from pipegraph.synth import build_system1_like, generate

    return generate(build_system1_like(), seed=0)


def random_pose(rng) -> CameraPose:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return CameraPose(position=rng.uniform(-5, 5, 3), quaternion=q)
