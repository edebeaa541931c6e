import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import vardepth  # noqa: F401  (enables x64 before any jax array is built)
from vardepth.geometry import CameraIntrinsics
from vardepth.synth import synth_scene

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_k():
    return CameraIntrinsics.centered(64, 48, 56.0)


@pytest.fixture(scope="session")
def bundled_scene():
    from vardepth.experiment import load_experiment

    exp = load_experiment()
    return synth_scene(exp["scene"], int(exp["seed"]))


@pytest.fixture(scope="session")
def tiny_scene():
    return synth_scene({"width": 16, "height": 12, "focal": 14.0, "n_frames": 2}, seed=0)
