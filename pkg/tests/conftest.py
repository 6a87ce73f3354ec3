import sys

import numpy as np
import pytest
from hypothesis import settings

from segpool.synthetic import SceneSpec, generate_synthetic_sequence

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def blob(center, n=300, scale=0.3, seed=0):
    """Dense random blob of points around ``center``."""
    rng = np.random.default_rng(seed)
    return np.asarray(center, dtype=np.float64) + rng.normal(scale=scale, size=(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_sequence():
    spec = SceneSpec(waypoints=[[0, 0], [30, 0]], num_frames=12, objects_per_scene=8, noise=0.01)
    return generate_synthetic_sequence(spec, seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
