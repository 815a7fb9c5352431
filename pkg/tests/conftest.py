import numpy as np
import pytest

from overlap_mcl.scan import SensorIntrinsics
from overlap_mcl import sim


@pytest.fixture(scope="session")
def small_intr():
    """Tiny projection for fast unit tests."""
    return SensorIntrinsics(height=12, width=60, fov_up_deg=15.0,
                            fov_down_deg=15.0, r_min=0.5, r_max=30.0)


@pytest.fixture(scope="session")
def desk_intr():
    return sim.DESK_INTRINSICS


@pytest.fixture(scope="session")
def world():
    return sim.make_world(seed=3)


@pytest.fixture(scope="session")
def ground_world():
    """Ground plane only, no boxes."""
    return sim.WorldModel((-100.0, 100.0, -100.0, 100.0), ())


def random_shell_cloud(rng, n, r_lo=2.0, r_hi=50.0):
    """Uniform directions, ranges in [r_lo, r_hi]."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(r_lo, r_hi, size=(n, 1))
