import numpy as np
import pytest
from hypothesis import settings

from weakpose.geometry import CameraIntrinsics
from weakpose.simkit import SimConfig, generate_dataset
from weakpose.skeleton import default_topology

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def topology():
    return default_topology()


@pytest.fixture(scope="session")
def K():
    return SimConfig().intrinsics()


@pytest.fixture
def K640():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(SimConfig(n_sequences=3, frames_per_sequence=5, n_points=256), rng_seed=7)


def dense_ray_distance(p, origin, direction, t_max=100.0, n_coarse=20_000, n_fine=2_000):
    """Brute-force distance to a half-line by sampling t on [0, t_max], then
    resampling densely around the best coarse sample."""
    p = np.atleast_2d(p)
    origin = np.broadcast_to(origin, p.shape)
    direction = np.broadcast_to(direction, p.shape)
    out = np.empty(len(p))
    t = np.linspace(0.0, t_max, n_coarse)
    step = t[1] - t[0]
    for i in range(len(p)):
        pts = origin[i] + t[:, None] * direction[i]
        best = t[np.argmin(np.linalg.norm(pts - p[i], axis=1))]
        fine = np.linspace(max(best - step, 0.0), best + step, n_fine)
        pts = origin[i] + fine[:, None] * direction[i]
        out[i] = np.linalg.norm(pts - p[i], axis=1).min()
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
