import numpy as np
import pytest

from lanebench.sensor import CameraModel
from lanebench.track import TrackParams, make_circle_track, make_track, make_track_from_centers


@pytest.fixture(scope="session")
def camera():
    return CameraModel()


@pytest.fixture(scope="session")
def figure_eight():
    """Training-style track: figure-eight loop, 10 waypoint sets, ds = 0.1 m."""
    return make_track(TrackParams(seed=7, ds=0.1))


@pytest.fixture(scope="session")
def circle_track():
    """Low-curvature rendered corridor: radius-5 loop, one table at ds = 0.05 m."""
    return make_circle_track(5.0, TrackParams(ds=0.05, j=2, w=0, perturb_radius=0.0), n=160)


@pytest.fixture(scope="session")
def straight_corridor():
    """Open straight cone corridor, 40 m, for lane-fit and MPC tests."""
    centers = np.stack([np.linspace(0.0, 40.0, 161), np.zeros(161)], axis=-1)
    return make_track_from_centers(
        centers, TrackParams(ds=0.05, perturb_radius=0.0), closed=False
    )
