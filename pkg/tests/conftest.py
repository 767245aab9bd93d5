import numpy as np
import pytest

import nlostk as nk


@pytest.fixture
def z1_plane():
    """Wall at Z = 1 m facing the scan head."""
    return nk.build_wall_frame((0.0, 0.0, -1.0), (0.0, 0.0, 1.0))


@pytest.fixture
def identity_galvo():
    """1 rad/V on both axes, no offsets, wide enough for unit tests."""
    return nk.GalvoModel(eps=np.zeros(2), beta=np.eye(2) * 0.1, v_range=5.0)


def small_rig(**kwargs):
    defaults = dict(wall_distance=1.0, tilt_deg=4.0, photon_scale=2e3, num_bins=4096)
    defaults.update(kwargs)
    return nk.default_rig(**defaults)


@pytest.fixture
def rig():
    return small_rig()
