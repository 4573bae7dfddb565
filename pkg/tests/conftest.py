from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from msgrasp.geometry import CameraIntrinsics

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intr():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def random_normals(rng, shape):
    n = rng.normal(size=shape + (3,))
    n[..., 2] = -np.abs(n[..., 2]) - 0.1
    return n / np.linalg.norm(n, axis=-1, keepdims=True)
