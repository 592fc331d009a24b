import numpy as np
import pytest

from occlupose.geometry import PointCloud, random_rigid_pose


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_random_cloud(rng, n, scale=1.0):
    return PointCloud(rng.uniform(-scale, scale, size=(n, 3)))


def make_pose(rng, max_translation=0.5):
    return random_rigid_pose(rng, max_translation=max_translation)
