import numpy as np
import pytest

from deepshore import phantom, sphere
from deepshore.shore import QSpaceSamples


@pytest.fixture(scope="session")
def quad_16_33():
    return sphere.gauss_sphere_quadrature(16, 33)


@pytest.fixture(scope="session")
def dirs100():
    return sphere.generate_uniform_directions(100, seed=11, iterations=500)


@pytest.fixture(scope="session")
def dirs200():
    return sphere.generate_uniform_directions(200, seed=3, iterations=300)


@pytest.fixture(scope="session")
def four_shell_scheme():
    """25 repulsion directions on each of the four standard shells."""
    cfg = phantom.PhantomConfig(n_voxels=1, rotations_per_voxel=0, snr=float("inf"), seed=3)
    return phantom.build_acquisition(cfg)


@pytest.fixture(scope="session")
def noiseless_voxels(four_shell_scheme):
    """20 noiseless phantom voxels with ground-truth FODs, no rotations."""
    cfg = phantom.PhantomConfig(
        n_voxels=20, rotations_per_voxel=0, snr=float("inf"), seed=5
    )
    return phantom.generate_dataset(cfg)
