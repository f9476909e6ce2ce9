import numpy as np
import pytest

from doorsim import worldgen


@pytest.fixture(scope="session")
def pull_world():
    return worldgen.sample_world(3, 1, "pull", "pull")


@pytest.fixture(scope="session")
def lever_world():
    return worldgen.sample_world(3, 2, "lever", "pull")


@pytest.fixture(scope="session")
def round_world():
    return worldgen.sample_world(3, 5, "round", "pull")


@pytest.fixture(scope="session")
def push_world():
    return worldgen.sample_world(3, 4, "pull", "push")


@pytest.fixture(scope="session")
def world_sample_2k():
    """Shared medium-size sample for distribution checks."""
    return [worldgen.sample_world(99, i, "lever", "pull") for i in range(2000)]


def ks_statistic(values, lo, hi):
    """Kolmogorov-Smirnov distance between a sample and Uniform[lo, hi]."""
    x = np.sort((np.asarray(values) - lo) / (hi - lo))
    n = len(x)
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - x), np.max(x - grid_lo)))
