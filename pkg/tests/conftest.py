import numpy as np
import pytest
from click.testing import CliRunner

from ivbounds.core import CondProbs, IvDataset, stratum_index, strata_to_condprobs

COMPLIER_EFFECTIVE = stratum_index(0, 1, 0, 1)


def point_mass(s):
    q = np.zeros(16)
    q[s] = 1.0
    return q


@pytest.fixture
def uniform_p():
    return strata_to_condprobs(np.full(16, 1 / 16))


@pytest.fixture
def complier_p():
    return strata_to_condprobs(point_mass(COMPLIER_EFFECTIVE))


@pytest.fixture
def crossed_p():
    # Y(1) would have to be 1 under z=0 and 0 under z=1
    return CondProbs(0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0)


@pytest.fixture
def strata_corpus():
    def draw(size, seed=0):
        return np.random.default_rng(seed).dirichlet(np.ones(16), size=size)

    return draw


@pytest.fixture
def binary_dataset():
    rng = np.random.default_rng(7)
    n = 500
    return IvDataset(
        rng.normal(size=(n, 2)),
        rng.integers(0, 2, size=n),
        rng.integers(0, 2, size=n),
        rng.integers(0, 2, size=n).astype(float),
    )


@pytest.fixture
def runner():
    return CliRunner()
