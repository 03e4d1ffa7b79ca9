import numpy as np
import pytest

from statfem.forward import DiffusionField, SourceField
from statfem.gp import RandomFieldSpec, SqExpKernel, constant_mean
from statfem.mesh import build_interval_mesh


@pytest.fixture(scope="session")
def interval32():
    return build_interval_mesh(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_source():
    return SourceField(RandomFieldSpec(constant_mean(1.0), None))


@pytest.fixture
def random_source():
    return SourceField(RandomFieldSpec(constant_mean(1.0), SqExpKernel(0.2, 0.5)))


@pytest.fixture
def fixed_diffusivity():
    def build(n_e, value=0.0):
        return DiffusionField(values=np.full(n_e, value))

    return build


def random_spd(rng, n, condition_boost=1.0):
    """Well-conditioned random SPD matrix for oracle comparisons."""
    m = rng.standard_normal((n, n))
    return m @ m.T + condition_boost * n * np.eye(n)
