import numpy as np
import pytest

from transdens.model import (ChainModel, DiffusionModel, GaussianInnovations, RegularityMeta,
                             builtin)


def unit_diffusion(t, x):
    return np.ones(x.shape[:-1] + (x.shape[-1], x.shape[-1])) * np.eye(x.shape[-1])


def custom_model(drift, diffusion=unit_diffusion, dim=1, **meta) -> DiffusionModel:
    return DiffusionModel(dim, drift, diffusion, RegularityMeta(**meta))


def custom_chain(drift, n, diffusion=unit_diffusion, dim=1, **meta) -> ChainModel:
    return ChainModel(n, dim, drift, diffusion, GaussianInnovations(dim, diffusion),
                      RegularityMeta(**meta))


@pytest.fixture
def ou():
    return builtin("ou", {"n": 32})


@pytest.fixture
def constant():
    return builtin("constant", {"n": 16})


@pytest.fixture
def unit_drift():
    """``b = 1``, ``a = 1``."""
    return custom_model(lambda t, x: np.ones_like(x), K=1.0)
