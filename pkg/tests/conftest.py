"""Shared fixtures: small, fast model configurations for the unit tests."""

import numpy as np
import pytest

from plume.controls import ControlVector, Subdivision
from plume.experiments import ExperimentConfig, build_model, finest_subdivision


@pytest.fixture(scope="session")
def small_cfg():
    """Cheap configuration: coarse mesh, short horizon, gentle flow."""
    return ExperimentConfig(name="custom", nx=17, ny=5, t_f=4.0, n_times=41,
                            nu=2.0, truth=[("top", 4.0, 4.5, 100.0)])


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return build_model(small_cfg)


@pytest.fixture(scope="session")
def small_sub(small_cfg):
    return finest_subdivision(small_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def unit_control(sub: Subdivision, index: int, value: float = 1.0):
    theta = np.zeros(sub.n_segments)
    theta[index] = value
    return ControlVector(sub, theta)
