import numpy as np
import pytest

from slidingoc import IntegratorOptions, integrate, radau_iia
from slidingoc.problems import get_problem


@pytest.fixture(scope="session")
def tab():
    return radau_iia(3)


@pytest.fixture(scope="session")
def mass_spring_spec():
    return get_problem("mass-spring")


@pytest.fixture(scope="session")
def race_car_spec():
    return get_problem("race-car")


@pytest.fixture(scope="session")
def mass_spring_sliding(tab, mass_spring_spec):
    """Nominal mass-spring run entering sliding and staying to tf."""
    spec = mass_spring_spec
    grid = spec.grid(values=np.zeros((20, 1)))
    traj = integrate(spec.model, tab, grid, spec.x0, IntegratorOptions(n_steps=100))
    return spec, grid, traj
