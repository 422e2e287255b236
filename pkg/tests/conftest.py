"""Shared fixtures: problem instances and transient-sampled seeds."""

import numpy as np
import pytest

from parapss import (PropagatorConfig, TimeGrid, colpitts_surrogate,
                     colpitts_system, vanderpol_surrogate, vanderpol_system)
from parapss.bench import state_from_transient
from parapss.systems import OdeSystem


@pytest.fixture(scope="session")
def colpitts():
    return colpitts_system()


@pytest.fixture(scope="session")
def colpitts_A_c():
    return colpitts_surrogate()


@pytest.fixture(scope="session")
def vdp():
    return vanderpol_system(1.0)


@pytest.fixture(scope="session")
def vdp_A_c():
    return vanderpol_surrogate(1.0)


@pytest.fixture(scope="session")
def vdp_grid():
    return TimeGrid.uniform(10)


@pytest.fixture(scope="session")
def vdp_prop():
    # 100 fine steps per window = 1000 per period; patient stage Newton
    # because one coarse step spans 1/10 of the cycle
    return PropagatorConfig(fine_steps_per_window=100, newton_max_iter=50)


@pytest.fixture(scope="session")
def vdp_seed(vdp, vdp_grid, vdp_prop):
    """Shooting state sampled from a 6-cycle Van der Pol transient."""
    state, units = state_from_transient(vdp, [2.0, 0.0], 6.6, vdp_grid,
                                        vdp_prop, periods=6,
                                        steps_per_period=1000)
    return state


def make_zero_system(dim):
    """f identically zero: every state is an equilibrium."""
    return OdeSystem(dim=dim, mass=np.eye(dim),
                     rhs=lambda u: np.zeros(dim),
                     rhs_jacobian=lambda u: np.zeros((dim, dim)),
                     name="zero")


def make_scalar_linear(a, c=0.0, mass=1.0):
    """One-dimensional affine system m u' = a u + c."""
    return OdeSystem(dim=1, mass=np.array([[mass]]),
                     rhs=lambda u: np.array([a * u[0] + c]),
                     rhs_jacobian=lambda u: np.array([[a]]),
                     name="scalar-linear")


def make_affine_system(A, c):
    """d-dimensional affine system u' = A u + c with identity mass."""
    A = np.asarray(A, float)
    c = np.asarray(c, float)
    return OdeSystem(dim=c.size, mass=np.eye(c.size),
                     rhs=lambda u: A @ u + c,
                     rhs_jacobian=lambda u: A,
                     name="affine")
