"""Shared fixtures and frozen reference values.

Reference values marked "mpmath" were computed once at 40 significant digits by
an independent route: the boundary ``b*`` solves ``J'(b-) = 1`` for the
three-piece reward assembled from its own 3x3 linear pasting system, not from
the closed-form smooth-fit function used by the package.
"""
import math

import pytest

from randstop.construct import construct_equilibrium
from randstop.problems import bm_abs, two_well

# mpmath: root of z tanh z = 1
Z_TILDE = 1.199678640257733833916369848641141944261
Z_TILDE_HALF_SQ = 0.7196144199453225753879898183274264741943

# mpmath: (r, T) -> (b*, J(0), J(a*/2), J((a*+b*)/2))
FREE_BOUNDARY_REF = {
    (0.01, 10.0): (5.835879139331169031, 2.031543878160843132, 2.362938376922853756, 4.388037069334196618),
    (0.5, 1.0): (1.134370995852504502, 0.5607791738671243645, 0.5644792469503336695, 0.7580508836065564023),
    (0.1, 5.0): (2.536530658430332021, 1.253940353133063693, 1.262213968068836932, 1.695053306148041021),
}
B_STAR_071 = 1.197276207263106904  # r = 0.5, T = 1.42

X_TILDE_072 = 0.9997322002147782134  # z_tilde / sqrt(1.44)


@pytest.fixture(scope="session")
def fb_result():
    """Free-boundary equilibrium, r = 0.01, T = 10."""
    return construct_equilibrium(bm_abs(0.01, 10.0))


@pytest.fixture(scope="session")
def pure_result():
    """Pure threshold equilibrium, r = 0.5, T = 2."""
    return construct_equilibrium(bm_abs(0.5, 2.0))


@pytest.fixture(scope="session")
def sub_result():
    """Full randomization, r = 0, T = 1."""
    return construct_equilibrium(bm_abs(0.0, 1.0))


@pytest.fixture(scope="session")
def two_well_result():
    return construct_equilibrium(two_well(0.72, 1.0))


def sqrt_half(T):
    return math.sqrt(T / 2.0)
