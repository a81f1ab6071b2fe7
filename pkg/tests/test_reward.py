import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randstop.errors import DomainError, NumericError
from randstop.fields import TruncationWarning, truncation_sensitivity
from randstop.ode import max_residual, one_sided_derivative
from randstop.problems import bm_abs, bm_square, two_well
from randstop.reward import (reward_closed_form_bm, reward_field, reward_randomized_bm_r0,
                             reward_threshold_bm)
from randstop.strategy import OpenSetUnion, RateFunction, Strategy

from conftest import FREE_BOUNDARY_REF, Z_TILDE

INF = math.inf


def fb(b, T):
    a = b - math.sqrt(T)
    return Strategy(OpenSetUnion([(-b, b)]), RateFunction.indicator(-a, a, 1.0 / T), T)


@pytest.mark.parametrize("T", [1.0, 4.0])
def test_full_randomization_r0(T):
    J = reward_field(bm_abs(0.0, T), Strategy.full_randomization(-INF, INF, T), n=4096)
    m = np.abs(J.grid) <= 5 * math.sqrt(T)
    exact = reward_randomized_bm_r0(T, J.grid[m])
    assert np.max(np.abs(J.values[m] - exact) / exact) < 1e-3
    assert J(0.0) == pytest.approx(math.sqrt(T / 2), rel=1e-3)


def test_pure_threshold_cosh():
    r = 0.5
    xt = Z_TILDE / math.sqrt(2 * r)
    J = reward_field(bm_abs(r, 2.0), Strategy.pure([(-xt, xt)], 2.0), n=2048)
    exact = np.where(np.abs(J.grid) < xt, xt * np.cosh(J.grid) / math.cosh(xt), np.abs(J.grid))
    assert np.max(np.abs(J.values - exact)) < 1e-6


@pytest.mark.parametrize("g", [lambda x: 1 + x * x, lambda x: np.exp(x)])
def test_r0_pure_interval_is_linear(g):
    from randstop.diffusion import Payoff
    from randstop.problems import brownian
    spec = brownian(0.0, 1.0, Payoff.smooth(g), "t")
    l, u = -0.7, 1.3
    J = reward_field(spec, Strategy.pure([(l, u)], 1.0), n=256)
    m = (J.grid > l) & (J.grid < u)
    lin = g(l) + (g(u) - g(l)) * (J.grid[m] - l) / (u - l)
    assert np.max(np.abs(J.values[m] - lin)) < 1e-12


@pytest.mark.parametrize("rT", list(FREE_BOUNDARY_REF))
def test_closed_form_against_frozen_values(rT):
    r, T = rT
    b, j0, ja, jm = FREE_BOUNDARY_REF[rT]
    a = b - math.sqrt(T)
    got = reward_closed_form_bm(r, T, b, [0.0, a / 2, (a + b) / 2])
    assert np.allclose(got, [j0, ja, jm], rtol=1e-12)


def test_closed_form_pieces():
    r, T = 0.01, 10.0
    b = FREE_BOUNDARY_REF[(r, T)][0]
    assert reward_closed_form_bm(r, T, b, 7.5) == 7.5
    assert reward_closed_form_bm(r, T, b, b) == b
    assert reward_closed_form_bm(r, T, b, np.nextafter(b, 0)) == pytest.approx(b, abs=1e-12)


def test_closed_form_domain():
    with pytest.raises(DomainError):
        reward_closed_form_bm(0.01, 10.0, 3.0, 0.0)


@pytest.mark.parametrize("rT", list(FREE_BOUNDARY_REF))
def test_field_matches_closed_form(rT):
    r, T = rT
    b = FREE_BOUNDARY_REF[rT][0]
    J = reward_field(bm_abs(r, T), fb(b, T), n=4096)
    xs = np.linspace(-1.5 * b, 1.5 * b, 301)
    assert np.max(np.abs(J(xs) - reward_closed_form_bm(r, T, b, xs))) < 1e-3


def test_field_residual_and_pasting():
    r, T = 0.01, 10.0
    b = FREE_BOUNDARY_REF[(r, T)][0]
    s = fb(b, T)
    spec = bm_abs(r, T)
    J = reward_field(spec, s, n=2048)
    comp = J.restricted(-b, b)
    q = lambda x: r + s.psi(x)
    src = lambda x: s.psi(x) * spec.payoff.mid(x)
    from randstop.ode import Field
    inner = Field(comp.grid, comp.values, breaks=tuple(i for i, x in enumerate(comp.grid)
                                                       if x in (-b + math.sqrt(T), b - math.sqrt(T), 0.0)))
    assert max_residual(spec, inner, q, src) <= 1e-6
    a = b - math.sqrt(T)
    i = int(np.argmin(np.abs(J.grid - a)))
    assert one_sided_derivative(J, J.grid[i], "left") == pytest.approx(
        one_sided_derivative(J, J.grid[i], "right"), abs=1e-5)


def test_equal_to_payoff_off_D():
    spec = two_well(0.72, 1.0)
    s = Strategy.pure([(-3, -1), (1, 3)], 1.0)
    J = reward_field(spec, s, n=512)
    off = ~s.D.contains(J.grid)
    assert np.array_equal(J.values[off], spec.payoff(J.grid[off]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.3, 4.0), st.floats(0.0, 2.0))
def test_nonnegative_and_continuous(r, width, c):
    spec = bm_abs(r, 1.0)
    s = Strategy.pure([(c - width, c + width)], 1.0)
    J = reward_field(spec, s, n=512)
    assert np.min(J.values) >= 0.0
    for p in (c - width, c + width):
        assert J(p) == pytest.approx(abs(p), abs=1e-12)


def test_unbounded_pure_component_at_r0():
    with pytest.raises(NumericError, match="non-integrable horizon"):
        reward_field(bm_square(0.0, 1.0), Strategy.pure([(-INF, INF)], 1.0))


def test_truncation_edge_mismatch_reported():
    spec = bm_abs(0.0, 1.0)
    J = reward_field(spec, Strategy.full_randomization(-INF, INF, 1.0), n=1024)
    # the exponential tail of the exact reward at |x| = 10 is below 1e-6
    assert all(v < 1e-5 for v in J.meta["edge_mismatch"].values())
    with pytest.warns(TruncationWarning):
        reward_field(bm_abs(0.0, 1.0, truncation=(-1.0, 1.0)), Strategy.full_randomization(-INF, INF, 1.0), n=256)


def test_truncation_sensitivity_small():
    spec = bm_abs(0.0, 1.0)
    s = Strategy.full_randomization(-INF, INF, 1.0)
    # dominated by the change of grid spacing, not by the far boundary
    assert truncation_sensitivity(lambda sp: reward_field(sp, s, n=2048), spec) < 1e-3


def test_threshold_reward_formula():
    assert reward_threshold_bm(0.5, 1.0, 0.0) == pytest.approx(1.0 / math.cosh(1.0))
    assert reward_threshold_bm(0.5, 1.0, -2.0) == 2.0
