import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randstop.diffusion import Payoff, ProblemSpec, constant
from randstop.errors import DomainError, NumericError
from randstop.ode import (BoundaryCondition as BC, Field, build_grid, concat_fields, fd_weights, max_residual,
                          one_sided_derivative, solve_linear_bvp)
from randstop.problems import bm_abs

BM = bm_abs(0.0, 1.0)


def const(c):
    return lambda x: np.full_like(np.asarray(x, float), c)


def ou():
    return ProblemSpec(-math.inf, math.inf, lambda x: -np.asarray(x, float), constant(1.0), 0.0,
                       Payoff.smooth(np.abs, [0.0]), 1.0)


class TestSolveExamples:
    def test_exit_time_of_interval(self):
        h = 0.7
        f = solve_linear_bvp(BM, (-h, h), const(0.0), const(1.0), BC.dirichlet(0), BC.dirichlet(0), n=257)
        assert f(0.0) == pytest.approx(h * h, abs=1e-12)
        assert np.max(np.abs(f.values - (h * h - f.grid ** 2))) < 1e-12

    def test_constant_rate_gives_constant(self):
        T = 3.0
        f = solve_linear_bvp(BM, (-40, 40), const(1 / T), const(1.0), BC.dirichlet(T), BC.dirichlet(T), n=513)
        assert np.max(np.abs(f.values - T)) < 1e-12

    def test_neumann_continuation_piece(self):
        T, a = 2.0, 0.5
        b = a + math.sqrt(T)
        f = solve_linear_bvp(BM, (a, b), const(0.0), const(1.0), BC.neumann(0.0), BC.dirichlet(0.0), n=513)
        assert f.values[0] == pytest.approx(T, abs=1e-10)
        assert np.max(np.abs(f.values - (T - (f.grid - a) ** 2))) < 1e-10

    def test_breakpoint_is_a_node(self):
        f = solve_linear_bvp(BM, (-1, 1), const(0.0), const(1.0), BC.dirichlet(0), BC.dirichlet(0), n=64,
                             breakpoints=[0.123])
        assert f.node_index(0.123) in f.breaks

    def test_rejects_tiny_grid(self):
        with pytest.raises(DomainError):
            solve_linear_bvp(BM, (0, 1), const(0), const(1), BC.dirichlet(0), BC.dirichlet(0), n=8)

    def test_singular_system(self):
        # pure Neumann with q = 0 has no unique solution
        with pytest.raises(NumericError, match=r"\(0, 1\)"):
            solve_linear_bvp(BM, (0, 1), const(0), const(0), BC.neumann(0), BC.neumann(0), n=32)

    def test_dirichlet_exact(self):
        f = solve_linear_bvp(ou(), (-1, 2), const(0.3), const(1.0), BC.dirichlet(0.25), BC.dirichlet(1.5), n=101)
        assert f.values[0] == 0.25 and f.values[-1] == 1.5


def cosh_error(n):
    # f'' / 2 - f = 0, f(+-1) = cosh(sqrt 2) -> f = cosh(sqrt(2) x)
    k = math.sqrt(2.0)
    f = solve_linear_bvp(BM, (-1, 1), const(1.0), const(0.0), BC.dirichlet(math.cosh(k)),
                         BC.dirichlet(math.cosh(k)), n=n)
    return np.max(np.abs(f.values - np.cosh(k * f.grid)))


def neumann_error(n):
    # f'' / 2 - f = 0 on (0, 1), f'(0) = sqrt 2, f(1) = sinh sqrt 2 -> f = sinh(sqrt 2 x)
    k = math.sqrt(2.0)
    f = solve_linear_bvp(BM, (0, 1), const(1.0), const(0.0), BC.neumann(k), BC.dirichlet(math.sinh(k)), n=n)
    return np.max(np.abs(f.values - np.sinh(k * f.grid)))


def ou_error(n):
    # x f' ... OU: -x f' + f''/2 - f = -s with f = exp(x) -> s = f - (-x + 1/2) exp(x)
    s = lambda x: np.exp(x) * (1.0 + np.asarray(x) - 0.5)
    f = solve_linear_bvp(ou(), (-1, 1), const(1.0), s, BC.dirichlet(math.exp(-1)), BC.dirichlet(math.e), n=n)
    return np.max(np.abs(f.values - np.exp(f.grid)))


@pytest.mark.parametrize("err", [cosh_error, neumann_error, ou_error])
def test_second_order_convergence(err):
    ratio = err(129) / err(257)
    assert 3.0 <= ratio <= 5.0


def test_interface_rows_reproduce_piecewise_quadratic():
    # source jumps at 0.3: piecewise solution of f''/2 = -1{x > 0.3} with zero ends
    c = 0.3

    def exact(x):
        # f = A x left of c, A x - (x - c)^2 right of c; f(1) = 0 gives A = (1 - c)^2
        A = (1 - c) ** 2
        return np.where(x < c, A * x, A * x - (x - c) ** 2)

    src = lambda x: (np.asarray(x) > c).astype(float)
    f = solve_linear_bvp(BM, (0, 1), const(0), src, BC.dirichlet(0), BC.dirichlet(0), n=65, breakpoints=[c])
    assert np.max(np.abs(f.values - exact(f.grid))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 3), st.floats(0, 2), st.floats(0, 5), st.floats(0, 5), st.floats(-2, 2))
def test_discrete_maximum_principle(q, s, left, right, drift):
    spec = ProblemSpec(-math.inf, math.inf, constant(drift), constant(1.0), 0.0, Payoff.smooth(np.abs, [0.0]), 1.0)
    f = solve_linear_bvp(spec, (-2, 2), const(q), const(s), BC.dirichlet(left), BC.dirichlet(right), n=129,
                         check_tol=1e-5)
    assert np.min(f.values) >= -1e-12


class TestOneSidedDerivative:
    grid = np.linspace(-1, 1, 41)

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_linear_exact(self, side):
        f = Field(self.grid, 2.0 * self.grid + 1.0)
        assert one_sided_derivative(f, 0.5, side) == pytest.approx(2.0, abs=1e-12)

    def test_second_derivative_of_square(self):
        f = Field(self.grid, self.grid ** 2)
        assert one_sided_derivative(f, 0.0, "right", 2) == pytest.approx(2.0, abs=1e-9)

    def test_kink(self):
        f = Field(self.grid, np.abs(self.grid))
        i = int(np.argmin(np.abs(self.grid)))
        x0 = self.grid[i]
        assert one_sided_derivative(f, x0, "left") == pytest.approx(-1.0, abs=1e-12)
        assert one_sided_derivative(f, x0, "right") == pytest.approx(1.0, abs=1e-12)

    def test_not_enough_points(self):
        with pytest.raises(DomainError):
            one_sided_derivative(Field(self.grid, self.grid), -1.0, "left")

    def test_not_a_node(self):
        with pytest.raises(DomainError):
            one_sided_derivative(Field(self.grid, self.grid), 0.01, "left")


class TestMaxResidual:
    grid = np.linspace(-1, 1, 201)

    def test_quadratic_is_exact(self):
        f = Field(self.grid, 1.0 - self.grid ** 2)
        assert max_residual(BM, f, const(0.0), const(1.0)) <= 1e-10

    def test_noise_scales_with_inverse_square_step(self):
        rng = np.random.default_rng(3)
        f = Field(self.grid, 1.0 - self.grid ** 2 + 1e-3 * rng.standard_normal(self.grid.size))
        h = self.grid[1] - self.grid[0]
        res = max_residual(BM, f, const(0.0), const(1.0))
        assert 0.1 * 1e-3 / h ** 2 <= res <= 10 * 1e-3 / h ** 2

    def test_constant_against_rate(self):
        f = Field(self.grid, np.full_like(self.grid, 2.5))
        assert max_residual(BM, f, const(1 / 2.5), const(1.0)) == 0.0


def test_fd_weights_central():
    w = fd_weights(0.0, [-1.0, 0.0, 1.0], 2)
    assert np.allclose(w[1], [-0.5, 0, 0.5]) and np.allclose(w[2], [1, -2, 1])


def test_build_grid_places_breakpoints():
    g, breaks = build_grid(0.0, 1.0, [0.2, 0.77], 50)
    assert list(g[breaks]) == [0.2, 0.77] and g[0] == 0.0 and g[-1] == 1.0


def test_concat_dedups_shared_node():
    a = Field(np.array([0.0, 0.5, 1.0]), np.zeros(3))
    b = Field(np.array([1.0, 1.5, 2.0]), np.ones(3))
    c = concat_fields([b, a])
    assert list(c.grid) == [0, 0.5, 1, 1.5, 2] and c.values[2] == 0.0 and c.breaks == (2,)
