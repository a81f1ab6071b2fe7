"""
Expected time function ``e(x) = E_x[tau]``
==========================================

On each component of ``D`` the expected time solves ``A e - psi e = -1`` with
``e = 0`` at finite boundary points. For equilibrium candidates (rate in
``{0, 1/T}`` on one connected randomization piece per component) the primary
route is the split solve: ``e = T`` on the randomization piece and ``A e = -1``
on the continuation pieces with ``e = 0`` on the boundary of ``D`` and ``e = T``
where randomization starts. The monolithic solve is kept as an independent
cross-check; when the two disagree the strategy is not self-consistent and the
monolithic (true) field is returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ProblemSpec
from .fields import Component, components, stitch, warn_truncation
from .ode import (DEFAULT_NODES, BoundaryCondition, Field, build_grid, concat_fields, one_sided_derivative,
                  solve_linear_bvp)
from .strategy import Strategy, validate


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _edge_value(spec: ProblemSpec, s: Strategy, x: float, truncated: bool, what: str) -> float:
    if not truncated:
        return 0.0
    rate = float(s.psi(x))
    if rate > 0:
        return 1.0 / rate
    warn_truncation(f"{what}: continuation region reaches the truncated boundary at {x:g}; "
                    "expected time is cut off there")
    return 0.0


def _component_grid(spec, s, c: Component, n):
    bps = [b for b in s.psi.breakpoints if c.clo < b < c.chi]
    return build_grid(c.clo, c.chi, set(bps) | set(spec.breakpoints(c.clo, c.chi)), n)[0], bps


def _monolithic_component(spec, s, c: Component, n) -> Field:
    grid, bps = _component_grid(spec, s, c, n)
    left = BoundaryCondition.dirichlet(_edge_value(spec, s, c.clo, c.trunc_lo, "expected time"))
    right = BoundaryCondition.dirichlet(_edge_value(spec, s, c.chi, c.trunc_hi, "expected time"))
    return solve_linear_bvp(spec, (c.clo, c.chi), s.psi, _ones, left, right, breakpoints=bps, tag="e", grid=grid)


def _split_component(spec, s, c: Component, n):
    """Split solve on slices of the monolithic grid.

    Returns the field and the one-sided derivatives of ``e`` where
    randomization starts.
    """
    T = s.horizon
    rset = s.randomization_set((c.lo, c.hi))
    if not rset:
        return _monolithic_component(spec, s, c, n), {}
    a, b = rset[0]
    ra, rb = max(a, c.clo), min(b, c.chi)
    grid, _ = _component_grid(spec, s, c, n)
    parts, pasting = [], {}
    if a > c.lo:
        g = grid[(grid >= c.clo) & (grid <= ra)]
        left = BoundaryCondition.dirichlet(_edge_value(spec, s, c.clo, c.trunc_lo, "expected time"))
        f = solve_linear_bvp(spec, (c.clo, ra), _zeros, _ones, left, BoundaryCondition.dirichlet(T), tag="e", grid=g)
        parts.append(f)
        pasting[ra] = one_sided_derivative(f, ra, "left")
    g = grid[(grid >= ra) & (grid <= rb)]
    parts.append(Field(g, np.full_like(g, T), "e"))
    if b < c.hi:
        g = grid[(grid >= rb) & (grid <= c.chi)]
        right = BoundaryCondition.dirichlet(_edge_value(spec, s, c.chi, c.trunc_hi, "expected time"))
        f = solve_linear_bvp(spec, (rb, c.chi), _zeros, _ones, BoundaryCondition.dirichlet(T), right, tag="e", grid=g)
        parts.append(f)
        pasting[rb] = one_sided_derivative(f, rb, "right")
    return concat_fields(parts, "e"), pasting


def expected_time_field(spec: ProblemSpec, s: Strategy, n: int = DEFAULT_NODES, tol: float = 1e-6,
                        method: str = "auto") -> Field:
    """Expected time of the strategy on the numerical domain.

    ``method`` is ``'auto'`` (split for equilibrium candidates, monolithic
    otherwise), ``'split'`` or ``'monolithic'``. ``meta`` records the method
    used, the split/monolithic discrepancy, the max deviation from ``T`` on the
    randomization region and the one-sided derivatives of ``e`` where
    randomization starts (zero for a smooth-pasting candidate).
    """
    T = s.horizon
    abs_tol = tol * T
    candidate = not validate(s, equilibrium_candidate=True, alpha=spec.alpha, beta=spec.beta)
    if method == "split" and not candidate:
        raise ValueError("split solve needs an equilibrium candidate strategy")
    use_split = candidate and method in ("auto", "split")
    comp_fields, pasting = [], {}
    cross, dev_T = 0.0, 0.0
    consistent = True
    for c in components(spec, s):
        mono = _monolithic_component(spec, s, c, n)
        rset = s.randomization_set((c.lo, c.hi))
        if rset:
            a, b = rset[0]
            inner = (mono.grid > a) & (mono.grid < b)
            if inner.any():
                dev_T = max(dev_T, float(np.max(np.abs(mono.values[inner] - T))))
        if use_split:
            split, pst = _split_component(spec, s, c, n)
            pasting.update(pst)
            diff = float(np.max(np.abs(split.values - mono.values)))
            cross = max(cross, diff)
            if diff > abs_tol and method == "auto":
                consistent = False
                comp_fields.append(mono)
            else:
                comp_fields.append(split)
        else:
            comp_fields.append(mono)
    field = stitch(spec, s, comp_fields, _zeros, n, "e")
    field.meta.update({
        "method": ("split" if use_split and consistent else "monolithic"),
        "candidate": candidate,
        "split_consistent": consistent,
        "cross_check": cross,
        "max_deviation_from_T": dev_T,
        "pasting_derivatives": pasting,
        "tol": abs_tol,
        "n": n,
    })
    return field


@dataclass(frozen=True)
class ConstraintReport:
    passed: bool
    max_value: float
    witness: float
    horizon: float
    tol: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max": self.max_value, "witness": self.witness,
                "horizon": self.horizon, "tol": self.tol}


def check_constraint(e: Field, T: float, tol: float | None = None) -> ConstraintReport:
    """Uniform constraint ``max e <= T + tol``; reports the argmax."""
    if tol is None:
        tol = 1e-6 * T
    i = int(np.argmax(e.values))
    mx = float(e.values[i])
    return ConstraintReport(mx <= T + tol, mx, float(e.grid[i]), T, tol)
