"""
Reward functional ``J(x) = E_x[exp(-r tau) g(X_tau)]``
======================================================

``J = g`` off ``D``. On a component of ``D`` it solves

    (A - r - psi) J = -psi * (g(x-) + g(x+)) / 2

with ``J = g`` at finite boundary points. Breakpoints of ``psi`` and of ``g``
are interface nodes of one coupled linear system, which pastes values and first
derivatives there. A component reaching a truncated infinite boundary uses the
Neumann condition ``J' = g'`` at the truncation node.

The closed forms for Brownian motion with ``g(x) = |x|`` serve as references.
"""
from __future__ import annotations

import math

import numpy as np

from .diffusion import ProblemSpec
from .errors import DomainError, NumericError
from .fields import Component, components, stitch, warn_truncation
from .ode import DEFAULT_NODES, BoundaryCondition, Field, solve_linear_bvp
from .strategy import Strategy


def _edge_condition(spec: ProblemSpec, x: float, truncated: bool, inward: str) -> BoundaryCondition:
    if not truncated:
        return BoundaryCondition.dirichlet(float(spec.payoff(x)))
    return BoundaryCondition.neumann(float(spec.payoff.derivative(x, 1, side=inward)))


def reward_component(spec: ProblemSpec, s: Strategy, c: Component, n: int = DEFAULT_NODES) -> Field:
    """Reward on one component of ``D``."""
    has_rate = bool(s.randomization_set((c.lo, c.hi)))
    if c.unbounded and spec.discount == 0 and not has_rate:
        raise NumericError(f"non-integrable horizon: r = 0 and no randomization on unbounded "
                           f"component ({c.lo:g}, {c.hi:g})")
    r = spec.discount
    g = spec.payoff

    def q(x):
        return r + s.psi(x)

    def src(x):
        return s.psi(x) * g.mid(x)

    bps = [b for b in s.psi.breakpoints if c.clo < b < c.chi]
    left = _edge_condition(spec, c.clo, c.trunc_lo, "right")
    right = _edge_condition(spec, c.chi, c.trunc_hi, "left")
    f = solve_linear_bvp(spec, (c.clo, c.chi), q, src, left, right, n=n, breakpoints=bps, tag="J")
    mismatch = {}
    for x, trunc, val in ((c.clo, c.trunc_lo, f.values[0]), (c.chi, c.trunc_hi, f.values[-1])):
        if trunc:
            gap = abs(val - float(g(x)))
            mismatch[x] = gap
            if gap > 1e-6 * max(1.0, abs(float(g(x)))):
                warn_truncation(f"reward differs from the payoff by {gap:.3g} at the truncation node {x:g}")
    f.meta["edge_mismatch"] = mismatch
    return f


def reward_field(spec: ProblemSpec, s: Strategy, n: int = DEFAULT_NODES) -> Field:
    """Reward of the strategy on the numerical domain."""
    parts = [reward_component(spec, s, c, n) for c in components(spec, s)]
    mismatch = {}
    for p in parts:
        mismatch.update(p.meta.get("edge_mismatch", {}))
    out = stitch(spec, s, parts, spec.payoff, n, "J")
    out.meta["edge_mismatch"] = mismatch
    out.meta["n"] = n
    return out


def reward_closed_form_bm(r: float, T: float, b: float, x):
    """Closed-form reward of ``D = (-b, b)``, ``psi = (1/T) 1_[-a, a)``, ``a = b - sqrt(T)``,
    for standard Brownian motion and ``g = |x|``.

    Three pieces: a ``cosh`` piece with coefficient ``xi(T, r, b)`` on
    ``|x| <= a``, an exponential pair on ``a < |x| < b`` and ``|x|`` beyond.
    The middle piece has unit slope at ``b``, so the formula is the reward
    exactly when ``b`` solves the smooth-fit equation.
    """
    if not (r > 0 and T > 0 and b > math.sqrt(T)):
        raise DomainError("need r > 0, T > 0 and b > sqrt(T)")
    x = np.abs(np.asarray(x, dtype=float))
    k = math.sqrt(2.0 * r)
    sT = math.sqrt(T)
    gam = math.sqrt(2.0 * (r + 1.0 / T))
    a = b - sT
    rT1 = r * T + 1.0
    xi = (b * math.cosh(k * sT) - math.sinh(k * sT) / k
          - (a + math.exp(-gam * a) / gam) / rT1) / math.cosh(gam * a)
    inner = xi * np.cosh(gam * x) + x / rT1 + np.exp(-gam * x) / (gam * rT1)
    middle = 0.5 * (b + 1.0 / k) * np.exp(-k * (b - x)) + 0.5 * (b - 1.0 / k) * np.exp(k * (b - x))
    out = np.where(x <= a, inner, np.where(x < b, middle, x))
    return float(out) if out.ndim == 0 else out


def reward_randomized_bm_r0(T: float, x):
    """Reward of ``D = R``, ``psi = 1/T`` for Brownian motion, ``g = |x|``, ``r = 0``."""
    x = np.abs(np.asarray(x, dtype=float))
    out = x + math.sqrt(T / 2.0) * np.exp(-math.sqrt(2.0 / T) * x)
    return float(out) if out.ndim == 0 else out


def reward_threshold_bm(r: float, width: float, x):
    """Reward of the first exit from ``(-width, width)`` for Brownian motion, ``g = |x|``."""
    if r <= 0:
        raise DomainError("need r > 0")
    x = np.asarray(x, dtype=float)
    k = math.sqrt(2.0 * r)
    out = np.where(np.abs(x) < width, width * np.cosh(k * x) / math.cosh(k * width), np.abs(x))
    return float(out) if out.ndim == 0 else out
