"""
One-dimensional diffusion models
================================

A :class:`ProblemSpec` bundles the diffusion ``dX = mu(X) dt + sigma(X) dW`` on
``(alpha, beta)`` with the discount rate, the payoff and the expectation horizon.
Coefficients are vectorised callables; the payoff is a :class:`Payoff`, a
right-continuous piecewise function with declared breakpoints so that one-sided
limits and one-sided derivatives are available exactly where they matter.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError

ArrayFn = Callable[[np.ndarray], np.ndarray]

_FD_STEP = 1e-3


def _as_array(x):
    return np.asarray(x, dtype=float)


def constant(c: float) -> ArrayFn:
    """Vectorised constant coefficient."""
    def fn(x):
        return np.full_like(_as_array(x), float(c))
    fn.constant_value = float(c)
    return fn


class Payoff:
    """Right-continuous piecewise payoff ``g``.

    Parameters
    ----------
    pieces : sequence of callables
        ``len(breakpoints) + 1`` smooth vectorised functions. Piece ``k`` is
        used on ``[breakpoints[k-1], breakpoints[k])``. A piece may be defined
        beyond its own interval; only values on its own side of a breakpoint
        are ever sampled when taking one-sided limits and derivatives.
    breakpoints : sequence of float
        Sorted points where ``g`` or one of its derivatives may jump.
    """

    def __init__(self, pieces: Sequence[ArrayFn], breakpoints: Sequence[float] = (), name: str = ""):
        bps = [float(b) for b in breakpoints]
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("payoff breakpoints must be strictly increasing")
        if len(pieces) != len(bps) + 1:
            raise ValueError("need exactly len(breakpoints) + 1 pieces")
        self.pieces = list(pieces)
        self.breakpoints = np.array(bps, dtype=float)
        self.name = name

    @classmethod
    def smooth(cls, fn: ArrayFn, kinks: Sequence[float] = (), name: str = "") -> "Payoff":
        """Continuous payoff given by one expression with declared kinks."""
        kinks = sorted(float(k) for k in kinks)
        return cls([fn] * (len(kinks) + 1), kinks, name=name)

    def _piece_index(self, x, side="right"):
        return np.searchsorted(self.breakpoints, x, side=side)

    def _eval_by_piece(self, idx, fn_of_piece):
        idx = np.atleast_1d(idx)
        out = np.empty(idx.shape, dtype=float)
        for k in np.unique(idx):
            mask = idx == k
            out[mask] = fn_of_piece(int(k), mask)
        return out

    def __call__(self, x):
        x = _as_array(x)
        flat = np.atleast_1d(x)
        idx = self._piece_index(flat, "right")
        out = self._eval_by_piece(idx, lambda k, m: self.pieces[k](flat[m]))
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def left(self, x):
        """Left limit ``g(x-)``."""
        x = _as_array(x)
        flat = np.atleast_1d(x)
        idx = self._piece_index(flat, "left")
        out = self._eval_by_piece(idx, lambda k, m: self.pieces[k](flat[m]))
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def right(self, x):
        """Right limit ``g(x+)``; equals ``g(x)`` by right-continuity."""
        return self(x)

    def mid(self, x):
        """``(g(x-) + g(x+)) / 2``."""
        return 0.5 * (self.left(x) + self.right(x))

    def derivative(self, x, order: int = 1, side: str = "central"):
        """Numerical derivative of the payoff.

        ``side='right'`` / ``'left'`` give one-sided derivatives of the piece on
        that side. ``'central'`` uses a central stencil unless a breakpoint lies
        within reach, in which case the stencil points away from it.
        """
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        x = _as_array(x)
        flat = np.atleast_1d(x).astype(float)
        h = _FD_STEP * np.maximum(1.0, np.abs(flat))
        out = np.empty_like(flat)
        if side == "central":
            near_left = np.zeros(flat.shape, dtype=bool)
            near_right = np.zeros(flat.shape, dtype=bool)
            for b in self.breakpoints:
                close = np.abs(flat - b) < 4.5 * h
                near_left |= close & (flat < b)
                near_right |= close & (flat >= b)
            near_left &= ~near_right
            far = ~(near_left | near_right)
            if far.any():
                out[far] = self._central(flat[far], h[far], order)
            if near_left.any():
                out[near_left] = self._one_sided(flat[near_left], h[near_left], order, "left")
            if near_right.any():
                out[near_right] = self._one_sided(flat[near_right], h[near_right], order, "right")
        elif side in ("left", "right"):
            out[:] = self._one_sided(flat, h, order, side)
        else:
            raise ValueError("side must be 'left', 'right' or 'central'")
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def _central(self, x, h, order):
        idx = self._piece_index(x, "right")

        def one(k, m):
            f, xm, hm = self.pieces[k], x[m], h[m]
            if order == 1:
                return (f(xm - 2 * hm) - 8 * f(xm - hm) + 8 * f(xm + hm) - f(xm + 2 * hm)) / (12 * hm)
            return (-f(xm - 2 * hm) + 16 * f(xm - hm) - 30 * f(xm) + 16 * f(xm + hm) - f(xm + 2 * hm)) / (12 * hm**2)

        return self._eval_by_piece(idx, one)

    def _one_sided(self, x, h, order, side):
        idx = self._piece_index(x, "right" if side == "right" else "left")
        sgn = 1.0 if side == "right" else -1.0
        if len(self.breakpoints):
            # keep the four-step stencil inside the piece it differentiates
            if side == "right":
                nxt = np.searchsorted(self.breakpoints, x, side="right")
                dist = np.where(nxt < len(self.breakpoints),
                                self.breakpoints[np.minimum(nxt, len(self.breakpoints) - 1)] - x, np.inf)
            else:
                prv = np.searchsorted(self.breakpoints, x, side="left") - 1
                dist = np.where(prv >= 0, x - self.breakpoints[np.maximum(prv, 0)], np.inf)
            h = np.minimum(h, dist / 4.0)

        def one(k, m):
            f, xm, hm = self.pieces[k], x[m], sgn * h[m]
            f0, f1, f2, f3 = f(xm), f(xm + hm), f(xm + 2 * hm), f(xm + 3 * hm)
            if order == 1:
                f4 = f(xm + 4 * hm)
                # fourth-order forward stencil
                return (-25 * f0 + 48 * f1 - 36 * f2 + 16 * f3 - 3 * f4) / (12 * hm)
            f4 = f(xm + 4 * hm)
            return (35 * f0 - 104 * f1 + 114 * f2 - 56 * f3 + 11 * f4) / (12 * hm**2)

        return self._eval_by_piece(idx, one)

    def jumps(self, tol: float = 1e-12):
        """Breakpoints where the payoff itself is discontinuous."""
        if not len(self.breakpoints):
            return []
        gl, gr = self.left(self.breakpoints), self.right(self.breakpoints)
        scale = np.maximum(1.0, np.abs(gl) + np.abs(gr))
        return [float(b) for b, a, c, s in zip(self.breakpoints, gl, gr, scale) if abs(a - c) > tol * s]

    def shifted(self, offset: float) -> "Payoff":
        """Payoff ``x -> g(x - offset)``."""
        pieces = [(lambda f: (lambda x: f(_as_array(x) - offset)))(f) for f in self.pieces]
        return Payoff(pieces, self.breakpoints + offset, name=self.name)


@dataclass(frozen=True)
class ProblemSpec:
    """Diffusion, discount, payoff and horizon of a constrained stopping problem.

    ``alpha``/``beta`` may be infinite; the numerical domain is then truncated
    (see :meth:`domain`). ``family`` tags problems with known closed forms.
    """

    alpha: float
    beta: float
    drift: ArrayFn
    volatility: ArrayFn
    discount: float
    payoff: Payoff
    horizon: float
    name: str = "custom"
    family: str | None = None
    center: float = 0.0
    truncation: tuple[float, float] | None = None
    coefficient_breakpoints: tuple[float, ...] = ()
    polynomial_growth: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise DomainError(f"need alpha < beta, got ({self.alpha}, {self.beta})")
        if self.discount < 0 or not math.isfinite(self.discount):
            raise DomainError(f"discount must be a nonnegative real, got {self.discount}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be a positive real, got {self.horizon}")
        bps = list(self.coefficient_breakpoints)
        if bps != sorted(bps):
            raise DomainError("coefficient breakpoints must be sorted")
        lo, hi = self.domain()
        xs = np.linspace(lo, hi, 257)[1:-1]
        if not np.all(self.volatility(xs) > 0):
            raise DomainError("volatility must be strictly positive on the domain")
        if not np.all(self.payoff(xs) >= 0):
            raise DomainError("payoff must be nonnegative on the domain")

    @property
    def r(self) -> float:
        return self.discount

    @property
    def T(self) -> float:
        return self.horizon

    def default_radius(self) -> float:
        """Truncation radius ``10 * max(sqrt(T), 1/sqrt(2r))``."""
        scale = math.sqrt(self.horizon)
        if self.discount > 0:
            scale = max(scale, 1.0 / math.sqrt(2.0 * self.discount))
        return 10.0 * scale

    def domain(self) -> tuple[float, float]:
        """Finite numerical domain ``[lo, hi]`` used by the solvers."""
        if self.truncation is not None:
            lo, hi = self.truncation
        else:
            rad = self.default_radius()
            lo = self.alpha if math.isfinite(self.alpha) else self.center - rad
            hi = self.beta if math.isfinite(self.beta) else self.center + rad
        lo = max(lo, self.alpha)
        hi = min(hi, self.beta)
        if not lo < hi:
            raise DomainError(f"empty truncated domain [{lo}, {hi}]")
        return float(lo), float(hi)

    def is_truncated_edge(self, x: float) -> bool:
        """True if ``x`` is a truncation node standing in for an infinite boundary."""
        lo, hi = self.domain()
        return (x <= lo and lo > self.alpha) or (x >= hi and hi < self.beta)

    def breakpoints(self, lo=-np.inf, hi=np.inf) -> list[float]:
        """Declared payoff and coefficient breakpoints strictly inside ``(lo, hi)``."""
        pts = set(float(b) for b in self.payoff.breakpoints)
        pts.update(float(b) for b in self.coefficient_breakpoints)
        return sorted(p for p in pts if lo < p < hi)

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace
        return replace(self, **changes)


def _check_inside(spec: ProblemSpec, x):
    x = _as_array(x)
    if np.any(x <= spec.alpha) or np.any(x >= spec.beta):
        raise DomainError(f"state outside ({spec.alpha}, {spec.beta})")


def generator_apply(spec: ProblemSpec, f, f1, f2, x):
    """Generator ``mu f' + sigma^2/2 f''`` evaluated from supplied derivatives.

    ``f`` is accepted for signature symmetry with ``(A - q) f``; the generator
    itself does not use it.
    """
    _check_inside(spec, x)
    x = _as_array(x)
    sig = spec.volatility(x)
    out = spec.drift(x) * _as_array(f1) + 0.5 * sig * sig * _as_array(f2)
    return float(out) if out.ndim == 0 else out


def scale_density(spec: ProblemSpec, anchor: float, y: float) -> float:
    """``s'(y) = exp(-int_anchor^y 2 mu / sigma^2 dz)``."""
    c = getattr(spec.drift, "constant_value", None)
    v = getattr(spec.volatility, "constant_value", None)
    if c is not None and v is not None:
        return math.exp(-2.0 * c / (v * v) * (y - anchor))

    def integrand(z):
        s = float(spec.volatility(np.asarray(z)))
        return 2.0 * float(spec.drift(np.asarray(z))) / (s * s)

    val, err = integrate.quad(integrand, anchor, y, limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericError(f"scale density quadrature failed on [{anchor}, {y}]")
    return math.exp(-val)


def scale_function(spec: ProblemSpec, anchor: float, x: float) -> float:
    """Scale function normalised by ``s(anchor) = 0``.

    Computed by nested quadrature of :func:`scale_density`; strictly increasing.
    """
    _check_inside(spec, [anchor, x])
    if x == anchor:
        return 0.0
    c = getattr(spec.drift, "constant_value", None)
    v = getattr(spec.volatility, "constant_value", None)
    if c is not None and v is not None:
        k = 2.0 * c / (v * v)
        if k == 0.0:
            return float(x - anchor)
        return float(-math.expm1(-k * (x - anchor)) / k)
    val, err = integrate.quad(lambda y: scale_density(spec, anchor, y), anchor, x, limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericError(f"scale function quadrature failed on [{anchor}, {x}]")
    return float(val)


def euler_step(spec: ProblemSpec, x: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step driven by standard normals ``z``."""
    return x + spec.drift(x) * dt + spec.volatility(x) * math.sqrt(dt) * z


@dataclass
class PathSample:
    """A discretised path with its accumulated randomisation clock."""

    times: np.ndarray
    states: np.ndarray
    clock_increments: np.ndarray
    truncated: bool = False

    @property
    def clock(self) -> np.ndarray:
        """Cumulative clock ``int_0^t psi(X_s) ds`` at each time."""
        return np.concatenate([[0.0], np.cumsum(self.clock_increments)])


def simulate_path(spec: ProblemSpec, rate: ArrayFn | None, x0: float, dt: float,
                  stop: Callable[[float, float, float], bool] | None,
                  rng: np.random.Generator, max_time: float | None = None) -> PathSample:
    """Simulate a single Euler-Maruyama path until ``stop(t, x, clock)`` fires.

    The clock increment per step is the trapezoid ``(psi(X_t) + psi(X_{t+dt})) dt / 2``.
    Hitting ``max_time`` (default ``50 T``) marks the sample as truncated;
    such samples are censored, not stopped.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    _check_inside(spec, x0)
    if max_time is None:
        max_time = 50.0 * spec.horizon
    nmax = int(math.ceil(max_time / dt))
    times = [0.0]
    states = [float(x0)]
    incs = []
    x, t, clock = float(x0), 0.0, 0.0
    psi_x = float(rate(np.asarray(x))) if rate is not None else 0.0
    truncated = True
    for _ in range(nmax):
        if stop is not None and stop(t, x, clock):
            truncated = False
            break
        xn = float(euler_step(spec, np.asarray(x), dt, rng.standard_normal()))
        xn = min(max(xn, spec.alpha), spec.beta)
        psi_n = float(rate(np.asarray(xn))) if rate is not None else 0.0
        inc = 0.5 * (psi_x + psi_n) * dt
        t += dt
        clock += inc
        x, psi_x = xn, psi_n
        times.append(t)
        states.append(x)
        incs.append(inc)
    else:
        if stop is not None and stop(t, x, clock):
            truncated = False
    if truncated and stop is not None:
        warnings.warn(f"path truncated at t={t:.6g} without stopping", RuntimeWarning, stacklevel=2)
    return PathSample(np.array(times), np.array(states), np.array(incs), truncated=truncated and stop is not None)
