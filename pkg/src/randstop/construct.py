"""
Equilibrium construction
========================

Guess-and-verify construction of equilibrium randomized stopping times.

Three cases are recognised:

``Submartingale``
    ``(A - r) g >= 0`` everywhere with convex kinks and continuous ``g``: stop
    at constant rate ``1/T`` on the whole state space.
``Unconstrained``
    Interval components found by smooth fit already satisfy ``e <= T``; the
    strategy is pure (``psi == 0``).
``FreeBoundary``
    At least one component randomizes on an inner interval ``[a, b)`` with
    rate ``1/T``. On each continuation piece ``A e = -1`` with ``e(a) = T``,
    ``e'(a) = 0`` and ``e = 0`` at the outer boundary, which fixes the outer
    boundary as a function of ``a`` (shooting). The inner boundary is then the
    root of the smooth-fit residual ``J'(outer-) - g'(outer+)``.

For Brownian motion with ``g = |x|`` the closed forms are used directly; all
other problems need a structure hint per component of ``D`` (the two-well
builtin carries its own).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .diffusion import ProblemSpec, generator_apply
from .errors import BracketError, ConstructionError, DomainError, NumericError
from .expected_time import expected_time_field
from .ode import DEFAULT_NODES, BoundaryCondition, Field, one_sided_derivative, solve_linear_bvp
from .reward import reward_field
from .strategy import OpenSetUnion, RateFunction, Strategy
from .verify import VerificationReport, check_sufficient

UNCONSTRAINED = "Unconstrained"
SUBMARTINGALE = "Submartingale"
FREE_BOUNDARY = "FreeBoundary"

_EPS = np.finfo(float).eps


# --- scalar roots ----------------------------------------------------------------

def find_root(f, bracket, tol: float = 1e-12, maxiter: int = 500) -> float:
    """Bracketed scalar root (Brent's method: bisection with secant and
    inverse-quadratic steps). Deterministic.

    Raises
    ------
    BracketError
        If ``f`` has no sign change on the bracket.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if not (np.isfinite(flo) and np.isfinite(fhi)) or np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo:g}, {hi:g}]: f = {flo:.3g}, {fhi:.3g}")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * _EPS, maxiter=maxiter))


def _safe(f):
    def g(x):
        try:
            v = float(f(x))
        except (NumericError, DomainError, ValueError, FloatingPointError):
            return math.nan
        return v
    return g


def scan_roots(f, bracket, m: int = 24, tol: float = 1e-12) -> list[float]:
    """All roots found by scanning ``m`` subintervals for sign changes and refining each."""
    f = _safe(f)
    xs = np.linspace(bracket[0], bracket[1], m + 1)
    vs = np.array([f(x) for x in xs])
    roots = []
    for i in range(m):
        a, b, fa, fb = xs[i], xs[i + 1], vs[i], vs[i + 1]
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(find_root(f, (a, b), tol))
    if np.isfinite(vs[-1]) and vs[-1] == 0:
        roots.append(float(xs[-1]))
    return roots


# --- Brownian motion with g = |x| ---------------------------------------------------

@functools.lru_cache(maxsize=1)
def z_tilde() -> float:
    """Positive root of ``z tanh z = 1``."""
    return find_root(lambda z: z * math.tanh(z) - 1.0, (0.5, 2.0), tol=1e-15)


def unconstrained_threshold_bm(r: float) -> float:
    """Optimal unconstrained threshold ``z_tilde / sqrt(2 r)``."""
    if not r > 0:
        raise DomainError("the threshold needs r > 0")
    return z_tilde() / math.sqrt(2.0 * r)


def smooth_fit_residual_bm(r: float, T: float, b: float) -> float:
    """Smooth-fit function ``l(b)`` whose root is the outer boundary ``b*``.

    Valid for ``r > 0``, ``r T < z_tilde^2 / 2`` and ``b >= sqrt(T)``.
    """
    if not (r > 0 and T > 0):
        raise DomainError("need r > 0 and T > 0")
    if r * T >= 0.5 * z_tilde() ** 2:
        raise DomainError("rT must be below z_tilde^2/2 for the free-boundary regime")
    sT = math.sqrt(T)
    if b < sT:
        raise DomainError(f"need b >= sqrt(T) = {sT:g}")
    k = math.sqrt(2.0 * r)
    w = math.sqrt(2.0 * r * T)
    gam = math.sqrt(2.0 * (r + 1.0 / T))
    a = b - sT
    rT1 = r * T + 1.0
    ea = math.exp(-gam * a)
    first = gam * math.sinh(gam * a) * (b * math.cosh(w) - math.sinh(w) / k - a / rT1 - ea / (gam * rT1))
    second = math.cosh(gam * a) * (k * b * math.sinh(w) - math.cosh(w) + (1.0 - ea) / rT1)
    return first + second


def _is_bm_abs(spec: ProblemSpec) -> bool:
    return spec.family == "bm-abs"


def _bm_abs_strategy(spec: ProblemSpec, bracket=None):
    """Closed-form strategy for Brownian motion with ``g = |x|``."""
    r, T = spec.discount, spec.horizon
    zt = z_tilde()
    if r == 0:
        return Strategy.full_randomization(spec.alpha, spec.beta, T), SUBMARTINGALE, {}
    xt = unconstrained_threshold_bm(r)
    if r * T >= 0.5 * zt * zt:
        data = {"z_tilde": zt, "x_tilde": xt, "max_e": zt * zt / (2.0 * r)}
        return Strategy.pure([(-xt, xt)], T), UNCONSTRAINED, data
    sT = math.sqrt(T)
    if bracket is None:
        bracket = (sT, 10.0 * max(sT, xt))
    roots = scan_roots(lambda b: smooth_fit_residual_bm(r, T, b), bracket)
    if not roots:
        raise ConstructionError("construction failed: no root of the smooth-fit function",
                                {"bracket": list(bracket)})
    b = roots[0]
    a = b - sT
    data = {"b_star": b, "a_star": a, "ell_residual": smooth_fit_residual_bm(r, T, b),
            "bracket": list(bracket), "root_count": len(roots), "x_tilde": xt}
    s = Strategy(OpenSetUnion([(-b, b)]), RateFunction.indicator(-a, a, 1.0 / T), T)
    return s, FREE_BOUNDARY, data


# --- submartingale certificate ------------------------------------------------------

@dataclass
class Certificate:
    passed: bool
    details: dict


def submartingale_certificate(spec: ProblemSpec, m: int = 4001, tol: float = 1e-8) -> Certificate:
    """Grid certificate for ``(A - r) g >= 0``.

    Checks the generator on a dense grid away from declared kinks, that every
    kink is convex, that ``g`` has no jumps and that the polynomial growth flag
    is set.
    """
    g = spec.payoff
    lo, hi = spec.domain()
    xs = np.linspace(lo, hi, m)[1:-1]
    kinks = spec.breakpoints(lo, hi)
    for k in kinks:
        xs = xs[np.abs(xs - k) > 1e-2 * (hi - lo) / m + 5e-3]
    scale = max(1.0, float(np.max(np.abs(g(xs))))) if xs.size else 1.0
    val = generator_apply(spec, g(xs), g.derivative(xs, 1), g.derivative(xs, 2), xs) - spec.discount * g(xs)
    i = int(np.argmin(val)) if xs.size else 0
    worst = float(val[i]) if xs.size else 0.0
    slopes = {k: float(g.derivative(k, 1, side="right") - g.derivative(k, 1, side="left")) for k in kinks}
    convex = all(v >= -1e-4 * scale for v in slopes.values())
    jumps = g.jumps()
    details = {"min_generator": worst, "witness": float(xs[i]) if xs.size else None,
               "kink_slope_jumps": slopes, "jumps": jumps, "polynomial_growth": spec.polynomial_growth}
    ok = worst >= -tol * scale and convex and not jumps and spec.polynomial_growth
    return Certificate(bool(ok), details)


# --- generic construction ------------------------------------------------------------

@dataclass(frozen=True)
class ComponentHint:
    """Structure guess for one component of ``D``.

    Parameters
    ----------
    center : float
        A point inside the component (its centre for symmetric problems).
    randomize : bool or None
        ``True`` forces an inner randomization interval, ``False`` forbids it,
        ``None`` tries the pure component first and randomizes only if its
        expected time exceeds ``T``.
    symmetric : bool
        Solve on the half-line ``[center, outer)`` with ``J'(center) = 0``.
    bracket : (float, float) or None
        Search bracket for the half-width (pure) or the inner half-width
        (randomized) measured from ``center``.
    """

    center: float
    randomize: bool | None = None
    symmetric: bool = True
    bracket: tuple[float, float] | None = None


def default_hints(spec: ProblemSpec) -> list[ComponentHint] | None:
    if spec.family == "two-well":
        shift = float(spec.meta.get("shift", 0.0))
        return [ComponentHint(shift - 2.0, None, True, (0.05, 1.0)),
                ComponentHint(shift + 2.0, None, True, (0.05, 1.0))]
    return None


def _check_symmetry(spec: ProblemSpec, c: float, radius: float):
    xs = np.linspace(1e-3, radius, 97)
    g = spec.payoff
    bad = []
    if np.max(np.abs(g(c + xs) - g(c - xs))) > 1e-10 * max(1.0, float(np.max(np.abs(g(c + xs))))):
        bad.append("payoff is not even about the centre")
    if np.max(np.abs(spec.drift(c + xs) + spec.drift(c - xs))) > 1e-10:
        bad.append("drift is not odd about the centre")
    if np.max(np.abs(spec.volatility(c + xs) - spec.volatility(c - xs))) > 1e-10:
        bad.append("volatility is not even about the centre")
    if bad:
        raise ConstructionError("symmetric hint on a non-symmetric problem", {"center": c, "reasons": bad})


def shoot_continuation(spec: ProblemSpec, start: float, T: float, direction: int, limit: float) -> float:
    """Outer boundary of a continuation piece.

    Integrates ``A e = -1`` from ``e(start) = T``, ``e'(start) = 0`` in the
    given direction until ``e`` reaches zero.
    """
    def rhs(x, y):
        sig = float(spec.volatility(x))
        return [y[1], -2.0 * (1.0 + float(spec.drift(x)) * y[1]) / (sig * sig)]

    def hit(x, y):
        return y[0]
    hit.terminal = True
    hit.direction = -1
    sol = integrate.solve_ivp(rhs, (start, limit), [T, 0.0], method="DOP853", events=hit,
                              rtol=1e-12, atol=1e-13 * max(T, 1.0))
    if not sol.t_events[0].size:
        raise NumericError(f"expected time does not vanish between {start:g} and {limit:g}")
    return float(sol.t_events[0][0])


class _Solver:
    """Smooth-fit residuals for one component on two grids."""

    def __init__(self, spec: ProblemSpec, n: int):
        self.spec = spec
        self.n = n
        self.T = spec.horizon
        self.lo, self.hi = spec.domain()

    def _reward(self, interval, psi: RateFunction, left, right, n):
        spec = self.spec
        g = spec.payoff
        r = spec.discount

        def q(x):
            return r + psi(x)

        def src(x):
            return psi(x) * g.mid(x)
        bps = [b for b in psi.breakpoints if interval[0] < b < interval[1]]
        return solve_linear_bvp(spec, interval, q, src, left, right, n=n, breakpoints=bps, tag="J")

    def _slope(self, interval, psi, left, right, at, side) -> float:
        """Richardson-extrapolated one-sided slope of the reward at an endpoint."""
        d = []
        for n in (self.n, self.n // 2):
            f = self._reward(interval, psi, left, right, n)
            d.append(one_sided_derivative(f, at, side))
        return (4.0 * d[0] - d[1]) / 3.0

    def pure_symmetric(self, c, w) -> float:
        g = self.spec.payoff
        u = c + w
        left = BoundaryCondition.neumann(0.0)
        right = BoundaryCondition.dirichlet(float(g(u)))
        return self._slope((c, u), RateFunction.zero(), left, right, u, "left") - float(g.derivative(u, 1, side="right"))

    def pure_sides(self, l, u):
        g = self.spec.payoff
        left = BoundaryCondition.dirichlet(float(g(l)))
        right = BoundaryCondition.dirichlet(float(g(u)))
        fu = self._slope((l, u), RateFunction.zero(), left, right, u, "left") - float(g.derivative(u, 1, side="right"))
        fl = self._slope((l, u), RateFunction.zero(), left, right, l, "right") - float(g.derivative(l, 1, side="left"))
        return fl, fu

    def pure_max_e(self, l, u) -> float:
        f = solve_linear_bvp(self.spec, (l, u), lambda x: 0.0 * x, lambda x: 1.0 + 0.0 * x,
                             BoundaryCondition.dirichlet(0.0), BoundaryCondition.dirichlet(0.0), n=self.n, tag="e")
        return float(np.max(f.values))

    def randomized_symmetric(self, c, a):
        g = self.spec.payoff
        u = shoot_continuation(self.spec, c + a, self.T, +1, self.hi)
        psi = RateFunction.indicator(c - a, c + a, 1.0 / self.T)
        left = BoundaryCondition.neumann(0.0)
        right = BoundaryCondition.dirichlet(float(g(u)))
        res = self._slope((c, u), psi, left, right, u, "left") - float(g.derivative(u, 1, side="right"))
        return res, u

    def randomized_sides(self, a_lo, a_hi):
        g = self.spec.payoff
        u = shoot_continuation(self.spec, a_hi, self.T, +1, self.hi)
        l = shoot_continuation(self.spec, a_lo, self.T, -1, self.lo)
        psi = RateFunction.indicator(a_lo, a_hi, 1.0 / self.T)
        left = BoundaryCondition.dirichlet(float(g(l)))
        right = BoundaryCondition.dirichlet(float(g(u)))
        fu = self._slope((l, u), psi, left, right, u, "left") - float(g.derivative(u, 1, side="right"))
        fl = self._slope((l, u), psi, left, right, l, "right") - float(g.derivative(l, 1, side="left"))
        return fl, fu, l, u


def _first_root(f, bracket, what: str, diag: dict) -> float:
    roots = scan_roots(f, bracket)
    diag[f"{what}_roots"] = roots
    if not roots:
        raise ConstructionError(f"construction failed: no smooth-fit root for {what}",
                                {"bracket": list(bracket), **diag})
    if len(roots) > 1:
        diag.setdefault("multiplicity_flags", []).append(what)
    return roots[0]


def _pure_component(solver: _Solver, h: ComponentHint, bracket, diag):
    c = h.center
    if h.symmetric:
        w = _first_root(lambda w: solver.pure_symmetric(c, w), bracket, f"half-width@{c:g}", diag)
        return c - w, c + w

    def inner_u(l):
        return c + _first_root(lambda w: solver.pure_sides(l, c + w)[1], bracket, f"upper@{c:g}", {})

    def outer(dl):
        l = c - dl
        return solver.pure_sides(l, inner_u(l))[0]
    dl = _first_root(outer, bracket, f"lower@{c:g}", diag)
    l = c - dl
    return l, inner_u(l)


def _randomized_component(solver: _Solver, h: ComponentHint, bracket, diag):
    c = h.center
    if h.symmetric:
        a = _first_root(lambda a: solver.randomized_symmetric(c, a)[0], bracket, f"inner@{c:g}", diag)
        u = solver.randomized_symmetric(c, a)[1]
        return 2 * c - u, u, c - a, c + a

    def inner_hi(alo):
        return c + _first_root(lambda d: solver.randomized_sides(alo, c + d)[1], bracket, f"inner-upper@{c:g}", {})

    def outer(d):
        alo = c - d
        return solver.randomized_sides(alo, inner_hi(alo))[0]
    d = _first_root(outer, bracket, f"inner-lower@{c:g}", diag)
    a_lo = c - d
    a_hi = inner_hi(a_lo)
    _, _, l, u = solver.randomized_sides(a_lo, a_hi)
    return l, u, a_lo, a_hi


def _generic_strategy(spec: ProblemSpec, hints: list[ComponentHint], n: int):
    T = spec.horizon
    solver = _Solver(spec, n)
    lo, hi = spec.domain()
    intervals, pieces = [], []
    diag: dict = {"components": []}
    for h in hints:
        span = min(h.center - lo, hi - h.center)
        if h.symmetric and h.bracket is not None:
            _check_symmetry(spec, h.center, h.bracket[1])
        comp = {"center": h.center}
        randomized = h.randomize is True
        if h.randomize is not True:
            bracket = h.bracket or (1e-3 * span, 0.5 * span)
            l, u = _pure_component(solver, h, bracket, diag)
            comp.update(lo=l, hi=u, max_e=solver.pure_max_e(l, u))
            if comp["max_e"] > T * (1 + 1e-6):
                if h.randomize is False:
                    raise ConstructionError("construction failed: pure component violates the constraint",
                                            {**diag, **comp})
                randomized = True
        if randomized:
            bracket = h.bracket or (1e-3 * math.sqrt(T), 0.5 * span)
            l, u, a, b = _randomized_component(solver, h, bracket, diag)
            comp.update(lo=l, hi=u, a=a, b=b)
            pieces.append((a, b))
        if h.symmetric:
            # the half-line reduction needs symmetry on the whole component
            _check_symmetry(spec, h.center, comp["hi"] - h.center)
        intervals.append((comp["lo"], comp["hi"]))
        diag["components"].append(comp)
    starts, values = [], []
    for a, b in sorted(pieces):
        starts += [a, b]
        values += [1.0 / T, 0.0]
    s = Strategy(OpenSetUnion(intervals), RateFunction(starts, values), T)
    return s, (FREE_BOUNDARY if pieces else UNCONSTRAINED), diag


# --- driver -----------------------------------------------------------------------

@dataclass
class ConstructionResult:
    strategy: Strategy
    e: Field
    J: Field
    case: str
    boundary_data: dict
    report: VerificationReport
    flags: dict = field(default_factory=dict)

    @property
    def equilibrium(self) -> bool:
        return self.report.overall

    def to_dict(self) -> dict:
        from .verify import _jsonable
        return {"case": self.case, "strategy": self.strategy.to_dict(),
                "boundaryData": _jsonable(self.boundary_data), "equilibrium": self.equilibrium,
                "flags": _jsonable(self.flags), "verification": self.report.to_dict()}


def _system_residuals(s: Strategy, e: Field) -> dict:
    """Residuals of the three conditions on each continuation piece."""
    out = {}
    T = s.horizon
    for lo, hi in s.D:
        for a, b in s.randomization_set((lo, hi)):
            for p, side in ((a, "left"), (b, "right")):
                if not math.isfinite(p) or p in (lo, hi):
                    continue
                i = int(np.argmin(np.abs(e.grid - p)))
                out[f"{p:.12g}"] = {"e_minus_T": float(e.values[i] - T),
                                    "e_slope": float(one_sided_derivative(e, float(e.grid[i]), side))}
        for p in (lo, hi):
            if math.isfinite(p):
                i = int(np.argmin(np.abs(e.grid - p)))
                out.setdefault(f"{p:.12g}", {})["e_boundary"] = float(e.values[i])
    return out


def construct_equilibrium(spec: ProblemSpec, hints: list[ComponentHint] | None = None,
                          n: int = DEFAULT_NODES, bracket=None, tol: dict | None = None) -> ConstructionResult:
    """Construct and verify an equilibrium.

    Parameters
    ----------
    spec : ProblemSpec
    hints : list of ComponentHint, optional
        Required unless the problem is Brownian motion with ``g = |x|``, the
        two-well builtin, or passes the submartingale certificate.
    n : int
        Grid nodes per component.
    bracket : (float, float), optional
        Outer-boundary bracket for the closed-form Brownian case.

    Returns
    -------
    ConstructionResult
        ``flags['equilibrium']`` is False when the verifier rejects the result.

    Raises
    ------
    ConstructionError
        When no case applies or no smooth-fit root exists.
    """
    diag: dict = {}
    if hints is None and _is_bm_abs(spec):
        s, case, data = _bm_abs_strategy(spec, bracket)
    else:
        cert = submartingale_certificate(spec)
        diag["submartingale"] = cert.details
        hints = hints if hints is not None else default_hints(spec)
        if hints is None and cert.passed:
            s = Strategy.full_randomization(spec.alpha, spec.beta, spec.horizon)
            case, data = SUBMARTINGALE, {}
        elif hints is None:
            raise ConstructionError("construction failed: no automatic case applies and no structure hint given",
                                    diag)
        else:
            s, case, data = _generic_strategy(spec, hints, n)
    e = expected_time_field(spec, s, n=n)
    J = reward_field(spec, s, n=n)
    J_coarse = reward_field(spec, s, n=max(64, n // 2))
    report = check_sufficient(spec, s, e, J, tol=tol, J_coarse=J_coarse)
    data = dict(data)
    data["system_residuals"] = _system_residuals(s, e)
    flags = {"equilibrium": report.overall, "failing": report.failing(),
             "multiplicity": data.get("multiplicity_flags", []) or (data.get("root_count", 1) > 1)}
    flags.update({k: v for k, v in diag.items() if k != "submartingale"})
    return ConstructionResult(s, e, J, case, data, report, flags)
