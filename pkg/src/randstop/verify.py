"""
Verification of equilibrium conditions
======================================

Two condition sets are checked on grid-sampled fields:

* sufficient conditions (i)-(iv): ``(A - r) g <= 0`` on the interior of the
  stopping region, ``e = T`` on the interior of ``{psi > 0}``, one-sided
  derivative ordering of ``J`` at every point of the boundary of ``D`` together
  with a grid-refinement surrogate for one-sided ``C^2`` regularity, and
  ``g <= J``, ``e <= T`` on ``D``;
* necessary conditions (i)-(iv): the same generator sign, ``g <= J``, the
  generalized smooth fit and ``min(|g - J|, |e - T|) = 0`` on the interior of
  ``{psi > 0}``.

Reports only state which hypotheses held numerically. Continuity of ``J`` on
``D`` is assumed at grid level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import ProblemSpec, generator_apply
from .ode import Field, one_sided_derivative
from .strategy import OpenSetUnion, Strategy, region_partition

VALUE_TOL = 1e-6
DERIV_TOL = 1e-4
C2_RATIO = 0.2


@dataclass
class Condition:
    name: str
    passed: bool
    residual: float
    witness: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "residual": float(self.residual),
                "witness": None if self.witness is None else float(self.witness),
                "details": _jsonable(self.details)}


@dataclass
class VerificationReport:
    theorem: str
    conditions: list[Condition]
    tolerances: dict
    notes: list[str] = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def failing(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "overall": self.overall,
                "conditions": [c.to_dict() for c in self.conditions],
                "tolerances": dict(self.tolerances), "notes": list(self.notes)}

    def table(self) -> str:
        lines = [f"{self.theorem} conditions: {'PASS' if self.overall else 'FAIL'}"]
        for c in self.conditions:
            w = "-" if c.witness is None else f"{c.witness:.6g}"
            lines.append(f"  {c.name:<6} {'pass' if c.passed else 'FAIL':<5} residual={c.residual:.3e} witness={w}")
        return "\n".join(lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- regularity ---------------------------------------------------------------

@dataclass
class RegularityReport:
    passed: bool
    points: list[tuple[float, str]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "points": [[p, c] for p, c in self.points]}


def check_regularity(D: OpenSetUnion, spec: ProblemSpec | None = None) -> RegularityReport:
    """Classify every boundary point of ``D``.

    A point shared by two components is an isolated point of the complement;
    every other boundary point has a one-sided interval of ``D^c`` next to it.
    Finite unions always pass.
    """
    alpha = spec.alpha if spec is not None else -math.inf
    beta = spec.beta if spec is not None else math.inf
    ends = [hi for _, hi in D]
    starts = [lo for lo, _ in D]
    pts = []
    for p in D.boundary(alpha, beta):
        if p in ends and p in starts:
            pts.append((p, "isolated point of D^c"))
        elif p in ends:
            pts.append((p, "D^c contains a right neighbourhood [p, p+eps)"))
        else:
            pts.append((p, "D^c contains a left neighbourhood (p-eps, p]"))
    return RegularityReport(True, pts)


# --- helpers --------------------------------------------------------------------

def _scale(spec: ProblemSpec, grid: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(spec.payoff(grid)))))


def _interior_samples(spec: ProblemSpec, lo: float, hi: float, m: int = 801) -> np.ndarray:
    dlo, dhi = spec.domain()
    a, b = max(lo, dlo), min(hi, dhi)
    if not a < b:
        return np.empty(0)
    xs = np.linspace(a, b, m)[1:-1]
    kinks = spec.breakpoints(a, b)
    if kinks:
        gap = 1e-2 * (b - a) / m + 5e-3
        keep = np.ones(xs.shape, dtype=bool)
        for k in kinks:
            keep &= np.abs(xs - k) > gap
        xs = xs[keep]
    return xs


def _condition_generator(spec: ProblemSpec, s: Strategy, tol: float, dtol: float) -> Condition:
    """(A - r) g <= 0 on the interior of the stopping region.

    A declared kink inside the region adds a point mass to ``(A - r) g`` with
    the sign of the slope jump, so only concave kinks are admissible.
    """
    g = spec.payoff
    lo, hi = spec.domain()
    worst, witness = 0.0, None
    kinks = []
    kink_ok = True
    for iv in region_partition(s, spec.alpha, spec.beta).stopping.parts:
        if not iv.lo < iv.hi:
            continue
        xs = _interior_samples(spec, iv.lo, iv.hi)
        if xs.size:
            val = generator_apply(spec, g(xs), g.derivative(xs, 1), g.derivative(xs, 2), xs) - spec.discount * g(xs)
            i = int(np.argmax(val))
            if witness is None or val[i] > worst:
                worst, witness = float(val[i]), float(xs[i])
        for k in spec.breakpoints(max(iv.lo, lo), min(iv.hi, hi)):
            slope = float(g.derivative(k, 1, side="right") - g.derivative(k, 1, side="left"))
            kinks.append({"x": k, "slope_jump": slope})
            if slope > dtol:
                kink_ok = False
                witness = k
    passed = worst <= tol and kink_ok
    return Condition("(i)", passed, max(worst, 0.0), witness,
                     {"max_generator": worst, "kinks": kinks, "kinks_concave": kink_ok})


def _rand_interior_nodes(s: Strategy, f: Field) -> np.ndarray:
    """Mask of grid nodes in the interior of ``{psi > 0}`` within ``D``."""
    mask = np.zeros(f.grid.shape, dtype=bool)
    for lo, hi in s.D:
        for a, b in s.randomization_set((lo, hi)):
            mask |= (f.grid > a) & (f.grid < b)
    return mask


def _condition_e_equals_T(s: Strategy, e: Field, tol: float) -> Condition:
    mask = _rand_interior_nodes(s, e)
    if not mask.any():
        return Condition("(ii)", True, 0.0, None, {"nodes": 0})
    dev = np.abs(e.values[mask] - s.horizon)
    i = int(np.argmax(dev))
    return Condition("(ii)", dev[i] <= tol, float(dev[i]), float(e.grid[mask][i]), {"nodes": int(mask.sum())})


def _side_derivative(spec: ProblemSpec, s: Strategy, J: Field, p: float, side: str, order: int = 1):
    """One-sided derivative of ``J`` at ``p``: from the field inside ``D``, from ``g`` outside."""
    probe = p + (1e-9 * max(1.0, abs(p)) if side == "right" else -1e-9 * max(1.0, abs(p)))
    if bool(s.D.contains(probe)):
        return one_sided_derivative(J, p, side, order), "field"
    return float(spec.payoff.derivative(p, order, side=side)), "payoff"


def _condition_smooth_fit(spec: ProblemSpec, s: Strategy, J: Field, tol: float, name: str,
                          J_coarse: Field | None = None, c2_floor: float = 1e-3) -> Condition:
    lo, hi = spec.domain()
    worst, witness = -math.inf, None
    points = []
    c2_ok = True
    for p in s.D.boundary(spec.alpha, spec.beta):
        if not lo < p < hi:
            continue
        dr, src_r = _side_derivative(spec, s, J, p, "right")
        dl, src_l = _side_derivative(spec, s, J, p, "left")
        gap = dr - dl
        info = {"x": p, "right": dr, "left": dl, "gap": gap}
        if J_coarse is not None:
            for side, src in (("right", src_r), ("left", src_l)):
                if src != "field":
                    continue
                fine = one_sided_derivative(J, p, side, 2)
                coarse = one_sided_derivative(J_coarse, p, side, 2)
                ok = abs(fine - coarse) <= C2_RATIO * abs(fine) + c2_floor
                info[f"c2_{side}"] = {"fine": fine, "coarse": coarse, "stable": ok}
                c2_ok &= ok
        points.append(info)
        if gap > worst:
            worst, witness = gap, p
    if witness is None:
        return Condition(name, True, 0.0, None, {"points": []})
    passed = worst <= tol and c2_ok
    details = {"points": points}
    if J_coarse is not None:
        details["c2_stable"] = c2_ok
    return Condition(name, passed, max(worst, 0.0), witness, details)


def _in_D_mask(s: Strategy, f: Field) -> np.ndarray:
    return np.asarray(s.D.contains(f.grid), dtype=bool)


def _condition_g_le_J(spec: ProblemSpec, s: Strategy, J: Field, tol: float, name: str, on_D: bool = True):
    mask = _in_D_mask(s, J) if on_D else np.ones(J.grid.shape, dtype=bool)
    if not mask.any():
        return Condition(name, True, 0.0, None, {})
    diff = spec.payoff(J.grid[mask]) - J.values[mask]
    i = int(np.argmax(diff))
    return Condition(name, diff[i] <= tol, float(max(diff[i], 0.0)), float(J.grid[mask][i]),
                     {"max_g_minus_J": float(diff[i])})


def _tolerances(spec: ProblemSpec, s: Strategy, J: Field, tol: dict | None) -> dict:
    scale = _scale(spec, J.grid)
    out = {"value": VALUE_TOL * scale, "derivative": DERIV_TOL * scale, "time": VALUE_TOL * s.horizon}
    if tol:
        out.update(tol)
    return out


def _coarse_reward(spec: ProblemSpec, s: Strategy, J: Field) -> Field:
    from .reward import reward_field
    n = int(J.meta.get("n", 2048))
    return reward_field(spec, s, n=max(64, n // 2))


def check_sufficient(spec: ProblemSpec, s: Strategy, e: Field, J: Field, tol: dict | None = None,
                     J_coarse: Field | None = None) -> VerificationReport:
    """Check the sufficient conditions (i)-(iv) on grid-sampled fields.

    ``tol`` may override the ``'value'``, ``'derivative'`` and ``'time'``
    tolerances. ``J_coarse`` (a reward on a coarser grid) feeds the one-sided
    ``C^2`` refinement test; it is computed on half the nodes when omitted.
    """
    t = _tolerances(spec, s, J, tol)
    if J_coarse is None:
        J_coarse = _coarse_reward(spec, s, J)
    c1 = _condition_generator(spec, s, t["value"], t["derivative"])
    c2 = _condition_e_equals_T(s, e, t["time"])
    c3 = _condition_smooth_fit(spec, s, J, t["derivative"], "(iii)", J_coarse)
    g_le_J = _condition_g_le_J(spec, s, J, t["value"], "(iv)")
    mask = _in_D_mask(s, e)
    emax = float(np.max(e.values[mask])) if mask.any() else 0.0
    wit = float(e.grid[mask][int(np.argmax(e.values[mask]))]) if mask.any() else None
    excess = emax - s.horizon
    c4 = Condition("(iv)", g_le_J.passed and excess <= t["time"],
                   max(g_le_J.residual, excess, 0.0),
                   g_le_J.witness if not g_le_J.passed else wit,
                   {**g_le_J.details, "max_e": emax, "horizon": s.horizon})
    notes = ["continuity of J on D is assumed at grid level",
             "one-sided C^2 regularity is tested by refinement stability of second differences"]
    return VerificationReport("sufficient", [c1, c2, c3, c4], t, notes)


def check_necessary(spec: ProblemSpec, s: Strategy, e: Field, J: Field,
                    tol: dict | None = None) -> VerificationReport:
    """Check the necessary conditions (i)-(iv) on grid-sampled fields."""
    t = _tolerances(spec, s, J, tol)
    c1 = _condition_generator(spec, s, t["value"], t["derivative"])
    c2 = _condition_g_le_J(spec, s, J, t["value"], "(ii)", on_D=False)
    c3 = _condition_smooth_fit(spec, s, J, t["derivative"], "(iii)")
    mask = _rand_interior_nodes(s, J)
    if mask.any():
        xs = J.grid[mask]
        gap_g = np.abs(spec.payoff(xs) - J.values[mask])
        gap_e = np.abs(e(xs) - s.horizon)
        m = np.minimum(gap_g / t["value"], gap_e / t["time"])
        i = int(np.argmax(m))
        c4 = Condition("(iv)", m[i] <= 1.0, float(min(gap_g[i], gap_e[i])), float(xs[i]),
                       {"g_gap": float(gap_g[i]), "e_gap": float(gap_e[i])})
    else:
        c4 = Condition("(iv)", True, 0.0, None, {"nodes": 0})
    notes = ["continuity of J on D is assumed at grid level"]
    return VerificationReport("necessary", [c1, c2, c3, c4], t, notes)
