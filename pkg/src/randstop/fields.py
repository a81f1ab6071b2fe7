"""Helpers shared by the expected-time and reward solvers: component geometry
under truncation, sampling of the stopping region and stitching."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import ProblemSpec
from .ode import Field, concat_fields
from .strategy import Strategy, region_partition


@dataclass(frozen=True)
class Component:
    """One component of ``D`` clipped to the numerical domain."""

    lo: float  # true endpoints, possibly infinite
    hi: float
    clo: float  # clipped endpoints
    chi: float
    trunc_lo: bool  # clipped end stands in for an infinite/natural boundary
    trunc_hi: bool

    @property
    def unbounded(self) -> bool:
        return self.trunc_lo or self.trunc_hi


class TruncationWarning(RuntimeWarning):
    pass


def components(spec: ProblemSpec, s: Strategy) -> list[Component]:
    lo, hi = spec.domain()
    out = []
    for a, b in s.D:
        ca, cb = max(a, lo), min(b, hi)
        if not ca < cb:
            continue
        out.append(Component(a, b, ca, cb, a < lo, b > hi))
    return out


def stopping_samples(spec: ProblemSpec, s: Strategy, n: int) -> list[np.ndarray]:
    """Grids covering the stopping region inside the numerical domain."""
    lo, hi = spec.domain()
    parts = region_partition(s, spec.alpha, spec.beta).stopping.parts
    out = []
    for iv in parts:
        a, b = max(iv.lo, lo), min(iv.hi, hi)
        if a > b:
            continue
        if a == b:
            out.append(np.array([a]))
            continue
        m = max(16, int(round(n * (b - a) / (hi - lo))))
        out.append(np.linspace(a, b, m + 1))
    return out


def stitch(spec: ProblemSpec, s: Strategy, comp_fields: list[Field], stop_value: Callable,
           n: int, tag: str) -> Field:
    """Combine per-component fields with ``stop_value`` sampled on the stopping region."""
    parts = list(comp_fields)
    for g in stopping_samples(spec, s, n):
        parts.append(Field(g, stop_value(g), tag))
    if not parts:
        raise ValueError("nothing to stitch")
    return concat_fields(parts, tag)


def warn_truncation(msg: str):
    warnings.warn(msg, TruncationWarning, stacklevel=3)


def truncation_sensitivity(solver: Callable[[ProblemSpec], Field], spec: ProblemSpec,
                           factor: float = 1.5) -> float:
    """Max change of a field on the inner half of the domain when the truncation
    radius grows by ``factor``. Zero when no boundary is truncated."""
    if math.isfinite(spec.alpha) and math.isfinite(spec.beta) and spec.truncation is None:
        return 0.0
    lo, hi = spec.domain()
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    wide = spec.with_(truncation=(mid - factor * half, mid + factor * half))
    f0, f1 = solver(spec), solver(wide)
    xs = np.linspace(mid - 0.5 * half, mid + 0.5 * half, 401)
    return float(np.max(np.abs(f0(xs) - f1(xs))))
