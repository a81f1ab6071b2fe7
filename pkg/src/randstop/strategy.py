"""
Randomized Markovian stopping strategies
========================================

A strategy is a pair ``(D, psi)``: stop at the first exit from the open set
``D`` or when the clock ``int_0^t psi(X_s) ds`` exceeds an independent
``Exp(1)`` variable, whichever comes first. ``D`` is a finite union of open
intervals and ``psi`` a right-continuous piecewise-constant rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

INF = math.inf


@dataclass(frozen=True)
class Interval:
    """Interval with explicit endpoint closure flags; ``lo == hi`` is a point."""

    lo: float
    hi: float
    closed_lo: bool = False
    closed_hi: bool = False

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        lo_ok = (x >= self.lo) if self.closed_lo else (x > self.lo)
        hi_ok = (x <= self.hi) if self.closed_hi else (x < self.hi)
        return lo_ok & hi_ok

    @property
    def empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.closed_lo and self.closed_hi)

    def __str__(self):
        lb = "[" if self.closed_lo else "("
        rb = "]" if self.closed_hi else ")"
        return f"{lb}{self.lo:g}, {self.hi:g}{rb}"


@dataclass(frozen=True)
class Region:
    """Finite union of disjoint :class:`Interval` objects."""

    parts: tuple[Interval, ...] = ()

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for iv in self.parts:
            out |= iv.contains(x)
        return out

    @property
    def empty(self) -> bool:
        return all(iv.empty for iv in self.parts)

    def __str__(self):
        return " U ".join(str(iv) for iv in self.parts) if self.parts else "{}"


class OpenSetUnion:
    """Finite sorted union of disjoint open intervals ``(l_i, u_i)``.

    Adjacent intervals may share an endpoint (``u_i == l_{i+1}``); that point is
    then an isolated point of the complement.
    """

    def __init__(self, intervals: Iterable[Sequence[float]] = ()):
        ivs = [(float(lo), float(hi)) for lo, hi in intervals]
        ivs.sort()
        for lo, hi in ivs:
            if not lo < hi:
                raise DomainError(f"empty interval ({lo}, {hi})")
        for (_, u), (l2, _) in zip(ivs, ivs[1:]):
            if l2 < u:
                raise DomainError(f"overlapping intervals near {l2}")
        self.intervals: tuple[tuple[float, float], ...] = tuple(ivs)
        self._lo = np.array([iv[0] for iv in ivs])
        self._hi = np.array([iv[1] for iv in ivs])

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __eq__(self, other):
        return isinstance(other, OpenSetUnion) and self.intervals == other.intervals

    def __hash__(self):
        return hash(self.intervals)

    def __repr__(self):
        return f"OpenSetUnion({list(self.intervals)!r})"

    def contains(self, x):
        """Vectorised membership test."""
        x = np.asarray(x, dtype=float)
        if not self.intervals:
            return np.zeros(x.shape, dtype=bool)
        k = np.searchsorted(self._lo, x, side="left") - 1
        kc = np.clip(k, 0, len(self.intervals) - 1)
        return (k >= 0) & (x > self._lo[kc]) & (x < self._hi[kc])

    def component_index(self, x):
        """Index of the component containing each ``x``, ``-1`` outside ``D``."""
        x = np.asarray(x, dtype=float)
        if not self.intervals:
            return np.full(x.shape, -1, dtype=int)
        k = np.searchsorted(self._lo, x, side="left") - 1
        kc = np.clip(k, 0, len(self.intervals) - 1)
        inside = (k >= 0) & (x > self._lo[kc]) & (x < self._hi[kc])
        return np.where(inside, kc, -1)

    def boundary(self, alpha=-INF, beta=INF) -> list[float]:
        """Boundary points of ``D`` lying inside ``(alpha, beta)``."""
        pts = sorted({p for iv in self.intervals for p in iv if alpha < p < beta})
        return pts

    def closure_parts(self) -> list[tuple[float, float]]:
        """Connected components of the closure, as closed intervals."""
        merged: list[list[float]] = []
        for lo, hi in self.intervals:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return [(a, b) for a, b in merged]

    def shifted(self, offset: float) -> "OpenSetUnion":
        return OpenSetUnion((lo + offset, hi + offset) for lo, hi in self.intervals)

    def to_pairs(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


class RateFunction:
    """Right-continuous piecewise-constant rate ``psi >= 0``.

    ``starts[i]`` opens the piece ``[starts[i], starts[i+1])`` carrying
    ``values[i]``; left of ``starts[0]`` the rate is zero. ``starts[0]`` may be
    ``-inf`` for a rate that is positive near the lower boundary.
    """

    def __init__(self, starts: Sequence[float] = (), values: Sequence[float] = ()):
        starts = [float(s) for s in starts]
        values = [float(v) for v in values]
        if len(starts) != len(values):
            raise ValueError("starts and values must have equal length")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("rate breakpoints must be strictly increasing")
        self.starts = np.array(starts, dtype=float)
        self.values = np.array(values, dtype=float)

    @classmethod
    def zero(cls) -> "RateFunction":
        return cls()

    @classmethod
    def indicator(cls, lo: float, hi: float, value: float) -> "RateFunction":
        """``value * 1_[lo, hi)``."""
        if hi == INF:
            return cls([lo], [value])
        return cls([lo, hi], [value, 0.0])

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "RateFunction":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    def to_pairs(self) -> list[list[float]]:
        return [[float(s), float(v)] for s, v in zip(self.starts, self.values)]

    def __eq__(self, other):
        return (isinstance(other, RateFunction) and np.array_equal(self.starts, other.starts)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((tuple(self.starts), tuple(self.values)))

    def __repr__(self):
        return f"RateFunction({self.to_pairs()!r})"

    @property
    def breakpoints(self) -> list[float]:
        """Finite points where the rate may jump."""
        return [float(s) for s in self.starts if math.isfinite(s)]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not len(self.starts):
            out = np.zeros(x.shape)
        else:
            k = np.searchsorted(self.starts, x, side="right") - 1
            out = np.where(k >= 0, self.values[np.clip(k, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out

    def left_limit(self, x):
        """``psi(x-)``."""
        x = np.asarray(x, dtype=float)
        if not len(self.starts):
            out = np.zeros(x.shape)
        else:
            k = np.searchsorted(self.starts, x, side="left") - 1
            out = np.where(k >= 0, self.values[np.clip(k, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out

    def pieces(self) -> list[tuple[float, float, float]]:
        """All pieces ``(lo, hi, value)`` covering the real line, zero piece included."""
        out = []
        edges = [-INF] + list(self.starts) + [INF]
        vals = [0.0] + list(self.values)
        for lo, hi, v in zip(edges[:-1], edges[1:], vals):
            if lo < hi:
                out.append((float(lo), float(hi), float(v)))
        return out

    def positive_pieces(self) -> list[tuple[float, float, float]]:
        return [p for p in self.pieces() if p[2] > 0]

    def scaled(self, factor: float) -> "RateFunction":
        return RateFunction(self.starts, self.values * factor)

    def shifted(self, offset: float) -> "RateFunction":
        return RateFunction(self.starts + offset, self.values)


@dataclass(frozen=True)
class Strategy:
    """Randomized Markovian time given by the open set ``D`` and rate ``psi``."""

    D: OpenSetUnion
    psi: RateFunction = field(default_factory=RateFunction.zero)
    horizon: float = 1.0

    @classmethod
    def pure(cls, intervals, horizon) -> "Strategy":
        """First exit time of ``D`` (``psi == 0``)."""
        return cls(OpenSetUnion(intervals), RateFunction.zero(), horizon)

    @classmethod
    def full_randomization(cls, alpha, beta, horizon) -> "Strategy":
        """``D = (alpha, beta)`` with ``psi == 1/T``."""
        return cls(OpenSetUnion([(alpha, beta)]), RateFunction([alpha], [1.0 / horizon]), horizon)

    @classmethod
    def empty(cls, horizon) -> "Strategy":
        """Immediate stopping, ``D`` empty."""
        return cls(OpenSetUnion(), RateFunction.zero(), horizon)

    def shifted(self, offset: float) -> "Strategy":
        return Strategy(self.D.shifted(offset), self.psi.shifted(offset), self.horizon)

    def stops_at(self, x):
        return ~self.D.contains(x)

    def randomization_set(self, component: tuple[float, float]):
        """``{psi > 0}`` inside one component, as a list of ``(lo, hi)`` half-open pieces."""
        lo, hi = component
        out = []
        for a, b, v in self.psi.positive_pieces():
            a2, b2 = max(a, lo), min(b, hi)
            if a2 < b2:
                if out and out[-1][1] == a2:
                    out[-1] = (out[-1][0], b2)
                else:
                    out.append((a2, b2))
        return out

    def to_dict(self) -> dict:
        return {"intervals": self.D.to_pairs(), "rate": self.psi.to_pairs(), "horizon": self.horizon}


@dataclass(frozen=True)
class RegionPartition:
    stopping: Region
    continuation: Region
    randomization: Region


def _complement_parts(D: OpenSetUnion, alpha: float, beta: float) -> list[Interval]:
    parts = []
    cursor = alpha
    for lo, hi in D:
        if lo > cursor:
            parts.append(Interval(cursor, lo, cursor > alpha, True))
        elif lo == cursor and cursor > alpha:
            # shared endpoint: isolated point of the complement
            parts.append(Interval(lo, lo, True, True))
        cursor = hi
    if cursor < beta:
        parts.append(Interval(cursor, beta, cursor > alpha, False))
    return [p for p in parts if not p.empty]


def region_partition(s: Strategy, alpha: float = -INF, beta: float = INF) -> RegionPartition:
    """Split ``(alpha, beta)`` into stopping, continuation and randomization regions."""
    stopping = _complement_parts(s.D, alpha, beta)
    rand, cont = [], []
    for lo, hi in s.D:
        for a, b, v in s.psi.pieces():
            a2, b2 = max(a, lo), min(b, hi)
            if not a2 < b2:
                continue
            closed_lo = a2 > lo  # piece start inside D is included, the D endpoint is not
            iv = Interval(a2, b2, closed_lo, False)
            (rand if v > 0 else cont).append(iv)
    return RegionPartition(Region(tuple(stopping)), Region(tuple(_merge(cont))), Region(tuple(_merge(rand))))


def _merge(parts: list[Interval]) -> list[Interval]:
    out: list[Interval] = []
    for iv in sorted(parts, key=lambda p: (p.lo, p.hi)):
        if out and out[-1].hi == iv.lo and (out[-1].closed_hi or iv.closed_lo):
            prev = out[-1]
            out[-1] = Interval(prev.lo, iv.hi, prev.closed_lo, iv.closed_hi)
        else:
            out.append(iv)
    return out


def rate_at(s: Strategy, x: float) -> tuple[float, float]:
    """``(psi(x), psi(x-))``."""
    return float(s.psi(x)), float(s.psi.left_limit(x))


def validate(s: Strategy, equilibrium_candidate: bool = False, alpha: float = -INF,
             beta: float = INF, rtol: float = 1e-12) -> list[str]:
    """List the violated strategy invariants; empty when the strategy is valid.

    With ``equilibrium_candidate`` the rate must take values in ``{0, 1/T}`` and
    each component's randomization set must be one connected piece that only
    touches the component boundary at ``alpha`` or ``beta``.
    """
    out = []
    ivs = list(s.D)
    for lo, hi in ivs:
        if not lo < hi:
            out.append(f"empty interval ({lo}, {hi})")
        if lo < alpha or hi > beta:
            out.append(f"interval ({lo}, {hi}) leaves the state space")
    for (_, u), (l2, _) in zip(ivs, ivs[1:]):
        if l2 < u:
            out.append("intervals overlap or are unsorted")
    if np.any(s.psi.values < 0) or not np.all(np.isfinite(s.psi.values)):
        out.append("rate must be finite and nonnegative")
    closure = s.D.closure_parts()
    for a, b, v in s.psi.positive_pieces():
        inside = any(ca <= a and b <= cb for ca, cb in closure)
        if not inside:
            out.append(f"rate positive on [{a:g}, {b:g}) outside the closure of D")
    if not equilibrium_candidate:
        return out
    target = 1.0 / s.horizon
    for a, b, v in s.psi.positive_pieces():
        if abs(v - target) > rtol * target:
            out.append(f"rate not in {{0,1/T}}: {v:g} on [{a:g}, {b:g})")
    for lo, hi in ivs:
        rset = s.randomization_set((lo, hi))
        if len(rset) > 1:
            out.append(f"randomization set not connected in component ({lo:g}, {hi:g})")
            continue
        if rset:
            a, b = rset[0]
            if a == lo and lo > alpha:
                out.append(f"randomization set touches the finite boundary {lo:g} of D")
            if b == hi and hi < beta:
                out.append(f"randomization set touches the finite boundary {hi:g} of D")
    return out
