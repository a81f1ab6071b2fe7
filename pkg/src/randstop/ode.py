"""
Finite-difference solver for ``mu f' + sigma^2/2 f'' - q f = -s``
=================================================================

The interval is split at declared breakpoints into pieces with uniform spacing.
Interior nodes of a piece carry the central three-point discretisation; a
breakpoint node carries an interface row equating the second-order one-sided
first derivatives from both sides, so the discrete solution is C^1 there by
construction. Neumann and Robin conditions use one-sided second-order stencils,
which keeps the grid equal to the declared nodes. The banded system (two sub-
and two super-diagonals) is solved directly with LAPACK ``gbsv``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .diffusion import ProblemSpec
from .errors import DomainError, NumericError

DEFAULT_NODES = 2048


@dataclass(frozen=True)
class BoundaryCondition:
    """``a f + b f' = c`` at one endpoint."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("boundary condition needs a nonzero coefficient")

    @classmethod
    def dirichlet(cls, value: float) -> "BoundaryCondition":
        return cls(1.0, 0.0, float(value))

    @classmethod
    def neumann(cls, slope: float) -> "BoundaryCondition":
        return cls(0.0, 1.0, float(slope))

    @classmethod
    def robin(cls, a: float, b: float, c: float) -> "BoundaryCondition":
        return cls(float(a), float(b), float(c))

    @property
    def kind(self) -> str:
        if self.b == 0:
            return "dirichlet"
        if self.a == 0:
            return "neumann"
        return "robin"


@dataclass
class Field:
    """Grid-sampled scalar function.

    ``breaks`` lists grid indices where the sampled function may lose
    smoothness (piece boundaries); ``meta`` carries solver diagnostics.
    """

    grid: np.ndarray
    values: np.ndarray
    tag: str = ""
    breaks: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise ValueError("grid and values must be 1D arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    def __len__(self):
        return len(self.grid)

    def __call__(self, x):
        """Piecewise-linear interpolation of the samples."""
        out = np.interp(np.asarray(x, dtype=float), self.grid, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def node_index(self, x: float, atol: float | None = None) -> int:
        """Index of the grid node equal to ``x`` (to rounding)."""
        if atol is None:
            atol = 1e-12 * max(1.0, abs(x))
        i = int(np.searchsorted(self.grid, x))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.grid) and abs(self.grid[j] - x) <= atol:
                return j
        raise DomainError(f"{x} is not a grid node")

    def restricted(self, lo: float, hi: float) -> "Field":
        m = (self.grid >= lo) & (self.grid <= hi)
        return Field(self.grid[m], self.values[m], self.tag, meta=dict(self.meta))


def fd_weights(z: float, xs: Sequence[float], m: int) -> np.ndarray:
    """Finite-difference weights for derivatives up to order ``m`` at ``z``.

    Fornberg's recursion on arbitrary nodes ``xs``; returns an array of shape
    ``(m + 1, len(xs))``.
    """
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, xs[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = 1.0, c4
        c4 = xs[i] - z
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c.T


def one_sided_derivative(f: Field, x: float, side: str, order: int = 1) -> float:
    """One-sided derivative of a sampled field at a grid node.

    Order 1 uses the three-point second-order stencil; order 2 uses four points
    so it is also second-order accurate.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    i = f.node_index(x)
    npts = 3 if order == 1 else 4
    idx = range(i, i - npts, -1) if side == "left" else range(i, i + npts)
    idx = list(idx)
    if idx[-1] < 0 or idx[-1] >= len(f.grid):
        raise DomainError(f"insufficient stencil on the {side} of {x}")
    w = fd_weights(f.grid[i], f.grid[idx], order)[order]
    return float(w @ f.values[idx])


def build_grid(lo: float, hi: float, breakpoints: Sequence[float], n: int,
               min_per_piece: int = 4) -> tuple[np.ndarray, list[int]]:
    """Piecewise-uniform grid on ``[lo, hi]`` with every breakpoint as a node.

    Returns the grid and the indices of interior breakpoint nodes.
    """
    # breakpoints closer than ``eps`` to an end or to each other would give
    # degenerate pieces whose second differences are dominated by roundoff;
    # they are merged into the neighbouring node (a shift far below the
    # discretization error)
    eps = max(1e-10, 1e-4 / max(n - 1, 1)) * (hi - lo)
    pts = [lo]
    for b in sorted(b for b in set(breakpoints) if lo + eps < b < hi - eps):
        if b - pts[-1] > eps:
            pts.append(b)
    pts.append(hi)
    total = hi - lo
    nodes = [np.array([lo])]
    breaks = []
    count = 1
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(min_per_piece, int(round((n - 1) * (b - a) / total)))
        seg = np.linspace(a, b, m + 1)[1:]
        seg[-1] = b
        nodes.append(seg)
        count += m
        breaks.append(count - 1)
    breaks = breaks[:-1]
    return np.concatenate(nodes), breaks


class _Banded:
    """Accumulator for a pentadiagonal system in LAPACK band storage."""

    def __init__(self, n: int):
        self.n = n
        self.ab = np.zeros((5, n))
        self.rhs = np.zeros(n)

    def set(self, i: int, cols: Sequence[int], vals: Sequence[float], rhs: float):
        for j, v in zip(cols, vals):
            if abs(i - j) > 2:
                raise ValueError("stencil exceeds band")
            self.ab[2 + i - j, j] += v
        self.rhs[i] = rhs

    def eliminate(self, j: int, value: float):
        """Pin unknown ``j`` to ``value`` and move its column to the right-hand side.

        The pinned row is then the identity, so the solve returns ``value``
        exactly at ``j``.
        """
        for i in range(max(0, j - 2), min(self.n, j + 3)):
            if i != j:
                self.rhs[i] -= self.ab[2 + i - j, j] * value
            self.ab[2 + i - j, j] = 0.0
        self.ab[2, j] = 1.0
        self.rhs[j] = value

    def solve(self) -> np.ndarray:
        return solve_banded((2, 2), self.ab, self.rhs, check_finite=True)


def _edge_row(sys: _Banded, bc: BoundaryCondition, grid: np.ndarray, at_left: bool):
    if at_left:
        idx = [0, 1, 2]
    else:
        n = len(grid)
        idx = [n - 1, n - 2, n - 3]
    w = fd_weights(grid[idx[0]], grid[idx], 1)[1]
    vals = bc.b * w
    vals[0] += bc.a
    sys.set(idx[0], idx, vals, bc.c)


def solve_linear_bvp(spec: ProblemSpec, interval: tuple[float, float], q: Callable, s: Callable,
                     left: BoundaryCondition, right: BoundaryCondition, n: int = DEFAULT_NODES,
                     breakpoints: Sequence[float] = (), tag: str = "", check_tol: float = 1e-7,
                     grid: np.ndarray | None = None) -> Field:
    """Solve ``mu f' + sigma^2/2 f'' - q f = -s`` on ``interval``.

    Parameters
    ----------
    q, s : callables
        Vectorised coefficient and source. They are only evaluated at interior
        nodes of the pieces, never at breakpoint nodes, so the side convention of
        a jump is immaterial.
    breakpoints : sequence of float
        Extra points where ``q`` or ``s`` may jump or kink. Declared payoff and
        coefficient breakpoints of ``spec`` are always added.
    grid : array, optional
        Explicit node set spanning ``interval``; nodes equal to a breakpoint get
        interface rows. By default a piecewise-uniform grid of about ``n`` nodes.

    Raises
    ------
    NumericError
        If the linear system is singular or the discrete residual exceeds
        ``check_tol`` (relative to the equation scale).
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise DomainError(f"empty interval ({lo}, {hi})")
    if n < 16:
        raise DomainError("need at least 16 grid nodes")
    bps = set(float(b) for b in breakpoints) | set(spec.breakpoints(lo, hi))
    if grid is None:
        grid, breaks = build_grid(lo, hi, bps, n)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid[0] != lo or grid[-1] != hi or len(grid) < 5:
            raise DomainError("explicit grid must span the interval with at least 5 nodes")
        bp_arr = np.array(sorted(bps))
        breaks = [i for i in range(2, len(grid) - 2)
                  if len(bp_arr) and np.min(np.abs(bp_arr - grid[i])) <= 1e-12 * max(1.0, abs(grid[i]))]
    N = len(grid)
    sys = _Banded(N)
    is_break = np.zeros(N, dtype=bool)
    is_break[breaks] = True
    interior = np.arange(1, N - 1)
    plain = interior[~is_break[interior]]

    xi = grid[plain]
    hl = grid[plain] - grid[plain - 1]
    hr = grid[plain + 1] - grid[plain]
    mu = spec.drift(xi)
    d = 0.5 * spec.volatility(xi) ** 2
    qv = np.asarray(q(xi), dtype=float) * np.ones_like(xi)
    sv = np.asarray(s(xi), dtype=float) * np.ones_like(xi)
    # nonuniform three-point weights (uniform inside a piece)
    wl1 = -hr / (hl * (hl + hr))
    wc1 = (hr - hl) / (hl * hr)
    wr1 = hl / (hr * (hl + hr))
    wl2 = 2.0 / (hl * (hl + hr))
    wc2 = -2.0 / (hl * hr)
    wr2 = 2.0 / (hr * (hl + hr))
    lower = mu * wl1 + d * wl2
    diag = mu * wc1 + d * wc2 - qv
    upper = mu * wr1 + d * wr2
    sys.ab[3, plain - 1] = lower
    sys.ab[2, plain] = diag
    sys.ab[1, plain + 1] = upper
    sys.rhs[plain] = -sv

    for k in breaks:
        wl = fd_weights(grid[k], grid[[k, k - 1, k - 2]], 1)[1]
        wr = fd_weights(grid[k], grid[[k, k + 1, k + 2]], 1)[1]
        sys.set(k, [k, k - 1, k - 2, k + 1, k + 2], [wl[0] - wr[0], wl[1], wl[2], -wr[1], -wr[2]], 0.0)

    _edge_row(sys, left, grid, True)
    _edge_row(sys, right, grid, False)
    if left.a == 0 and right.a == 0 and not np.any(qv):
        # only derivatives are pinned and nothing damps: solutions differ by constants
        raise NumericError(f"singular system on ({lo:g}, {hi:g}): Neumann data at both ends with q = 0")
    for bc, j in ((left, 0), (right, N - 1)):
        if bc.b == 0:
            sys.eliminate(j, bc.c / bc.a)

    try:
        with np.errstate(all="raise"):
            vals = sys.solve()
    except (LinAlgError, FloatingPointError, ValueError) as exc:
        raise NumericError(f"singular system on ({lo:g}, {hi:g}): {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise NumericError(f"non-finite solution on ({lo:g}, {hi:g})")

    out = Field(grid, vals, tag, breaks=tuple(breaks))
    res = max_residual(spec, out, q, s)
    scale = 1.0 + float(np.max(np.abs(sv), initial=0.0)) + float(np.max(np.abs(qv * vals[plain]), initial=0.0))
    out.meta["residual"] = res
    if res > check_tol * scale:
        raise NumericError(f"residual {res:.3e} exceeds tolerance on ({lo:g}, {hi:g})")
    return out


def max_residual(spec: ProblemSpec, f: Field, q: Callable, s: Callable) -> float:
    """Max of ``|A f - q f + s|`` over interior nodes away from piece breaks."""
    N = len(f.grid)
    if N < 3:
        return 0.0
    interior = np.arange(1, N - 1)
    skip = np.zeros(N, dtype=bool)
    skip[list(f.breaks)] = True
    i = interior[~skip[interior]]
    if not len(i):
        return 0.0
    x = f.grid[i]
    hl = f.grid[i] - f.grid[i - 1]
    hr = f.grid[i + 1] - f.grid[i]
    fl, fc, fr = f.values[i - 1], f.values[i], f.values[i + 1]
    # difference form: exact zero for constant data
    dl, dr = (fc - fl) / hl, (fr - fc) / hr
    f1 = (hr * dl + hl * dr) / (hl + hr)
    f2 = 2.0 * (dr - dl) / (hl + hr)
    res = spec.drift(x) * f1 + 0.5 * spec.volatility(x) ** 2 * f2 - np.asarray(q(x)) * fc + np.asarray(s(x))
    return float(np.max(np.abs(res)))


def concat_fields(parts: Sequence[Field], tag: str = "") -> Field:
    """Join fields on adjacent or disjoint grids; shared endpoints are deduplicated.

    At a shared node the value of the later part wins only if the earlier one is
    absent; callers ensure shared nodes agree.
    """
    grids, vals, breaks = [], [], []
    offset = 0
    last = -math.inf
    for p in sorted(parts, key=lambda f: f.grid[0]):
        g, v = p.grid, p.values
        start = 0
        if len(g) and g[0] <= last:
            start = int(np.searchsorted(g, last, side="right"))
        g, v = g[start:], v[start:]
        if not len(g):
            continue
        if offset:
            breaks.append(offset - 1)
        breaks.extend(offset + b - start for b in p.breaks if b - start > 0)
        grids.append(g)
        vals.append(v)
        offset += len(g)
        last = g[-1]
    return Field(np.concatenate(grids), np.concatenate(vals), tag, breaks=tuple(sorted(set(breaks))))
