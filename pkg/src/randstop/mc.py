"""
Monte Carlo estimation
======================

Independent estimates of the expected time and the reward of a randomized
stopping strategy, of the local-perturbation gap and of occupation ratios.

Paths are simulated with Euler-Maruyama, vectorised over blocks of
:data:`BLOCK` paths. Block ``k`` draws from a counter-based Philox stream keyed
by ``(master_seed, k)`` and blocks are reduced in index order, so results are
bit-identical for any number of workers.

Stopping rules
--------------
* clock: stop when ``int psi(X_s) ds`` (trapezoid per step) exceeds an
  ``Exp(1)`` draw; the time and state are interpolated linearly within the step.
* exit: stop at the first grid time the path leaves ``D``. With ``bridge=True``
  (default) a Brownian-bridge crossing test between grid points also detects
  excursions that return within a step. The stopped state is the boundary point
  crossed.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffusion import ProblemSpec
from .errors import DomainError
from .strategy import OpenSetUnion, RateFunction, Strategy

BLOCK = 4096
CENSOR_LIMIT = 1e-3


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with standard error and provenance."""

    mean: float
    stderr: float
    n: int
    master_seed: int
    dt: float
    censored_fraction: float = 0.0
    flagged: bool = False
    x0: float | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def within(self, target: float, k: float = 3.0, allowance: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr + allowance

    def to_dict(self) -> dict:
        return {"x0": self.x0, "mean": self.mean, "stderr": self.stderr, "n": self.n, "dt": self.dt,
                "seed": self.master_seed, "censoredFraction": self.censored_fraction,
                "flagged": self.flagged, **({"extra": self.extra} if self.extra else {})}


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    """Independent counter-based stream for one block of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(master_seed), spawn_key=(int(block),))))


def _blocks(n: int, size: int = BLOCK):
    return [(k, min(size, n - k * size)) for k in range((n + size - 1) // size)]


def _map_blocks(fn, n: int, workers: int):
    blocks = _blocks(n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda kb: fn(*kb), blocks))
    return [fn(k, m) for k, m in blocks]


def _mean_stderr(v: np.ndarray) -> tuple[float, float]:
    m = v.size
    if m == 0:
        return math.nan, math.nan
    mean = float(np.sum(v) / m)
    sd = float(np.std(v, ddof=1)) if m > 1 else 0.0
    return mean, sd / math.sqrt(m)


def _ratio(y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Ratio of means with delta-method standard error."""
    m = y.size
    xb = float(np.sum(x) / m)
    R = float(np.sum(y) / m) / xb
    resid = y - R * x
    se = float(np.std(resid, ddof=1)) / math.sqrt(m) / abs(xb) if m > 1 else 0.0
    return R, se


class _Rule:
    """Vectorised view of a stopping rule ``(D, psi)``."""

    def __init__(self, D: OpenSetUnion, psi: RateFunction):
        self.D = D
        self.psi = psi
        self.lo = np.array([iv[0] for iv in D] + [np.nan])
        self.hi = np.array([iv[1] for iv in D] + [np.nan])

    @classmethod
    def of(cls, s: Strategy) -> "_Rule":
        return cls(s.D, s.psi)

    def component(self, x):
        return self.D.component_index(x)


def _coefficients(spec: ProblemSpec):
    mu = getattr(spec.drift, "constant_value", None)
    sig = getattr(spec.volatility, "constant_value", None)
    return mu, sig


def _path_chunk(spec, x0, Z, dt):
    """Euler-Maruyama states ``(S+1, m)`` driven by normals ``Z`` of shape ``(S, m)``."""
    mu, sig = _coefficients(spec)
    sq = math.sqrt(dt)
    X = np.empty((Z.shape[0] + 1, Z.shape[1]))
    X[0] = x0
    if mu is not None and sig is not None:
        np.cumsum(mu * dt + sig * sq * Z, axis=0, out=X[1:])
        X[1:] += x0
    else:
        for j in range(Z.shape[0]):
            xj = X[j]
            X[j + 1] = xj + spec.drift(xj) * dt + spec.volatility(xj) * sq * Z[j]
    return X


def _first_true(mask):
    """Index of the first True along axis 0, ``len`` when none."""
    any_ = mask.any(axis=0)
    return np.where(any_, mask.argmax(axis=0), mask.shape[0])


_CHUNK = 256


def _simulate(spec: ProblemSpec, rules: list[_Rule], x, t, clock, U, alive, dt, rng, t_max, bridge,
              first_arm_ends=False):
    """Advance ``K`` stopping rules along shared paths.

    Arrays ``clock``, ``alive`` have shape ``(K, m)``; ``U`` has shape ``(m,)``
    and is shared by all arms. A path finishes when every arm has stopped, or
    when arm 0 stops if ``first_arm_ends``. Paths are generated in chunks of
    steps; each rule is then resolved on the whole chunk at once. Within a step
    a clock ring takes precedence over an exit.

    Returns per-arm stopping times, stopped states and final clocks together with
    the final state, final time, alive flags and censoring mask of every path.
    """
    K, m = alive.shape
    x = np.array(x, dtype=float)
    t = np.array(t, dtype=float)
    clock = np.array(clock, dtype=float)
    alive = np.array(alive, dtype=bool)
    tau = np.full((K, m), np.nan)
    xtau = np.full((K, m), np.nan)
    comp = np.empty((K, m), dtype=int)
    for k, rule in enumerate(rules):
        comp[k] = rule.component(x)
        now = alive[k] & ((comp[k] < 0) | (clock[k] >= U))
        tau[k, now] = t[now]
        xtau[k, now] = x[now]
        alive[k] &= ~now
    x_end = x.copy()
    t_end = t.copy()
    censored = np.zeros(m, dtype=bool)
    mu, sig_c = _coefficients(spec)

    def finished(al):
        return ~al[0] if first_arm_ends else ~al.any(axis=0)

    act = np.flatnonzero(~finished(alive))
    while act.size:
        na = act.size
        ta = t_end[act]
        S = int(min(_CHUNK, max(1, math.ceil((t_max - float(ta.min())) / dt))))
        Z = rng.standard_normal((S, na))
        V = rng.random((S, na)) if bridge else None
        X = _path_chunk(spec, x_end[act], Z, dt)
        X0, X1 = X[:-1], X[1:]
        if bridge:
            s2 = (sig_c * sig_c * dt) if sig_c is not None else spec.volatility(X0) ** 2 * dt
        ev = np.full((K, na), S, dtype=int)
        kind_ring = np.zeros((K, na), dtype=bool)
        Cs = [None] * K
        for k, rule in enumerate(rules):
            al = alive[k, act]
            if not al.any():
                continue
            kk = np.where(al, comp[k, act], len(rule.lo) - 1)
            lo, hi = rule.lo[kk], rule.hi[kk]
            up = X1 >= hi
            down = X1 <= lo
            event = up | down
            if bridge:
                with np.errstate(invalid="ignore", over="ignore"):
                    pu = np.exp(-2.0 * np.clip(hi - X0, 0, None) * np.clip(hi - X1, 0, None) / s2)
                    pl = np.exp(-2.0 * np.clip(X0 - lo, 0, None) * np.clip(X1 - lo, 0, None) / s2)
                pu = np.nan_to_num(pu, nan=0.0)
                pl = np.nan_to_num(pl, nan=0.0)
                bu = ~event & (V < pu)
                bd = ~event & ~bu & (V < pu + pl)
                up = up | bu
                down = down | bd
                event = up | down
            if rule.psi.values.size and np.any(rule.psi.values > 0):
                P = rule.psi(X)
                C = clock[k, act] + np.cumsum(0.5 * (P[:-1] + P[1:]) * dt, axis=0)
                ring = C >= U[act]
                event = event | ring
            else:
                C = None
                ring = None
            e_k = _first_true(event)
            e_k = np.where(al, e_k, -1)
            ev[k] = np.where(al, e_k, S)
            Cs[k] = (C, ring, up, lo, hi)
            if ring is not None:
                hit = al & (e_k < S)
                jj = np.clip(e_k, 0, S - 1)
                cols = np.arange(na)
                kind_ring[k] = hit & ring[jj, cols]
        ends = ev[0] if first_arm_ends else np.where(alive[:, act], ev, -1).max(axis=0)
        fin = ends < S
        cols = np.arange(na)
        for k in range(K):
            al = alive[k, act]
            if not al.any():
                continue
            C, ring, up, lo, hi = Cs[k]
            stop = al & (ev[k] < S) & (ev[k] <= np.where(fin, ends, S))
            j = np.clip(ev[k], 0, S - 1)
            if stop.any():
                idx = act[stop]
                js = j[stop]
                cs = cols[stop]
                rg = kind_ring[k, stop]
                tt = ta[stop] + js * dt
                th = np.zeros(js.size)
                xr = np.zeros(js.size)
                if rg.any():
                    jr, cr, ir = js[rg], cs[rg], idx[rg]
                    c_prev = np.where(jr > 0, C[np.maximum(jr - 1, 0), cr], clock[k, ir])
                    c_new = C[jr, cr]
                    th[rg] = np.clip((U[ir] - c_prev) / (c_new - c_prev), 0.0, 1.0)
                    xr[rg] = X0[jr, cr] + th[rg] * (X1[jr, cr] - X0[jr, cr])
                edge = np.where(up[js, cs], hi[stop], lo[stop])
                tau[k, idx] = np.where(rg, tt + th * dt, tt + dt)
                xtau[k, idx] = np.where(rg, xr, edge)
                alive[k, idx] = False
            # clock of arms still alive at the end of the path or chunk
            live = al & ~stop
            if C is not None and live.any():
                last = np.where(fin, ends, S - 1)
                clock[k, act[live]] = C[last[live], cols[live]]
        last = np.where(fin, ends, S - 1)
        x_end[act] = X1[last, cols]
        t_end[act] = ta + (last + 1) * dt
        over = ~fin & (t_end[act] >= t_max - 1e-12 * max(1.0, t_max))
        censored[act[over]] = True
        act = act[~fin & ~over]
    return tau, xtau, clock, x_end, t_end, alive, censored


def _check_x0(spec: ProblemSpec, x0: float):
    if not spec.alpha < x0 < spec.beta:
        raise DomainError(f"x0 = {x0} outside ({spec.alpha}, {spec.beta})")


def _t_max(spec: ProblemSpec, max_time):
    return 50.0 * spec.horizon if max_time is None else float(max_time)


def sample_stopping(spec: ProblemSpec, s: Strategy, x0: float, dt: float, rng: np.random.Generator,
                    bridge: bool = True, max_time: float | None = None):
    """One draw of ``(tau, X_tau, exp(-r tau) g(X_tau))``.

    Returns ``(tau, x_tau, payoff, censored)``; a censored draw has ``nan``
    entries.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    _check_x0(spec, x0)
    U = rng.standard_exponential(1)
    tau, xt, *_, cens = _simulate(spec, [_Rule.of(s)], [x0], [0.0], np.zeros((1, 1)), U,
                                  np.ones((1, 1), bool), dt, rng, _t_max(spec, max_time), bridge)
    if cens[0]:
        return math.nan, math.nan, math.nan, True
    t0, x1 = float(tau[0, 0]), float(xt[0, 0])
    return t0, x1, math.exp(-spec.discount * t0) * float(spec.payoff(x1)), False


def _stopping_block(spec, s, x0, dt, seed, bridge, t_max):
    def run(k, m):
        rng = block_rng(seed, k)
        U = rng.standard_exponential(m)
        tau, xt, *_, cens = _simulate(spec, [_Rule.of(s)], np.full(m, x0), np.zeros(m), np.zeros((1, m)), U,
                                      np.ones((1, m), bool), dt, rng, t_max, bridge)
        return tau[0], xt[0], cens
    return run


def estimate_e_and_J(spec: ProblemSpec, s: Strategy, x0: float, n: int = 100_000, dt: float = 1e-3,
                     seed: int = 0, bridge: bool = True, max_time: float | None = None,
                     workers: int = 1) -> tuple[McEstimate, McEstimate]:
    """Estimate ``E_x0[tau]`` and ``E_x0[exp(-r tau) g(X_tau)]``.

    Censored paths (still running at ``max_time``, default ``50 T``) are
    excluded from both means; their fraction is reported and flags the
    estimates above ``1e-3``.
    """
    if n < 100:
        raise DomainError("need at least 100 paths")
    _check_x0(spec, x0)
    parts = _map_blocks(_stopping_block(spec, s, x0, dt, seed, bridge, _t_max(spec, max_time)), n, workers)
    tau = np.concatenate([p[0] for p in parts])
    xt = np.concatenate([p[1] for p in parts])
    cens = np.concatenate([p[2] for p in parts])
    ok = ~cens
    frac = float(cens.mean())
    pay = np.exp(-spec.discount * tau[ok]) * spec.payoff(xt[ok])
    flagged = frac > CENSOR_LIMIT
    me, se = _mean_stderr(tau[ok])
    mj, sj = _mean_stderr(pay)
    common = dict(n=int(ok.sum()), master_seed=seed, dt=dt, censored_fraction=frac, flagged=flagged, x0=x0)
    return McEstimate(me, se, **common), McEstimate(mj, sj, **common)


# --- local perturbations --------------------------------------------------------------

def canned_deviations(eq: Strategy, widen: float = 0.5) -> dict[str, Strategy]:
    """The four standard deviation families.

    ``stop-now`` (empty ``D``), ``never-stop`` (``D = R``, ``psi = 0``),
    ``widen-D`` (every component widened by ``widen`` on both sides) and
    ``shrink-rate`` (``psi / 2``).
    """
    T = eq.horizon
    wide = []
    for lo, hi in eq.D:
        a, b = lo - widen, hi + widen
        if wide and a <= wide[-1][1]:
            wide[-1] = (wide[-1][0], b)
        else:
            wide.append((a, b))
    return {
        "stop-now": Strategy.empty(T),
        "never-stop": Strategy(OpenSetUnion([(-math.inf, math.inf)]), RateFunction.zero(), T),
        "widen-D": Strategy(OpenSetUnion(wide), eq.psi, T),
        "shrink-rate": Strategy(eq.D, eq.psi.scaled(0.5), T),
    }


def estimate_perturbation_gap(spec: ProblemSpec, equilibrium: Strategy, deviation: Strategy, x0: float,
                              h: float, n: int = 100_000, dt: float = 1e-3, seed: int = 0,
                              dt_window: float | None = None, bridge: bool = True, e_field=None,
                              max_time: float | None = None, workers: int = 1) -> McEstimate:
    """Estimate ``(J_eq(x0) - J_pert(x0)) / E[tau_h]`` on common paths.

    The perturbed time follows ``deviation`` until the window ``[x0-h, x0+h]``
    is left at ``tau_h`` and ``equilibrium`` afterwards. Both arms see the same
    Brownian increments and the same ``Exp(1)`` clock threshold; after ``tau_h``
    the perturbed arm keeps the residual of its threshold, which by
    memorylessness is a fresh ``Exp(1)`` independent of the past. The window
    phase uses the finer step ``dt_window`` (default ``min(dt, h^2/200)``).

    Admissibility of the perturbed time at ``x0`` is estimated with
    ``E[min(tau_dev, tau_h) + 1{alive at tau_h} e_eq(X_tau_h)]``, using the
    expected-time field of the equilibrium (solved if not supplied). The
    result is flagged ``inadmissible`` when this exceeds ``T`` by more than
    three standard errors plus ``1e-6 T``.
    """
    if h <= 0 or not (spec.alpha < x0 - h and x0 + h < spec.beta):
        raise DomainError("window must lie inside the state space")
    if e_field is None:
        from .expected_time import expected_time_field
        e_field = expected_time_field(spec, equilibrium)
    dtw = min(dt, h * h / 200.0) if dt_window is None else dt_window
    t_max = _t_max(spec, max_time)
    window = _Rule(OpenSetUnion([(x0 - h, x0 + h)]), RateFunction.zero())
    eq_rule, dev_rule = _Rule.of(equilibrium), _Rule.of(deviation)
    r = spec.discount
    g = spec.payoff

    def run(k, m):
        rng = block_rng(seed, k)
        U = rng.standard_exponential(m)
        x = np.full(m, float(x0))
        tau, xt, clock, xe, te, alive, cens = _simulate(
            spec, [window, eq_rule, dev_rule], x, np.zeros(m), np.zeros((3, m)), U,
            np.ones((3, m), bool), dtw, rng, t_max, bridge, first_arm_ends=True)
        tau_h = te.copy()
        dev_alive = alive[2].copy()
        # expected-time proxy for admissibility
        etime = np.where(dev_alive, tau_h + e_field(xe), tau[2])
        # after the window both arms follow the equilibrium; identical clocks give identical futures
        differ = (alive[1] != alive[2]) | (alive[1] & alive[2] & (clock[1] != clock[2]))
        run2 = differ & (alive[1] | alive[2]) & ~cens
        if run2.any():
            i = np.flatnonzero(run2)
            t2, x2, _, _, _, _, c2 = _simulate(
                spec, [eq_rule, eq_rule], xe[i], te[i], clock[1:, i], U[i], alive[1:, i], dt, rng, t_max, bridge)
            for a in (0, 1):
                live = alive[1 + a, i]
                tau[1 + a, i[live]] = t2[a, live]
                xt[1 + a, i[live]] = x2[a, live]
            cens[i] |= c2
        same = ~differ & alive[1] & alive[2]
        # identical continuations contribute zero difference
        tau[1, same] = tau[2, same] = 0.0
        xt[1, same] = xt[2, same] = x0
        return tau, xt, tau_h, etime, cens

    parts = _map_blocks(run, n, workers)
    tau = np.concatenate([p[0] for p in parts], axis=1)
    xt = np.concatenate([p[1] for p in parts], axis=1)
    tau_h = np.concatenate([p[2] for p in parts])
    etime = np.concatenate([p[3] for p in parts])
    cens = np.concatenate([p[4] for p in parts])
    ok = ~cens
    pay = np.exp(-r * tau[1:, ok]) * g(xt[1:, ok].ravel()).reshape(2, -1)
    diff = pay[0] - pay[1]
    gap, se = _ratio(diff, tau_h[ok])
    emean, ese = _mean_stderr(etime[ok])
    T = spec.horizon
    admissible = emean <= T + 3.0 * ese + 1e-6 * T
    frac = float(cens.mean())
    extra = {"h": h, "dtWindow": dtw, "meanTauH": float(tau_h[ok].mean()),
             "rewardDifference": float(diff.mean()), "expectedTime": emean, "expectedTimeStderr": ese,
             "admissible": bool(admissible), "flags": ([] if admissible else ["inadmissible deviation"])
             + (["censored"] if frac > CENSOR_LIMIT else [])}
    return McEstimate(gap, se, int(ok.sum()), seed, dt, frac, (not admissible) or frac > CENSOR_LIMIT, x0, extra)


# --- occupation ratio -----------------------------------------------------------------

def occupation_ratio(spec: ProblemSpec, x: float, h: float, n: int = 100_000, dt: float | None = None,
                     seed: int = 0, side: str = "above", bridge: bool = True, workers: int = 1) -> McEstimate:
    """Estimate ``E_x[int_0^tau_h 1{X_s > x} ds] / E_x[tau_h]`` (``side='above'``).

    ``side='below'`` uses ``1{X_s < x}``. The indicator is evaluated at the
    step midpoint; ``dt`` defaults to ``h^2/400``.
    """
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    if h <= 0 or not (spec.alpha < x - h and x + h < spec.beta):
        raise DomainError("window must lie inside the state space")
    dt = h * h / 400.0 if dt is None else dt
    sq = math.sqrt(dt)
    lo, hi = x - h, x + h

    def run(k, m):
        rng = block_rng(seed, k)
        xa = np.full(m, float(x))
        occ = np.zeros(m)
        tt = np.zeros(m)
        act = np.arange(m)
        while act.size:
            z = rng.standard_normal(act.size)
            v = rng.random(act.size)
            sig = spec.volatility(xa)
            xn = xa + spec.drift(xa) * dt + sig * sq * z
            mid = 0.5 * (xa + xn)
            ind = (mid > x) if side == "above" else (mid < x)
            occ[act] += ind * dt
            tt[act] += dt
            out = (xn >= hi) | (xn <= lo)
            if bridge:
                s2 = sig * sig * dt
                p = (np.exp(-2.0 * np.clip(hi - xa, 0, None) * np.clip(hi - xn, 0, None) / s2)
                     + np.exp(-2.0 * np.clip(xa - lo, 0, None) * np.clip(xn - lo, 0, None) / s2))
                out |= v < p
            keep = ~out
            act, xa = act[keep], xn[keep]
        return occ, tt

    parts = _map_blocks(run, n, workers)
    occ = np.concatenate([p[0] for p in parts])
    tt = np.concatenate([p[1] for p in parts])
    R, se = _ratio(occ, tt)
    return McEstimate(R, se, n, seed, dt, 0.0, False, x, {"h": h, "side": side, "meanTauH": float(tt.mean())})
