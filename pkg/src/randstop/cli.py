"""
Command-line front end
======================

``randstop MODE [--config FILE] [flags]``. Flags override keys of the config
file; ``--set section.key=value`` reaches any key. Exit status is 0 on success,
2 when verification fails and 1 on error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import MODES, ConfigError, RunConfig, parse, serialize, set_value, validate
from .construct import construct_equilibrium
from .diffusion import ProblemSpec
from .errors import BracketError, ConstructionError, DomainError, NumericError
from .expected_time import expected_time_field
from .mc import estimate_e_and_J, occupation_ratio
from .problems import BUILTINS, custom
from .reward import reward_field
from .strategy import OpenSetUnion, RateFunction, Strategy, validate as validate_strategy
from .verify import check_necessary, check_sufficient, check_regularity

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


# --- builders ------------------------------------------------------------------------

def build_problem(cfg: RunConfig, T: float | None = None) -> ProblemSpec:
    p = cfg.problem
    T = p.T if T is None else T
    kw = {}
    if p.truncation_radius is not None:
        c = p.shift if p.name == "two-well" else 0.0
        kw["truncation"] = (c - p.truncation_radius, c + p.truncation_radius)
    if p.name == "custom":
        return custom(p.drift, p.volatility, p.payoff, p.r, T, alpha=p.alpha, beta=p.beta, kinks=p.kinks, **kw)
    if p.name == "two-well":
        return BUILTINS[p.name](p.r, T, shift=p.shift, **kw)
    return BUILTINS[p.name](p.r, T, **kw)


def build_strategy(cfg: RunConfig, spec: ProblemSpec) -> Strategy | None:
    st = cfg.strategy
    if st.intervals is None:
        return None
    rate = RateFunction.from_pairs(st.rate)
    s = Strategy(OpenSetUnion(st.intervals), rate, spec.horizon)
    problems = validate_strategy(s, alpha=spec.alpha, beta=spec.beta)
    if problems:
        raise ConfigError("[strategy]: " + "; ".join(problems))
    return s


# --- writers ------------------------------------------------------------------------

def _num(v):
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return v


def write_json(path: str, payload: dict):
    doc = {"schemaVersion": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_num(doc), fh, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")


def write_csv(path: str, header: list[str], columns: list[np.ndarray]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([repr(float(v)) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _field_csvs(outdir, spec, e, J, prefix=""):
    write_csv(os.path.join(outdir, f"{prefix}e.csv"), ["x", "e"], [e.grid, e.values])
    write_csv(os.path.join(outdir, f"{prefix}J.csv"), ["x", "J", "g"], [J.grid, J.values, spec.payoff(J.grid)])


def _problem_dict(cfg: RunConfig) -> dict:
    p = cfg.problem
    d = {"name": p.name, "r": p.r, "T": p.T}
    if p.name == "two-well":
        d["shift"] = p.shift
    if p.name == "custom":
        d.update(drift=p.drift, volatility=p.volatility, payoff=p.payoff, kinks=list(p.kinks),
                 alpha=p.alpha, beta=p.beta)
    return d


def _tol(cfg: RunConfig, spec: ProblemSpec, J) -> dict:
    scale = max(1.0, float(np.max(np.abs(spec.payoff(J.grid)))))
    return {"value": cfg.run.tol_value * scale, "derivative": cfg.run.tol_derivative * scale,
            "time": cfg.run.tol_value * spec.horizon}


# --- modes ----------------------------------------------------------------------------

def _strategy_or_construct(cfg, spec):
    s = build_strategy(cfg, spec)
    if s is not None:
        return s, None
    res = construct_equilibrium(spec, n=cfg.run.n_grid)
    return res.strategy, res


def run_construct(cfg: RunConfig, outdir: str) -> int:
    spec = build_problem(cfg)
    res = construct_equilibrium(spec, n=cfg.run.n_grid)
    write_json(os.path.join(outdir, "construction.json"), {"mode": "construct", "problem": _problem_dict(cfg),
                                                            "result": res.to_dict()})
    _field_csvs(outdir, spec, res.e, res.J)
    print(f"case {res.case}; equilibrium {'verified' if res.equilibrium else 'NOT verified'}")
    print(res.report.table())
    return EXIT_OK if res.equilibrium else EXIT_VERIFY


def run_verify(cfg: RunConfig, outdir: str) -> int:
    spec = build_problem(cfg)
    s, _ = _strategy_or_construct(cfg, spec)
    n = cfg.run.n_grid
    e = expected_time_field(spec, s, n=n)
    J = reward_field(spec, s, n=n)
    tol = _tol(cfg, spec, J)
    suff = check_sufficient(spec, s, e, J, tol=tol, J_coarse=reward_field(spec, s, n=max(64, n // 2)))
    nec = check_necessary(spec, s, e, J, tol=tol)
    reg = check_regularity(s.D, spec)
    write_json(os.path.join(outdir, "verification.json"), {
        "mode": "verify", "problem": _problem_dict(cfg), "strategy": s.to_dict(),
        "sufficient": suff.to_dict(), "necessary": nec.to_dict(), "regularity": reg.to_dict()})
    print(suff.table())
    print(nec.table())
    return EXIT_OK if suff.overall else EXIT_VERIFY


def run_fields(cfg: RunConfig, outdir: str) -> int:
    spec = build_problem(cfg)
    s, _ = _strategy_or_construct(cfg, spec)
    e = expected_time_field(spec, s, n=cfg.run.n_grid)
    J = reward_field(spec, s, n=cfg.run.n_grid)
    _field_csvs(outdir, spec, e, J)
    if cfg.output.format == "json":
        write_json(os.path.join(outdir, "fields.json"), {
            "mode": "fields", "problem": _problem_dict(cfg), "strategy": s.to_dict(),
            "e": {"x": e.grid.tolist(), "value": e.values.tolist(), "meta": {
                k: v for k, v in e.meta.items() if k in ("method", "cross_check", "max_deviation_from_T")}},
            "J": {"x": J.grid.tolist(), "value": J.values.tolist()}})
    print(f"wrote e.csv and J.csv ({len(e.grid)} and {len(J.grid)} nodes)")
    return EXIT_OK


def run_simulate(cfg: RunConfig, outdir: str) -> int:
    spec = build_problem(cfg)
    s, _ = _strategy_or_construct(cfg, spec)
    rows = []
    for x0 in cfg.run.x0:
        e, J = estimate_e_and_J(spec, s, x0, n=cfg.run.paths, dt=cfg.run.dt, seed=cfg.run.seed,
                                bridge=cfg.run.bridge, workers=cfg.run.workers)
        rows.append({"x0": x0, "e": e.to_dict(), "J": J.to_dict()})
        print(f"x0={x0:g}: e = {e.mean:.6g} +- {e.stderr:.2g}, J = {J.mean:.6g} +- {J.stderr:.2g}")
    write_json(os.path.join(outdir, "simulation.json"), {"mode": "simulate", "problem": _problem_dict(cfg),
                                                          "strategy": s.to_dict(), "estimates": rows})
    if cfg.output.format == "csv":
        write_csv(os.path.join(outdir, "simulation.csv"),
                  ["x0", "e_mean", "e_stderr", "J_mean", "J_stderr", "n", "dt", "seed"],
                  [np.array([r["x0"] for r in rows]), np.array([r["e"]["mean"] for r in rows]),
                   np.array([r["e"]["stderr"] for r in rows]), np.array([r["J"]["mean"] for r in rows]),
                   np.array([r["J"]["stderr"] for r in rows]), np.array([r["e"]["n"] for r in rows]),
                   np.full(len(rows), cfg.run.dt), np.full(len(rows), cfg.run.seed)])
    return EXIT_OK


def run_occupation(cfg: RunConfig, outdir: str) -> int:
    spec = build_problem(cfg)
    rows = []
    for x in cfg.run.x0:
        est = occupation_ratio(spec, x, cfg.run.h, n=cfg.run.paths, seed=cfg.run.seed, bridge=cfg.run.bridge,
                               workers=cfg.run.workers)
        rows.append(est.to_dict())
        print(f"x={x:g}, h={cfg.run.h:g}: ratio = {est.mean:.6g} +- {est.stderr:.2g}")
    write_json(os.path.join(outdir, "occupation.json"), {"mode": "occupation", "problem": _problem_dict(cfg),
                                                          "estimates": rows})
    return EXIT_OK


def run_figure_data(cfg: RunConfig, outdir: str) -> int:
    """Per horizon, a CSV of ``(x, g, J)`` on one symmetric grid."""
    if cfg.problem.name != "bm-abs":
        raise ConfigError("[problem] name: figure-data needs the bm-abs builtin")
    Ts = cfg.run.T_list or (cfg.problem.T,)
    results = []
    for T in Ts:
        spec = build_problem(cfg, T)
        results.append((T, spec, construct_equilibrium(spec, n=cfg.run.n_grid)))
    radius = cfg.run.figure_radius
    if radius is None:
        edges = []
        for T, spec, res in results:
            finite = [abs(p) for iv in res.strategy.D for p in iv if math.isfinite(p)]
            edges.append(1.5 * max(finite) if finite else 5.0 * math.sqrt(T))
        radius = max(edges)
    m = cfg.run.figure_points | 1  # odd, so x = 0 is a node
    xs = np.linspace(-radius, radius, m)
    summary = []
    for T, spec, res in results:
        name = f"figure_T{T:g}.csv"
        write_csv(os.path.join(outdir, name), ["x", "g", "J"], [xs, spec.payoff(xs), res.J(xs)])
        summary.append({"T": T, "file": name, "case": res.case, "equilibrium": res.equilibrium})
        print(f"T={T:g}: {res.case} -> {name}")
    write_json(os.path.join(outdir, "figure_data.json"), {"mode": "figure-data", "problem": _problem_dict(cfg),
                                                           "radius": radius, "curves": summary})
    return EXIT_OK


RUNNERS = {"construct": run_construct, "verify": run_verify, "fields": run_fields, "simulate": run_simulate,
           "occupation": run_occupation, "figure-data": run_figure_data}


# --- argument handling ----------------------------------------------------------------

_FLAG_KEYS = [
    ("problem", "problem", "name"), ("r", "problem", "r"), ("T", "problem", "T"), ("shift", "problem", "shift"),
    ("drift", "problem", "drift"), ("volatility", "problem", "volatility"), ("payoff", "problem", "payoff"),
    ("kinks", "problem", "kinks"), ("truncation_radius", "problem", "truncation_radius"),
    ("n_grid", "run", "n_grid"), ("dt", "run", "dt"), ("paths", "run", "paths"), ("seed", "run", "seed"),
    ("x0", "run", "x0"), ("h", "run", "h"), ("workers", "run", "workers"), ("T_list", "run", "T_list"),
    ("tol_value", "run", "tol_value"), ("tol_derivative", "run", "tol_derivative"),
    ("intervals", "strategy", "intervals"), ("rate", "strategy", "rate"),
    ("out", "output", "dir"), ("format", "output", "format"),
]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randstop", description="Equilibrium randomized stopping under an "
                                 "expectation constraint: construct, verify, solve fields and simulate.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", help="config file (INI-style sections)")
    ap.add_argument("--version", action="version", version=f"randstop {__version__}")
    for flag, sec, key in _FLAG_KEYS:
        ap.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None, help=f"[{sec}] {key}")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override any config key")
    ap.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return ap


def resolve_config(args) -> RunConfig:
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        cfg = parse(text)
    else:
        cfg = RunConfig()
    cfg = set_value(cfg, "run", "mode", args.mode)
    for flag, sec, key in _FLAG_KEYS:
        v = getattr(args, flag)
        if v is not None:
            cfg = set_value(cfg, sec, key, v)
    for item in args.set:
        lhs, sep, rhs = item.partition("=")
        sec, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        cfg = set_value(cfg, sec, key, rhs)
    return validate(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(serialize(cfg))
            return EXIT_OK
        outdir = cfg.output_dir()
        os.makedirs(outdir, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return RUNNERS[cfg.run.mode](cfg, outdir)
    except (ConfigError, ConstructionError, DomainError, NumericError, BracketError, OSError) as exc:
        print(f"randstop: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
