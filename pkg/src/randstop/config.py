"""
Run configuration
=================

Flat ``key = value`` text with sections, parsed strictly. ``#`` starts a
comment, also after a value when preceded by whitespace::

    [problem]
    name = bm-abs
    r = 0.01
    T = 10

    [run]
    mode = construct
    n_grid = 2048

    [strategy]
    intervals = (-1, 1); (2, 3)
    rate = -0.5:1.0; 0.5:0

    [output]
    dir = out
    format = json

Unknown sections or keys are errors. ``serialize(parse(text))`` is a fixed
point: serializing the parsed config and parsing it again gives the same
config.
"""
from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field, fields, replace

MODES = ("construct", "verify", "fields", "simulate", "occupation", "figure-data")
PROBLEMS = ("bm-abs", "bm-square", "two-well", "custom")
FORMATS = ("csv", "json")
OUTPUT_ENV = "RANDSTOP_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message names the section, key and line."""


@dataclass(frozen=True)
class ProblemConfig:
    name: str = "bm-abs"
    r: float = 0.0
    T: float = 1.0
    shift: float = 0.0
    drift: str = "0"
    volatility: str = "1"
    payoff: str = "abs(x)"
    kinks: tuple[float, ...] = ()
    alpha: float = -math.inf
    beta: float = math.inf
    truncation_radius: float | None = None


@dataclass(frozen=True)
class RunSection:
    mode: str = "construct"
    n_grid: int = 2048
    dt: float = 1e-3
    paths: int = 100_000
    seed: int = 0
    tol_value: float = 1e-6
    tol_derivative: float = 1e-4
    x0: tuple[float, ...] = (0.0,)
    h: float = 0.01
    workers: int = 1
    bridge: bool = True
    T_list: tuple[float, ...] = ()
    figure_points: int = 401
    figure_radius: float | None = None


@dataclass(frozen=True)
class StrategyConfig:
    intervals: tuple[tuple[float, float], ...] | None = None
    rate: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    format: str = "json"


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    run: RunSection = field(default_factory=RunSection)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def output_dir(self) -> str:
        return self.output.dir or os.environ.get(OUTPUT_ENV) or "randstop-out"


SECTIONS = {"problem": ProblemConfig, "run": RunSection, "strategy": StrategyConfig, "output": OutputConfig}

_POSITIVE = {("problem", "T"), ("problem", "truncation_radius"), ("run", "n_grid"), ("run", "dt"),
             ("run", "paths"), ("run", "tol_value"), ("run", "tol_derivative"), ("run", "h"),
             ("run", "workers"), ("run", "figure_points"), ("run", "figure_radius")}


# --- value codecs -------------------------------------------------------------

def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf"):
        return math.inf
    if t == "-inf":
        return -math.inf
    return float(t)


def _fmt_float(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    return tuple(_float(p) for p in parts)


def _intervals(text: str):
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        m = re.fullmatch(r"\(\s*([^,]+)\s*,\s*([^)]+)\s*\)", chunk)
        if not m:
            raise ValueError(f"interval {chunk!r} must look like (lo, hi)")
        out.append((_float(m.group(1)), _float(m.group(2))))
    return tuple(out)


def _pairs(text: str):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, sep, b = chunk.partition(":")
        if not sep:
            raise ValueError(f"rate piece {chunk!r} must look like start:value")
        out.append((_float(a), _float(b)))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else _float(text)


def _opt_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


_DECODE = {
    ("problem", "name"): str.strip, ("problem", "r"): _float, ("problem", "T"): _float,
    ("problem", "shift"): _float, ("problem", "drift"): str.strip, ("problem", "volatility"): str.strip,
    ("problem", "payoff"): str.strip, ("problem", "kinks"): _floats, ("problem", "alpha"): _float,
    ("problem", "beta"): _float, ("problem", "truncation_radius"): _opt_float,
    ("run", "mode"): str.strip, ("run", "n_grid"): int, ("run", "dt"): _float, ("run", "paths"): int,
    ("run", "seed"): int, ("run", "tol_value"): _float, ("run", "tol_derivative"): _float,
    ("run", "x0"): _floats, ("run", "h"): _float, ("run", "workers"): int, ("run", "bridge"): _bool,
    ("run", "T_list"): _floats, ("run", "figure_points"): int, ("run", "figure_radius"): _opt_float,
    ("strategy", "intervals"): _intervals, ("strategy", "rate"): _pairs,
    ("output", "dir"): _opt_str, ("output", "format"): str.strip,
}


def _encode(section: str, key: str, v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _fmt_float(v)
    if section == "strategy" and key == "intervals":
        return "; ".join(f"({_fmt_float(a)}, {_fmt_float(b)})" for a, b in v)
    if section == "strategy" and key == "rate":
        return "; ".join(f"{_fmt_float(a)}:{_fmt_float(b)}" for a, b in v)
    if isinstance(v, tuple):
        return ", ".join(_fmt_float(x) for x in v)
    return str(v)


# --- parsing ----------------------------------------------------------------------

def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _where(text, section, key=None) -> str:
    line = _line_of(text, section, key)
    loc = f"[{section}]" + (f" {key}" if key else "")
    return f"line {line}: {loc}" if line else loc


def set_value(cfg: RunConfig, section: str, key: str, raw: str, text: str = "") -> RunConfig:
    """Return ``cfg`` with one key replaced by the decoded ``raw`` string."""
    if section not in SECTIONS:
        raise ConfigError(f"{_where(text, section)}: unknown section {section!r}")
    if (section, key) not in _DECODE:
        raise ConfigError(f"{_where(text, section, key)}: unknown key {key!r}")
    try:
        val = _DECODE[(section, key)](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_where(text, section, key)}: {exc}") from None
    sub = replace(getattr(cfg, section), **{key: val})
    return replace(cfg, **{section: sub})


def validate(cfg: RunConfig, text: str = "") -> RunConfig:
    """Check enumerations and positivity of numeric knobs."""
    checks = [("problem", "name", PROBLEMS), ("run", "mode", MODES), ("output", "format", FORMATS)]
    for sec, key, allowed in checks:
        v = getattr(getattr(cfg, sec), key)
        if v not in allowed:
            raise ConfigError(f"{_where(text, sec, key)}: {v!r} not in {allowed}")
    for sec, key in _POSITIVE:
        v = getattr(getattr(cfg, sec), key)
        if v is not None and not v > 0:
            raise ConfigError(f"{_where(text, sec, key)}: must be positive, got {v!r}")
    if cfg.problem.r < 0:
        raise ConfigError(f"{_where(text, 'problem', 'r')}: must be nonnegative")
    if any(not t > 0 for t in cfg.run.T_list):
        raise ConfigError(f"{_where(text, 'run', 'T_list')}: horizons must be positive")
    return cfg


def parse(text: str) -> RunConfig:
    """Parse config text strictly."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=",),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case sensitive (T)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    cfg = RunConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{_where(text, section)}: unknown section {section!r}")
        for key, raw in cp.items(section):
            cfg = set_value(cfg, section, key, raw, text)
    return validate(cfg, text)


def load(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def serialize(cfg: RunConfig) -> str:
    """Canonical text of a config: every key, fixed order."""
    lines = []
    for section, cls in SECTIONS.items():
        lines.append(f"[{section}]")
        sub = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{f.name} = {_encode(section, f.name, getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)
