"""Builtin problems and the small expression grammar for custom coefficients."""
from __future__ import annotations

import ast
import math
import operator
from typing import Sequence

import numpy as np

from .diffusion import Payoff, ProblemSpec, constant

INF = math.inf


def brownian(discount: float, horizon: float, payoff: Payoff, name: str, family=None, **kw) -> ProblemSpec:
    """Standard Brownian motion on the real line."""
    return ProblemSpec(-INF, INF, constant(0.0), constant(1.0), discount, payoff, horizon,
                       name=name, family=family, **kw)


def bm_abs(discount: float, horizon: float, **kw) -> ProblemSpec:
    """Brownian motion with ``g(x) = |x|``."""
    g = Payoff.smooth(np.abs, kinks=[0.0], name="|x|")
    return brownian(discount, horizon, g, "bm-abs", family="bm-abs", **kw)


def bm_square(discount: float, horizon: float, **kw) -> ProblemSpec:
    """Brownian motion with ``g(x) = x^2``."""
    g = Payoff.smooth(np.square, name="x^2")
    return brownian(discount, horizon, g, "bm-square", family="bm-square", **kw)


def two_well_payoff(shift: float = 0.0) -> Payoff:
    """``|x - 2|`` on ``(1, 3)``, ``|x + 2|`` on ``(-3, -1)`` and ``1`` elsewhere."""
    def g(x):
        x = np.asarray(x, dtype=float) - shift
        return np.minimum(np.minimum(np.abs(x - 2.0), np.abs(x + 2.0)), 1.0)
    kinks = [k + shift for k in (-3.0, -2.0, -1.0, 1.0, 2.0, 3.0)]
    return Payoff.smooth(g, kinks=kinks, name="two-well")


def two_well(discount: float, horizon: float, shift: float = 0.0, **kw) -> ProblemSpec:
    """Brownian motion with the two-well payoff centred on ``shift``."""
    kw.setdefault("center", shift)
    spec = brownian(discount, horizon, two_well_payoff(shift), "two-well", family="two-well", **kw)
    spec.meta["shift"] = shift
    return spec


BUILTINS = {"bm-abs": bm_abs, "bm-square": bm_square, "two-well": two_well}


# --- expression grammar -----------------------------------------------------

_FUNCS = {
    "exp": np.exp, "cosh": np.cosh, "sinh": np.sinh, "sqrt": np.sqrt, "abs": np.abs,
    "min": np.minimum, "max": np.maximum,
}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ExpressionError(ValueError):
    pass


def _check(node):
    if isinstance(node, ast.Expression):
        return _check(node.body)
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        return
    if isinstance(node, ast.Name):
        if node.id != "x":
            raise ExpressionError(f"unknown name {node.id!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left)
        _check(node.right)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        _check(node.operand)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        nargs = 2 if node.func.id in ("min", "max") else 1
        if len(node.args) != nargs:
            raise ExpressionError(f"{node.func.id} takes {nargs} argument(s)")
        for a in node.args:
            _check(a)
        return
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _eval(node, x):
    if isinstance(node, ast.Expression):
        return _eval(node.body, x)
    if isinstance(node, ast.Constant):
        return np.full_like(x, float(node.value))
    if isinstance(node, ast.Name):
        return x
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, x), _eval(node.right, x))
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, x))
    return _FUNCS[node.func.id](*[_eval(a, x) for a in node.args])


def compile_expression(text: str):
    """Compile an arithmetic expression in ``x`` to a vectorised function.

    Allowed: numbers, ``x``, ``+ - * /``, unary minus and the functions
    ``exp cosh sinh sqrt abs min max``.

    >>> f = compile_expression("max(x, 0) + 1")
    >>> float(f(2.0))
    3.0
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    _check(tree)

    def fn(x):
        xa = np.asarray(x, dtype=float)
        return _eval(tree, xa) + 0.0 * xa

    fn.source = text
    return fn


def custom(drift: str, volatility: str, payoff: str, discount: float, horizon: float,
           alpha: float = -INF, beta: float = INF, kinks: Sequence[float] = (), **kw) -> ProblemSpec:
    """Problem with coefficients given as expressions."""
    g = Payoff.smooth(compile_expression(payoff), kinks=kinks, name=payoff)
    return ProblemSpec(alpha, beta, compile_expression(drift), compile_expression(volatility), discount, g,
                       horizon, name="custom", **kw)
