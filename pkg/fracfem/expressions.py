"""Closed-form initial data given as text, e.g. ``custom:sin(pi*x)*sin(pi*y)``.

The grammar is sympy's expression syntax restricted to the coordinates
``x`` (and ``y`` in 2D), numeric literals, ``pi``/``E`` and a small
function whitelist. Expressions are compiled to numpy callables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from tokenize import TokenError
from typing import Any, Callable, Dict, Tuple

import numpy as np
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

x_sym, y_sym = sympy.symbols("x y", real=True)

_FUNCTIONS: Dict[str, Any] = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "tan": sympy.tan,
    "exp": sympy.exp,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
    "sinh": sympy.sinh,
    "cosh": sympy.cosh,
    "abs": sympy.Abs,
    "Abs": sympy.Abs,
    "heaviside": sympy.Heaviside,
    "Heaviside": sympy.Heaviside,
    "min": sympy.Min,
    "max": sympy.Max,
    "pi": sympy.pi,
    "E": sympy.E,
}

# Identifiers are checked before sympy sees the text.
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_ALLOWED_CHARS_RE = re.compile(r"^[0-9A-Za-z_+\-*/().,\s^]*$")
_NONSMOOTH_FUNCS = (sympy.Abs, sympy.Heaviside, sympy.Min, sympy.Max)


@dataclass(frozen=True)
class CompiledExpression:
    source: str
    dim: int
    expr: sympy.Expr
    smoothness: str  # smooth | nonsmooth
    func: Callable[..., Any]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        args = [pts[:, k] for k in range(self.dim)]
        out = self.func(*args)
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()


def compile_expression(source: str, dim: int) -> CompiledExpression:
    """Parse and validate an expression over x (1D) or x, y (2D)."""

    text = (source or "").strip()
    if not text:
        raise ValueError("Expression is empty")
    if len(text) > 512:
        raise ValueError("Expression is too long (max 512 characters)")
    if not _ALLOWED_CHARS_RE.fullmatch(text):
        raise ValueError(f"Expression contains unsupported characters: {source!r}")

    coords: Tuple[str, ...] = ("x",) if dim == 1 else ("x", "y")
    for ident in _IDENT_RE.findall(text):
        if ident not in _FUNCTIONS and ident not in coords:
            raise ValueError(
                f"Unknown identifier {ident!r} in expression {source!r}. "
                f"Allowed: {sorted(set(_FUNCTIONS) | set(coords))}"
            )

    local: Dict[str, Any] = dict(_FUNCTIONS)
    local["x"] = x_sym
    local["y"] = y_sym
    try:
        expr = parse_expr(
            text.replace("^", "**"),
            local_dict=local,
            transformations=standard_transformations,
            evaluate=True,
        )
    except (SyntaxError, TokenError, TypeError, ValueError, sympy.SympifyError) as e:
        raise ValueError(f"Could not parse expression {source!r}: {e}") from e

    if not isinstance(expr, sympy.Expr):
        raise ValueError(f"Expression {source!r} does not evaluate to a scalar")
    symbols = (x_sym,) if dim == 1 else (x_sym, y_sym)
    extra = expr.free_symbols - set(symbols)
    if extra:
        raise ValueError(f"Expression {source!r} uses coordinates not available in {dim}D: {sorted(map(str, extra))}")

    smoothness = "nonsmooth" if expr.has(*_NONSMOOTH_FUNCS) else "smooth"
    # numpy printing of Min/Max does not broadcast scalars against arrays.
    numeric = expr.rewrite(sympy.Piecewise) if expr.has(sympy.Min, sympy.Max) else expr
    func = sympy.lambdify(symbols, numeric, modules="numpy")
    return CompiledExpression(source=text, dim=dim, expr=expr, smoothness=smoothness, func=func)
