"""Naming and validation helpers.

This module centralizes rules for user-controlled tokens that become:
- output directory names (one per plan)
- CSV ``scheme`` / ``example`` columns
- file names of per-curve plot data

Keeping these rules strict keeps output paths predictable and prevents
path traversal through plan names.

Plan naming convention:
- lowercase letters, numbers, underscore, dash
- must start with a letter

Examples: table7, smooth_alpha_sweep, delta-1d
"""

from __future__ import annotations

import re

_PLAN_RE = re.compile(r"^[a-z][a-z0-9_\-]{0,62}$")

SCHEMES = ("standard", "lumped")
SOLVERS = ("eigen", "laplace", "l1")
EXAMPLES = ("a", "b", "c", "d", "delta")
CUSTOM_PREFIX = "custom:"


def normalize_plan_name(name: str) -> str:
    """Normalize and validate a plan name.

    Mixed case is accepted and lowercased. If the normalized value doesn't
    match the strict pattern, raise ValueError.
    """

    n = (name or "").strip().lower()
    if not n:
        raise ValueError("Plan name is required")
    if not _PLAN_RE.fullmatch(n):
        raise ValueError(
            "Invalid plan name. Use lowercase letters/numbers/underscore/dash, start with a letter, max 63 chars. "
            f"Got: {name!r}"
        )
    return n


def normalize_scheme(scheme: str) -> str:
    s = (scheme or "").strip().lower()
    if s in ("standard", "galerkin", "consistent"):
        return "standard"
    if s in ("lumped", "lumped_mass", "lumped-mass"):
        return "lumped"
    raise ValueError(f"Unknown scheme {scheme!r}. Allowed: {list(SCHEMES)}")


def normalize_solver(solver: str) -> str:
    s = (solver or "").strip().lower()
    if s in ("eigen", "semidiscrete", "semidiscrete-eigen", "spectral"):
        return "eigen"
    if s in ("laplace", "contour"):
        return "laplace"
    if s in ("l1", "fully-discrete", "fully_discrete"):
        return "l1"
    raise ValueError(f"Unknown solver path {solver!r}. Allowed: {list(SOLVERS)}")


def normalize_example_token(token: str) -> str:
    """Normalize an initial-data token: a|b|c|d|delta or ``custom:<expr>``.

    The expression part of a custom token is kept verbatim (it is parsed later).
    """

    raw = (token or "").strip()
    if raw.lower().startswith(CUSTOM_PREFIX):
        expr = raw[len(CUSTOM_PREFIX) :].strip()
        if not expr:
            raise ValueError("custom: token requires an expression, e.g. custom:sin(pi*x)")
        return CUSTOM_PREFIX + expr
    t = raw.lower()
    if t in ("d-point", "delta_point", "dirac"):
        t = "delta"
    if t not in EXAMPLES:
        raise ValueError(f"Unknown example {token!r}. Allowed: {list(EXAMPLES)} or 'custom:<expr>'")
    return t


def example_slug(token: str) -> str:
    """File-name safe short form of an example token."""

    if token.startswith(CUSTOM_PREFIX):
        return "custom"
    return token
