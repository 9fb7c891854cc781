"""Fast property checks behind ``fracfem check``.

Each check returns a CheckResult instead of raising, so the command can
report every failure in one pass.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import erfcx

from .assembly import (
    OperatorPair,
    assemble_mass,
    assemble_stiffness,
    consistent_mass_local,
    element_geometry,
    lumped_mass_diagonal,
    operator_pair,
)
from .initial_data import l2_project, nonsmooth_c
from .mesh import build_mesh
from .mittag_leffler import mittag_leffler
from .spectral import discrete_eigen_basis, lumped_propagate
from .time_stepping import TimeGrid, l1_solve, l1_weights, scalar_l1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    duration_s: float = 0.0


def check_ml_identities() -> Tuple[bool, str]:
    worst_exp = max(
        abs(mittag_leffler(1.0, 1.0, -x) - math.exp(-x)) / math.exp(-x) for x in np.arange(0.0, 30.5, 0.5)
    )
    worst_erfc = max(
        abs(mittag_leffler(0.5, 1.0, -x) - erfcx(x)) / erfcx(x) for x in np.arange(0.0, 20.25, 0.25)
    )
    ok = worst_exp <= 1e-12 and worst_erfc <= 1e-10
    return ok, f"max rel err vs exp {worst_exp:.2e}, vs erfcx {worst_erfc:.2e}"


def check_lumped_row_sums() -> Tuple[bool, str]:
    """Lumped diagonal equals the full row sums of the consistent mass matrix."""

    worst = 0.0
    for dim, n in ((1, 7), (2, 8)):
        mesh = build_mesh(dim, n)
        blocks = consistent_mass_local(*element_geometry(mesh))
        per_vertex = np.bincount(mesh.cells.ravel(), weights=blocks.sum(axis=2).ravel(), minlength=mesh.n_vertices)
        diff = np.abs(per_vertex[mesh.interior_vertices] - lumped_mass_diagonal(mesh))
        worst = max(worst, float(diff.max()))
    return worst <= 1e-14, f"max deviation {worst:.2e}"


def check_discrete_eigenpairs() -> Tuple[bool, str]:
    mesh = build_mesh(2, 16)
    basis = discrete_eigen_basis(mesh)
    a = assemble_stiffness(mesh)
    m = assemble_mass(mesh, lumped=True)
    worst = 0.0
    for n, k in ((1, 1), (2, 5), (7, 3), (15, 15)):
        phi = basis.vector(n, k)
        r = a @ phi - basis.eigenvalue(n, k) * (m @ phi)
        worst = max(worst, float(np.linalg.norm(r) / np.linalg.norm(a @ phi)))
    return worst <= 1e-10, f"max relative residual {worst:.2e}"


def check_l1_telescoping() -> Tuple[bool, str]:
    worst = 0.0
    for alpha in (0.1, 0.5, 0.9):
        for n in (1, 10, 1000, 10**6):
            total = math.fsum(l1_weights(alpha, n))
            worst = max(worst, abs(total - n ** (1.0 - alpha)) / n ** (1.0 - alpha))
    return worst <= 1e-13, f"max relative deviation {worst:.2e}"


def scalar_l1_slope(alpha: float, steps: Tuple[int, ...] = (20, 40, 80, 160, 320)) -> float:
    """Least-squares slope of log|y_N - E(-1)| against log tau at t = 1, lambda = 1."""

    exact = mittag_leffler(alpha, 1.0, -1.0)
    taus = np.array([1.0 / s for s in steps])
    errs = np.array([abs(scalar_l1(1.0, alpha, 1.0 / s, s)[-1] - exact) for s in steps])
    return float(np.polyfit(np.log(taus), np.log(errs), 1)[0])


def check_scalar_l1_order() -> Tuple[bool, str]:
    slopes = {alpha: scalar_l1_slope(alpha) for alpha in (0.3, 0.5, 0.7)}
    ok = all(0.8 <= s <= 2.0 - a + 0.2 for a, s in slopes.items())
    return ok, ", ".join(f"alpha={a}: {s:.3f}" for a, s in slopes.items())


def check_near_heat_limit() -> Tuple[bool, str]:
    """alpha = 0.999 exact lumped solution vs a backward Euler heat solve, t = 0.1."""

    mesh = build_mesh(2, 16)
    v_h = l2_project(nonsmooth_c(), mesh).coefficients
    frac = lumped_propagate(mesh, v_h, 0.999, 0.1)
    pair = operator_pair(mesh, "lumped")
    heat = l1_solve(pair, v_h, 1.0, TimeGrid.covering(1e-4, [0.1]), [0.1]).solutions[0.1]
    m = assemble_mass(mesh, lumped=False)
    e = frac - heat
    rel = math.sqrt(e @ (m @ e)) / math.sqrt(heat @ (m @ heat))
    return rel <= 0.02, f"relative L2 difference {rel:.2e}"


def l1_norm_excess(
    stiffness: np.ndarray, mass_diag: np.ndarray, v: np.ndarray, alpha: float, tau: float, n_steps: int
) -> float:
    """Largest ||U^n||_M - max_{j<n} ||U^j||_M of an unforced L1 run; <= 0 up to rounding.

    Each step maps a convex combination of earlier iterates through
    (kappa M + A)^{-1} kappa M, an M-contraction for SPD A.
    """

    pair = OperatorPair(stiffness=sp.csr_matrix(stiffness), mass=sp.diags(mass_diag, format="csr"), lumped=True)
    grid = TimeGrid(tau=tau, n_steps=n_steps)
    res = l1_solve(pair, v, alpha, grid, list(grid.times()[1:]))
    norms = [math.sqrt(v @ (mass_diag * v))] + [math.sqrt(u @ (mass_diag * u)) for u in res.solutions.values()]
    return max(b - max(norms[: i + 1]) for i, b in enumerate(norms[1:]))


def check_l1_stability(seed: int = 0, n_systems: int = 50) -> Tuple[bool, str]:
    """||U^n||_M never exceeds the earlier iterates for random SPD pairs without source."""

    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_systems):
        k = int(rng.integers(2, 7))
        q = rng.standard_normal((k, k))
        a = q @ q.T + k * np.eye(k)
        a = 0.5 * (a + a.T)
        d = rng.uniform(0.5, 2.0, size=k)
        alpha = float(rng.uniform(0.1, 0.95))
        tau = float(rng.uniform(1e-3, 1e-1))
        worst = max(worst, l1_norm_excess(a, d, rng.standard_normal(k), alpha, tau, 30))
    return worst <= 1e-12, f"largest norm increase {worst:.2e}"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("ml_identities", check_ml_identities),
    ("lumped_row_sums", check_lumped_row_sums),
    ("discrete_eigenpairs", check_discrete_eigenpairs),
    ("l1_telescoping", check_l1_telescoping),
    ("scalar_l1_order", check_scalar_l1_order),
    ("near_heat_limit", check_near_heat_limit),
]


def run_checks(seed: int = 0) -> List[CheckResult]:
    suite = CHECKS + [("l1_stability", lambda: check_l1_stability(seed))]
    results: List[CheckResult] = []
    for name, fn in suite:
        started = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:
            logger.exception("check crashed: %s", name)
            ok, detail = False, f"exception: {e}"
        results.append(CheckResult(name, ok, detail, round(time.perf_counter() - started, 3)))
        if not ok:
            logger.warning("check failed: %s (%s)", name, detail)
    return results
