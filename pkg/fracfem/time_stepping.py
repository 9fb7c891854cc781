"""L1 time stepping for M d^a u + A u = F.

With b_j = (j + 1)^(1-a) - j^(1-a) and kappa = 1 / (Gamma(2 - a) tau^a),
each step solves

    (kappa M + A) U^n = F^n + kappa M [sum_{j=1}^{n-1} (b_{j-1} - b_j) U^{n-j} + b_{n-1} U^0]

with one factorization reused for every step. The full history is kept, so
memory grows with n_steps * n_dofs and is capped by ``max_history_mb``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma

from .assembly import OperatorPair, assemble_mass, assemble_stiffness, operator_pair
from .config import settings
from .initial_data import InitialDatum, l2_project
from .mesh import Mesh, UnsupportedMeshError
from .spectral import lumped_propagate

logger = logging.getLogger(__name__)

# Relative slack when matching an output time to a grid point.
_GRID_RTOL = 1e-9

SourceFn = Callable[[float], np.ndarray]


class HistoryBudgetError(MemoryError):
    """The L1 history would exceed the configured memory cap."""


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (self.tau > 0.0) or not math.isfinite(self.tau):
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps!r}")

    @property
    def t_final(self) -> float:
        return self.n_steps * self.tau

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def step_of(self, t: float) -> int:
        """Index n with t_n == t; off-grid times are rejected."""

        n = round(t / self.tau)
        if n < 0 or n > self.n_steps or abs(n * self.tau - t) > _GRID_RTOL * max(abs(t), self.tau):
            raise ValueError(f"output time {t!r} is not on the grid t_n = n * {self.tau!r} (n <= {self.n_steps})")
        return int(n)

    @classmethod
    def covering(cls, tau: float, output_times: Iterable[float]) -> "TimeGrid":
        times = sorted(float(t) for t in output_times)
        if not times:
            raise ValueError("at least one output time is required")
        if times[0] <= 0.0:
            raise ValueError(f"output times must be positive, got {times[0]!r}")
        grid = cls(tau=float(tau), n_steps=max(1, round(times[-1] / tau)))
        for t in times:
            grid.step_of(t)
        return grid


def l1_weights(alpha: float, n: int) -> np.ndarray:
    """b_0..b_{n-1}; computed as j^(1-a) expm1((1-a) log1p(1/j)) to avoid cancellation."""

    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    b = np.empty(n)
    b[0] = 1.0
    if n > 1:
        j = np.arange(1, n, dtype=float)
        b[1:] = j ** (1.0 - alpha) * np.expm1((1.0 - alpha) * np.log1p(1.0 / j))
    return b


def l1_kappa(alpha: float, tau: float) -> float:
    return float(1.0 / (gamma(2.0 - alpha) * tau**alpha))


@dataclass(frozen=True)
class L1System:
    """Factorized kappa M + A for one (alpha, tau, mesh)."""

    alpha: float
    tau: float
    kappa: float
    mass: sp.csr_matrix
    solver: spla.SuperLU

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.solver.solve(rhs)


def l1_step_matrix(pair: OperatorPair, alpha: float, tau: float) -> L1System:
    if not (tau > 0.0):
        raise ValueError(f"tau must be positive, got {tau!r}")
    kappa = l1_kappa(alpha, tau)
    system = sp.csc_matrix(kappa * pair.mass + pair.stiffness)
    try:
        lu = spla.splu(system)
    except RuntimeError as e:
        raise RuntimeError(f"factorization of kappa*M + A failed (alpha={alpha}, tau={tau}): {e}") from e
    return L1System(alpha=float(alpha), tau=float(tau), kappa=kappa, mass=pair.mass, solver=lu)


@dataclass(frozen=True)
class L1Result:
    grid: TimeGrid
    solutions: Dict[float, np.ndarray]
    trajectory: Optional[pd.DataFrame] = None


def _check_history_budget(grid: TimeGrid, n_dofs: int) -> None:
    need = (grid.n_steps + 1) * n_dofs * 8
    cap = settings.max_history_mb * 1024 * 1024
    if need > cap:
        raise HistoryBudgetError(
            f"L1 history needs {need / 2**20:.0f} MiB for {grid.n_steps} steps x {n_dofs} DOFs "
            f"(cap FRACFEM_MAX_HISTORY_MB={settings.max_history_mb})"
        )


def l1_solve(
    pair: OperatorPair,
    v_h: np.ndarray,
    alpha: float,
    grid: TimeGrid,
    output_times: Sequence[float],
    source: Optional[SourceFn] = None,
    trajectory_path: Optional[Union[str, Path]] = None,
) -> L1Result:
    """Run the L1 scheme from U^0 = v_h and return U at the requested times.

    ``source`` maps t_n to the load vector F^n. With ``trajectory_path`` the
    pairs (t_n, ||U^n||_M) are written as CSV.
    """

    wanted = {float(t): grid.step_of(float(t)) for t in output_times}
    n_dofs = int(v_h.shape[0])
    if n_dofs != pair.n_dofs:
        raise ValueError(f"initial vector has {n_dofs} entries, operators have {pair.n_dofs}")
    _check_history_budget(grid, n_dofs)

    started = time.perf_counter()
    system = l1_step_matrix(pair, alpha, grid.tau)
    b = l1_weights(alpha, grid.n_steps)
    d = b[:-1] - b[1:]  # d[j-1] = b_{j-1} - b_j

    history = np.empty((grid.n_steps + 1, n_dofs))
    history[0] = v_h
    for n in range(1, grid.n_steps + 1):
        conv = b[n - 1] * history[0]
        if n > 1:
            conv = conv + d[: n - 1] @ history[n - 1 : 0 : -1]
        rhs = system.kappa * (system.mass @ conv)
        if source is not None:
            rhs = rhs + source(n * grid.tau)
        history[n] = system.solve(rhs)

    trajectory = None
    if trajectory_path is not None:
        norms = np.sqrt(np.einsum("ij,ij->i", history, (system.mass @ history.T).T))
        trajectory = pd.DataFrame({"t": grid.times(), "l2_norm": norms})
        target = Path(trajectory_path)
        target.parent.mkdir(parents=True, exist_ok=True)
        trajectory.to_csv(target, index=False)

    logger.info(
        "l1 solve done",
        extra={
            "alpha": alpha,
            "tau": grid.tau,
            "t": grid.t_final,
            "duration_s": round(time.perf_counter() - started, 3),
        },
    )
    return L1Result(grid=grid, solutions={t: history[n].copy() for t, n in wanted.items()}, trajectory=trajectory)


def scalar_l1(lam: float, alpha: float, tau: float, n_steps: int, y0: float = 1.0) -> np.ndarray:
    """The scheme for y' = -lam y (Caputo), y_0..y_n; the oracle for single-mode checks."""

    kappa = l1_kappa(alpha, tau)
    b = l1_weights(alpha, n_steps)
    d = b[:-1] - b[1:]
    y = np.empty(n_steps + 1)
    y[0] = y0
    for n in range(1, n_steps + 1):
        conv = b[n - 1] * y[0]
        if n > 1:
            conv += float(d[: n - 1] @ y[n - 1 : 0 : -1])
        y[n] = kappa * conv / (kappa + lam)
    return y


def temporal_refinement_study(
    v: InitialDatum,
    mesh: Mesh,
    alpha: float,
    t: float,
    taus: Sequence[float],
    scale: Optional[float] = None,
) -> pd.DataFrame:
    """||u_h(t) - U_h(t)|| in L2 and H1 for each tau, lumped scheme.

    u_h is the exact lumped semidiscrete solution, so the differences isolate
    the temporal error. ``scale`` divides both norms (||v|| for normalized runs).
    """

    s = 1.0 if scale is None else float(scale)
    if not (s > 0.0):
        raise ValueError(f"normalization scale must be positive, got {scale!r}")

    if not mesh.uniform:
        raise UnsupportedMeshError("the temporal study needs the exact lumped solution on a uniform mesh")
    pair = operator_pair(mesh, "lumped")
    v_h = l2_project(v, mesh).coefficients
    ubar = lumped_propagate(mesh, v_h, alpha, t)
    m = assemble_mass(mesh, lumped=False)
    a = assemble_stiffness(mesh)
    rows: List[Dict[str, float]] = []
    for tau in taus:
        grid = TimeGrid.covering(tau, [t])
        u = l1_solve(pair, v_h, alpha, grid, [t]).solutions[float(t)]
        e = ubar - u
        rows.append(
            {
                "h": mesh.h,
                "tau": float(tau),
                "n_steps": grid.n_steps,
                "l2": float(math.sqrt(max(e @ (m @ e), 0.0))) / s,
                "h1": float(math.sqrt(max(e @ (a @ e), 0.0))) / s,
            }
        )
    return pd.DataFrame(rows)
