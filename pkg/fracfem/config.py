from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

_REPO_ROOT = Path(__file__).resolve().parents[1]


def split_csv(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _truthy(value: str) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes", "y", "on")


@dataclass(frozen=True)
class Settings:
    # -----------------
    # Output
    # -----------------
    tables_dir: str = os.getenv("FRACFEM_TABLES_DIR", str(_REPO_ROOT / "data" / "tables"))
    write_plot_data: bool = _truthy(os.getenv("FRACFEM_PLOT_DATA", "true"))

    # -----------------
    # Execution
    # -----------------
    jobs: int = max(1, int(os.getenv("FRACFEM_JOBS", "1")))

    # -----------------
    # Numerics
    # -----------------
    # Mittag-Leffler relative accuracy contract (>= 1e-14).
    ml_rel_tol: float = float(os.getenv("FRACFEM_ML_REL_TOL", "1e-12"))

    # Spectral truncation budgets (modes per axis).
    max_modes_1d: int = int(os.getenv("FRACFEM_MAX_MODES_1D", "65536"))
    max_modes_2d: int = int(os.getenv("FRACFEM_MAX_MODES_2D", "2048"))

    # Dense generalized eigensolve cap for the 1D Galerkin path.
    dense_eig_max: int = int(os.getenv("FRACFEM_DENSE_EIG_MAX", "4096"))

    # L1 history storage cap. Full history is kept, so runs beyond this fail early.
    max_history_mb: int = int(os.getenv("FRACFEM_MAX_HISTORY_MB", "2048"))

    # Half-width of the hyperbolic contour rule used by the laplace solver.
    laplace_nodes: int = int(os.getenv("FRACFEM_LAPLACE_NODES", "24"))

    # Indicator data with supports off the mesh lines: refine quadrature (true) or warn only.
    split_indicator_quadrature: bool = _truthy(os.getenv("FRACFEM_SPLIT_INDICATORS", "true"))

    # Error norms: auto (sine basis on uniform meshes), spectral, or quadrature split on singular cells.
    error_norms: str = os.getenv("FRACFEM_ERROR_NORMS", "auto").strip().lower()

    # -----------------
    # Logging
    # -----------------
    log_level: str = os.getenv("LOG_LEVEL", "INFO").upper()
    log_format: str = os.getenv("LOG_FORMAT", "json").lower()  # json|console


settings = Settings()


def resolve_output_dir(flag: Optional[str] = None, plan_value: Optional[str] = None) -> Path:
    """Resolve the output root.

    Precedence: CLI flag > FRACFEM_OUT > plan ``output_dir`` > ``out``.
    The environment is read at call time so tests can monkeypatch it.
    """

    if flag:
        return Path(flag)
    env = os.getenv("FRACFEM_OUT", "").strip()
    if env:
        return Path(env)
    if plan_value:
        return Path(plan_value)
    return Path("out")


def normalize_log_format(fmt: str) -> str:
    """Normalize log format; anything that is not console-ish becomes json."""

    f = (fmt or "").strip().lower()
    if f in ("console", "text", "plain", "human"):
        return "console"
    return "json"
