from __future__ import annotations

import json
import logging
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .assembly import operator_pair
from .config import resolve_output_dir, settings
from .error_analysis import (
    ConvergenceRecord,
    build_convergence_table,
    fe_error_norms,
    write_plot_data,
    write_table,
)
from .initial_data import InitialDatum, datum_from_token, l2_project, singular_cells
from .laplace import contour_solve
from .logging_setup import run_id_var
from .mesh import Mesh, mesh_for_level
from .naming import example_slug
from .plans import ExperimentPlan, plan_hash
from .spectral import SpectralSolution, exact_solution, galerkin_propagate_1d, lumped_propagate
from .time_stepping import TimeGrid, l1_solve, temporal_refinement_study

logger = logging.getLogger(__name__)

RefKey = Tuple[str, float, float]


@dataclass(frozen=True)
class Combination:
    scheme: str
    example: str
    alpha: float
    level: int

    def describe(self) -> Dict[str, Any]:
        return {"scheme": self.scheme, "example": self.example, "alpha": self.alpha, "level": self.level}


def solve_semidiscrete(
    v: InitialDatum,
    mesh: Mesh,
    scheme: str,
    alpha: float,
    times: Sequence[float],
    solver: str = "eigen",
    tau: Optional[float] = None,
) -> Dict[float, np.ndarray]:
    """u_h at each time, by the requested solution path.

    ``eigen`` is exact per mode: DST for the lumped scheme, dense eigh for the
    1D standard scheme. The 2D standard scheme has no closed-form eigenbasis
    and is routed to the contour solver.
    """

    v_h = l2_project(v, mesh).coefficients
    if solver == "eigen" and scheme == "standard" and mesh.dim == 2:
        logger.info("no discrete eigenbasis for 2D consistent mass; using contour inversion", extra={"scheme": scheme})
        solver = "laplace"

    if solver == "eigen":
        if scheme == "lumped":
            return {float(t): lumped_propagate(mesh, v_h, alpha, float(t)) for t in times}
        return {float(t): galerkin_propagate_1d(mesh, v_h, alpha, float(t)) for t in times}
    pair = operator_pair(mesh, scheme)
    if solver == "laplace":
        return contour_solve(pair, v_h, alpha, times)
    if solver == "l1":
        if tau is None:
            raise ValueError("solver 'l1' needs a time step")
        grid = TimeGrid.covering(tau, times)
        return l1_solve(pair, v_h, alpha, grid, list(times)).solutions
    raise ValueError(f"Unknown solver {solver!r}")


class _ReferenceCache:
    """Spectral references shared by every scheme and level of a run."""

    def __init__(self, tol: float, h1_tol: Optional[float]) -> None:
        self._tol = tol
        self._h1_tol = h1_tol
        self._lock = threading.Lock()
        self._locks: Dict[RefKey, threading.Lock] = {}
        self._values: Dict[RefKey, SpectralSolution] = {}

    def get(self, v: InitialDatum, alpha: float, t: float, scale: float) -> SpectralSolution:
        key = (v.token, alpha, t)
        with self._lock:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._values:
                h1 = None if self._h1_tol is None else self._h1_tol * scale
                self._values[key] = exact_solution(v, alpha, t, tol=self._tol * scale, h1_tol=h1)
            return self._values[key]


def _run_combination(
    plan: ExperimentPlan, combo: Combination, refs: _ReferenceCache
) -> List[ConvergenceRecord]:
    started = time.perf_counter()
    v = datum_from_token(combo.example, plan.dim)
    mesh = mesh_for_level(plan.dim, combo.level, plan.mesh_rule)
    normalized = plan.normalized_for(v.l2_norm is not None)
    scale = float(v.l2_norm) if normalized and v.l2_norm else 1.0

    tau = plan.taus[0] if plan.taus else None
    solutions = solve_semidiscrete(v, mesh, combo.scheme, combo.alpha, plan.times, plan.solver, tau)
    refine = singular_cells(v, mesh)
    records = []
    for t in plan.times:
        ref = refs.get(v, combo.alpha, float(t), scale)
        norms = fe_error_norms(solutions[float(t)], ref, mesh, method=settings.error_norms, refine=refine)
        records.append(
            ConvergenceRecord.from_norms(
                norms,
                scheme=combo.scheme,
                example=example_slug(combo.example),
                alpha=combo.alpha,
                t=float(t),
                mesh=mesh,
                scale=scale if normalized else None,
            )
        )
    logger.info(
        "combination done",
        extra={
            "scheme": combo.scheme,
            "example": combo.example,
            "alpha": combo.alpha,
            "h": mesh.h,
            "duration_s": round(time.perf_counter() - started, 3),
        },
    )
    return records


def _run_temporal(plan: ExperimentPlan, example: str, alpha: float, level: int) -> pd.DataFrame:
    v = datum_from_token(example, plan.dim)
    mesh = mesh_for_level(plan.dim, level, plan.mesh_rule)
    normalized = plan.normalized_for(v.l2_norm is not None)
    scale = float(v.l2_norm) if normalized and v.l2_norm else None
    frames = []
    for t in plan.times:
        df = temporal_refinement_study(v, mesh, alpha, float(t), plan.taus, scale=scale)
        df.insert(0, "t", float(t))
        df.insert(0, "alpha", alpha)
        df.insert(0, "example", example_slug(example))
        df.insert(0, "scheme", "lumped")
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


def _worker_count(plan: ExperimentPlan, jobs: Optional[int]) -> int:
    return max(1, int(jobs or plan.jobs or settings.jobs))


def run_plan(plan: ExperimentPlan, out_dir: Optional[str] = None, jobs: Optional[int] = None) -> Dict[str, Any]:
    """Job: run every combination of a plan, write tables, plot data and report.json.

    Failures are captured per combination and the run continues; ``ok`` is
    False if any combination failed.
    """

    digest = plan_hash(plan)
    token = run_id_var.set(digest[:12])
    started = time.perf_counter()
    root = resolve_output_dir(out_dir, plan.output_dir) / plan.name
    try:
        root.mkdir(parents=True, exist_ok=True)
        logger.info("plan started", extra={"plan": plan.name})

        failures: List[Dict[str, Any]] = []
        outcomes: List[Dict[str, Any]] = []
        outputs: List[Path] = []
        table = pd.DataFrame()

        if plan.is_empty:
            logger.info("plan has no combinations", extra={"plan": plan.name})
        elif plan.study == "temporal":
            table = _temporal_stage(plan, jobs, failures, outcomes)
            if not table.empty:
                outputs += _write_temporal(table, root, plan.name)
        else:
            records = _convergence_stage(plan, jobs, failures, outcomes)
            table = build_convergence_table(records)
            if not table.empty:
                outputs += write_table(table, root, plan.name, title=plan.description or plan.name)
                plot = plan.plot_data if plan.plot_data is not None else settings.write_plot_data
                if plot:
                    outputs += write_plot_data(table, root, plan.name)

        report = {
            "plan": plan.to_dict(),
            "plan_hash": digest,
            "ok": not failures,
            "combinations": outcomes,
            "failures": failures,
            # Run-relative paths and no timings; reruns write identical bytes.
            "outputs": [p.relative_to(root).as_posix() for p in outputs],
        }
        report_path = root / "report.json"
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        logger.info(
            "plan finished",
            extra={"plan": plan.name, "duration_s": round(time.perf_counter() - started, 3)},
        )
        return {"ok": not failures, "table": table, "report": report, "out_dir": str(root)}
    finally:
        run_id_var.reset(token)


def _convergence_stage(
    plan: ExperimentPlan, jobs: Optional[int], failures: List[Dict[str, Any]], outcomes: List[Dict[str, Any]]
) -> List[ConvergenceRecord]:
    combos = [
        Combination(scheme, example, float(alpha), int(level))
        for scheme in plan.schemes
        for example in plan.examples
        for alpha in plan.alphas
        for level in plan.levels
    ]
    refs = _ReferenceCache(plan.reference_tol, plan.reference_h1_tol)

    def task(combo: Combination) -> Dict[str, Any]:
        try:
            return {"ok": True, "records": _run_combination(plan, combo, refs)}
        except Exception as e:
            tb = traceback.format_exc()
            logger.exception("combination failed", extra={"scheme": combo.scheme, "example": combo.example})
            return {"ok": False, "error": "exception", "exception": str(e), "traceback": tb}

    records: List[ConvergenceRecord] = []
    with ThreadPoolExecutor(max_workers=_worker_count(plan, jobs)) as pool:
        # map() keeps plan order, so outputs do not depend on scheduling.
        for combo, res in zip(combos, pool.map(task, combos)):
            outcomes.append({**combo.describe(), "ok": res["ok"]})
            if res["ok"]:
                records.extend(res["records"])
            else:
                failures.append({**combo.describe(), **{k: v for k, v in res.items() if k != "ok"}})
    return records


def _temporal_stage(
    plan: ExperimentPlan, jobs: Optional[int], failures: List[Dict[str, Any]], outcomes: List[Dict[str, Any]]
) -> pd.DataFrame:
    combos = [(ex, float(a), int(lv)) for ex in plan.examples for a in plan.alphas for lv in plan.levels]

    def task(combo: Tuple[str, float, int]) -> Dict[str, Any]:
        try:
            return {"ok": True, "frame": _run_temporal(plan, *combo)}
        except Exception as e:
            tb = traceback.format_exc()
            logger.exception("temporal study failed", extra={"example": combo[0], "alpha": combo[1]})
            return {"ok": False, "error": "exception", "exception": str(e), "traceback": tb}

    frames = []
    with ThreadPoolExecutor(max_workers=_worker_count(plan, jobs)) as pool:
        for (ex, a, lv), res in zip(combos, pool.map(task, combos)):
            desc = {"scheme": "lumped", "example": ex, "alpha": a, "level": lv}
            outcomes.append({**desc, "ok": res["ok"]})
            if res["ok"]:
                frames.append(res["frame"])
            else:
                failures.append({**desc, **{k: v for k, v in res.items() if k != "ok"}})
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def _write_temporal(table: pd.DataFrame, root: Path, stem: str) -> List[Path]:
    csv_path = root / f"{stem}.csv"
    md_path = root / f"{stem}.md"
    table.to_csv(csv_path, index=False, float_format="%.6e")
    levels = sorted(table["h"].unique(), reverse=True)
    header = ["alpha", "t", "tau", "norm"] + [f"1/{round(1 / h)}" for h in levels]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    for (alpha, t, tau), grp in table.groupby(["alpha", "t", "tau"], sort=False):
        by_h = {float(r.h): r for r in grp.itertuples()}
        for norm, label in (("l2", "L2"), ("h1", "H1")):
            cells = [f"{getattr(by_h[h], norm):.2e}" if h in by_h else "-" for h in levels]
            lines.append("| " + " | ".join([f"{alpha:g}", f"{t:g}", f"{tau:g}", label] + cells) + " |")
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote temporal study %s", csv_path)
    return [csv_path, md_path]
