"""Reproduction of the published convergence tables.

Each table has a golden file ``data/tables/table<k>.yaml`` holding the plan
that regenerates it, the published cell values, tolerances and excluded
cells. ``reproduce_table`` runs the plan and compares.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
import yaml

from .config import settings
from .error_analysis import summarize_rates
from .jobs import run_plan
from .plans import ExperimentPlan

logger = logging.getLogger(__name__)

TABLE_IDS = tuple(range(1, 10))
_NORMS = ("l2", "h1")
_KEY_FIELDS = ("scheme", "example", "alpha", "t", "tau")
# strict: a cell outside cell_rel fails the table. report: it is listed as a warning only.
CELL_CHECKS = ("strict", "report")


@dataclass
class TableCheck:
    table: int
    passed: bool
    errors: List[str]
    warnings: List[str]
    metrics: Dict[str, Any]
    outputs: List[str] = field(default_factory=list)


def _band(band: Any, where: str) -> Tuple[float, float]:
    """{min, max} or {value, abs_tol} -> (lo, hi)."""

    if not isinstance(band, dict):
        raise ValueError(f"{where} must be a mapping with min/max or value/abs_tol")
    if "min" in band or "max" in band:
        return float(band.get("min", -math.inf)), float(band.get("max", math.inf))
    if "value" in band:
        v, tol = float(band["value"]), float(band.get("abs_tol", 0.1))
        return v - tol, v + tol
    raise ValueError(f"{where} must define min/max or value/abs_tol")


def validate_golden_dict(d: Any) -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ValueError("Golden table YAML must parse to an object/dict.")
    try:
        table = int(d["table"])
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError("Golden table must include an integer 'table' field.") from e
    if table not in TABLE_IDS:
        raise ValueError(f"table must be one of {list(TABLE_IDS)}, got {table!r}")

    plan = ExperimentPlan.from_dict(d.get("plan") or {})
    n_levels = len(plan.levels)

    tolerances = dict(d.get("tolerances") or {})
    cell_rel = float(tolerances.get("cell_rel", 0.05))
    if not (0.0 < cell_rel < 1.0):
        raise ValueError(f"tolerances.cell_rel must be in (0, 1), got {cell_rel!r}")
    cell_check = str(tolerances.get("cell_check", "strict")).strip().lower()
    if cell_check not in CELL_CHECKS:
        raise ValueError(f"tolerances.cell_check must be one of {list(CELL_CHECKS)}, got {cell_check!r}")

    series_raw = d.get("series") or []
    if not isinstance(series_raw, list) or not series_raw:
        raise ValueError("Golden table must include a non-empty 'series' list.")
    series: List[Dict[str, Any]] = []
    for i, s in enumerate(series_raw):
        if not isinstance(s, dict):
            raise ValueError(f"series[{i}] must be an object/dict.")
        key = dict(s.get("key") or {})
        bad = sorted(set(key) - set(_KEY_FIELDS))
        if bad:
            raise ValueError(f"series[{i}].key has unknown fields {bad}. Allowed: {list(_KEY_FIELDS)}")
        entry: Dict[str, Any] = {"key": key}
        for norm in _NORMS:
            cells = s.get(norm)
            if cells is None:
                continue
            if not isinstance(cells, list) or len(cells) != n_levels:
                raise ValueError(f"series[{i}].{norm} must list one value per plan level ({n_levels}).")
            entry[norm] = [float(c) for c in cells]
            if f"ratio_{norm}" in s:
                entry[f"ratio_{norm}"] = _band(s[f"ratio_{norm}"], f"series[{i}].ratio_{norm}")
        series.append(entry)

    exclude: List[Dict[str, Any]] = []
    for i, e in enumerate(d.get("exclude") or []):
        if not isinstance(e, dict) or e.get("norm") not in _NORMS:
            raise ValueError(f"exclude[{i}] needs 'norm' (l2|h1) and optionally 'n' (cells per axis).")
        # Without 'n' the entry covers every level and the norm's ratio band.
        exclude.append({**e, "n": None if e.get("n") is None else int(e["n"])})

    tau_slope = d.get("tau_slope")
    return {
        "table": table,
        "title": str(d.get("title") or f"Table {table}"),
        "plan": plan,
        "cell_rel": cell_rel,
        "cell_check": cell_check,
        "series": series,
        "exclude": exclude,
        "tau_slope": None if tau_slope is None else _band(tau_slope, "tau_slope"),
    }


@dataclass(frozen=True)
class GoldenTable:
    table: int
    title: str
    plan: ExperimentPlan
    cell_rel: float
    series: List[Dict[str, Any]]
    exclude: List[Dict[str, Any]]
    tau_slope: Optional[Tuple[float, float]] = None
    cell_check: str = "strict"

    @staticmethod
    def from_dict(d: Dict[str, Any]) -> "GoldenTable":
        return GoldenTable(**validate_golden_dict(d))

    def is_excluded(self, key: Dict[str, Any], norm: str, n: Optional[int]) -> bool:
        """True when an entry covers the cell; ``n=None`` asks for a whole-norm entry."""

        for e in self.exclude:
            if e["norm"] != norm or (e["n"] is not None and e["n"] != n):
                continue
            if all(_same(key.get(k), e[k]) for k in _KEY_FIELDS if k in e):
                return True
        return False


@dataclass(frozen=True)
class GoldenLoadResult:
    golden: GoldenTable
    path: str
    sha256: str


def load_golden_with_meta(table: int) -> GoldenLoadResult:
    if table not in TABLE_IDS:
        raise ValueError(f"table id must be one of {list(TABLE_IDS)}, got {table!r}")
    path = os.path.join(settings.tables_dir, f"table{table}.yaml")
    if not os.path.exists(path):
        raise FileNotFoundError(f"Golden file for table {table} not found at {path}")
    with open(path, "rb") as f:
        raw = f.read()
    sha = hashlib.sha256(raw).hexdigest()
    d = yaml.safe_load(raw.decode("utf-8"))
    return GoldenLoadResult(golden=GoldenTable.from_dict(d), path=path, sha256=sha)


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(float(a), float(b), rel_tol=1e-9)
    return str(a) == str(b)


def _select(table: pd.DataFrame, key: Dict[str, Any]) -> pd.DataFrame:
    mask = pd.Series(True, index=table.index)
    for k, v in key.items():
        if k not in table.columns:
            raise ValueError(f"golden key field {k!r} is not a table column")
        mask &= table[k].map(lambda x, v=v: _same(x, v))
    return table[mask]


def _cells_per_axis(plan: ExperimentPlan) -> List[int]:
    extra = 1 if plan.mesh_rule == "offset" else 0
    return [2**lv + extra for lv in plan.levels]


def compare_table(golden: GoldenTable, table: pd.DataFrame) -> TableCheck:
    """Cell-by-cell and ratio comparison of a produced table against the golden values."""

    errors: List[str] = []
    warnings: List[str] = []
    cells: List[Dict[str, Any]] = []
    n_list = _cells_per_axis(golden.plan)
    temporal = golden.plan.study == "temporal"
    summary = None if temporal or table.empty else summarize_rates(table)

    for s in golden.series:
        key = s["key"]
        rows = _select(table, key) if not table.empty else table
        label = ", ".join(f"{k}={v}" for k, v in key.items())
        for norm in _NORMS:
            if norm not in s:
                continue
            for n, published in zip(n_list, s[norm]):
                if temporal:
                    hit = rows[rows["h"].map(lambda h, n=n: math.isclose(h, 1.0 / n))]
                else:
                    hit = rows[rows["n_cells"] == n]
                cell: Dict[str, Any] = {**key, "norm": norm, "n": n, "published": published}
                if hit.empty:
                    errors.append(f"[{label}] {norm} at h=1/{n}: missing from the produced table")
                    cells.append({**cell, "ours": None, "status": "missing"})
                    continue
                ours = float(hit.iloc[0][norm])
                dev = abs(ours - published) / abs(published)
                message = (
                    f"[{label}] {norm} at h=1/{n}: {ours:.3e} vs {published:.3e} "
                    f"({100 * dev:.1f}% > {100 * golden.cell_rel:.0f}%)"
                )
                if golden.is_excluded(key, norm, n):
                    status = "excluded"
                elif dev <= golden.cell_rel:
                    status = "ok"
                elif golden.cell_check == "report":
                    status = "reported"
                    warnings.append(message)
                else:
                    status = "fail"
                    errors.append(message)
                cells.append({**cell, "ours": ours, "rel_dev": dev, "status": status})

            band = s.get(f"ratio_{norm}")
            if band is not None and summary is not None and not golden.is_excluded(key, norm, None):
                srow = _select(summary, {k: v for k, v in key.items() if k in summary.columns})
                ratio = float(srow.iloc[0][f"ratio_{norm}"]) if not srow.empty else math.nan
                if not (band[0] <= ratio <= band[1]):
                    errors.append(f"[{label}] {norm} ratio {ratio:.3f} outside [{band[0]:.2f}, {band[1]:.2f}]")

    if temporal and golden.tau_slope is not None and not table.empty:
        errors.extend(_tau_slope_errors(table, golden.tau_slope))

    excluded = sum(1 for c in cells if c["status"] == "excluded")
    if excluded:
        warnings.append(f"{excluded} cell(s) excluded from comparison")
    metrics = {
        "cells": cells,
        "n_checked": sum(1 for c in cells if c["status"] in ("ok", "fail", "reported")),
        "n_failed": sum(1 for c in cells if c["status"] == "fail"),
        "n_reported": sum(1 for c in cells if c["status"] == "reported"),
        "n_excluded": excluded,
    }
    return TableCheck(table=golden.table, passed=not errors, errors=errors, warnings=warnings, metrics=metrics)


def _tau_slope_errors(table: pd.DataFrame, band: Tuple[float, float]) -> List[str]:
    """log-log slope of the L2 difference between consecutive step sizes, per (alpha, t, h)."""

    out: List[str] = []
    for (alpha, t, h), grp in table.groupby(["alpha", "t", "h"], sort=False):
        g = grp.sort_values("tau", ascending=False)
        taus = g["tau"].to_list()
        errs = g["l2"].to_list()
        for (t1, e1), (t2, e2) in zip(zip(taus, errs), zip(taus[1:], errs[1:])):
            if e1 <= 0.0 or e2 <= 0.0:
                out.append(f"alpha={alpha} t={t} h={h:g}: zero difference, slope undefined")
                continue
            slope = math.log10(e1 / e2) / math.log10(t1 / t2)
            if not (band[0] <= slope <= band[1]):
                out.append(
                    f"alpha={alpha} t={t} h={h:g}: tau slope {slope:.3f} outside [{band[0]:.2f}, {band[1]:.2f}]"
                )
    return out


def _write_comparison(check: TableCheck, golden: GoldenTable, root: Path) -> List[Path]:
    json_path = root / "comparison.json"
    md_path = root / "comparison.md"
    payload = {
        "table": check.table,
        "passed": check.passed,
        "errors": check.errors,
        "warnings": check.warnings,
        "metrics": check.metrics,
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")

    lines = [f"## {golden.title}", "", f"Result: {'PASS' if check.passed else 'FAIL'}", ""]
    lines.append("| series | norm | h | published | ours | dev | status |")
    lines.append("|---|---|---|---|---|---|---|")
    for c in check.metrics["cells"]:
        series = ", ".join(f"{k}={c[k]}" for k in _KEY_FIELDS if k in c)
        ours = "-" if c.get("ours") is None else f"{c['ours']:.3e}"
        dev = "-" if c.get("rel_dev") is None else f"{100 * c['rel_dev']:.1f}%"
        lines.append(f"| {series} | {c['norm']} | 1/{c['n']} | {c['published']:.3e} | {ours} | {dev} | {c['status']} |")
    if check.errors:
        lines += ["", "### Violations", ""] + [f"- {e}" for e in check.errors]
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [json_path, md_path]


def reproduce_table(table: int, out_dir: Optional[str] = None, jobs: Optional[int] = None) -> TableCheck:
    """Run the golden plan of a table and compare against the published values."""

    meta = load_golden_with_meta(table)
    golden = meta.golden
    logger.info("reproducing table", extra={"table": table, "plan": golden.plan.name})
    result = run_plan(golden.plan, out_dir=out_dir, jobs=jobs)

    check = compare_table(golden, result["table"])
    if not result["ok"]:
        check.passed = False
        for f in result["report"]["failures"]:
            where = f"{f.get('scheme')}/{f.get('example')} alpha={f.get('alpha')} level {f.get('level')}"
            check.errors.append(f"combination failed: {where}: {f.get('exception')}")
    check.metrics["golden_path"] = meta.path
    check.metrics["golden_sha256"] = meta.sha256

    root = Path(result["out_dir"])
    check.outputs = [str(root / p) for p in result["report"]["outputs"]] + [
        str(p) for p in _write_comparison(check, golden, root)
    ]
    for err in check.errors:
        logger.warning("table mismatch: %s", err, extra={"table": table})
    return check
