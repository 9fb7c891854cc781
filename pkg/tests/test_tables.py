from __future__ import annotations

import copy
import json

import pandas as pd
import pytest
import yaml

from fracfem.error_analysis import ConvergenceRecord, build_convergence_table
from fracfem.tables import (
    TABLE_IDS,
    GoldenTable,
    _cells_per_axis,
    compare_table,
    load_golden_with_meta,
    reproduce_table,
)


def _frame(golden: GoldenTable, fixes=None) -> pd.DataFrame:
    """Convergence table whose cells are the golden values (optionally patched)."""

    plan = golden.plan
    records = []
    for s in golden.series:
        key = s["key"]
        for i, n in enumerate(_cells_per_axis(plan)):
            vals = {norm: s[norm][i] for norm in ("l2", "h1")}
            for (t, norm, fix_n), value in (fixes or {}).items():
                if key.get("t") == t and fix_n == n:
                    vals[norm] = value
            records.append(
                ConvergenceRecord(
                    scheme=key.get("scheme", plan.schemes[0]),
                    example=key.get("example", plan.examples[0]),
                    alpha=float(key.get("alpha", plan.alphas[0])),
                    t=float(key.get("t", plan.times[0])),
                    h=1.0 / n,
                    n_cells=n,
                    l2_error=vals["l2"],
                    h1_error=vals["h1"],
                    normalized=False,
                )
            )
    return build_convergence_table(records)


@pytest.mark.parametrize("table", TABLE_IDS)
def test_golden_files_validate(table: int):
    meta = load_golden_with_meta(table)
    golden = meta.golden
    assert golden.table == table
    assert golden.plan.name == f"table{table}"
    assert len(meta.sha256) == 64
    for s in golden.series:
        for norm in ("l2", "h1"):
            assert len(s[norm]) == len(golden.plan.levels)


def test_unknown_table_id():
    with pytest.raises(ValueError):
        load_golden_with_meta(10)


def test_published_values_pass_their_own_check():
    golden = load_golden_with_meta(1).golden
    check = compare_table(golden, _frame(golden))
    assert check.passed, check.errors
    assert check.metrics["n_failed"] == 0
    assert check.metrics["n_checked"] == 30


def test_cell_deviation_is_reported():
    golden = load_golden_with_meta(1).golden
    check = compare_table(golden, _frame(golden, {(1.0, "l2", 33): 4.34e-4 * 1.2}))
    assert not check.passed
    assert any("l2 at h=1/33" in e for e in check.errors)
    assert check.metrics["n_failed"] == 1


def test_missing_level_is_reported():
    golden = load_golden_with_meta(1).golden
    table = _frame(golden)
    check = compare_table(golden, table[table["n_cells"] != 129])
    assert not check.passed
    assert any("missing" in e for e in check.errors)


def test_excluded_cells_do_not_fail():
    golden = load_golden_with_meta(8).golden
    fixes = {(0.1, "l2", 32): 5.90e-4, (0.1, "l2", 64): 1.55e-4, (0.1, "l2", 128): 4.10e-5}
    check = compare_table(golden, _frame(golden, fixes))
    assert check.passed, check.errors
    assert check.metrics["n_excluded"] == 3
    assert check.warnings == ["3 cell(s) excluded from comparison"]


def test_ratio_band_is_checked():
    golden = load_golden_with_meta(8).golden
    # The raw published t = 0.1 row has a 0.38 ratio in it.
    check = compare_table(golden, _frame(golden))
    assert any("l2 ratio" in e and "t=0.1" in e for e in check.errors)


def test_temporal_table():
    golden = load_golden_with_meta(5).golden
    rows = []
    for s in golden.series:
        for i, n in enumerate(_cells_per_axis(golden.plan)):
            rows.append(
                {
                    "scheme": "lumped",
                    "example": "c",
                    "alpha": 0.5,
                    "t": 0.1,
                    "h": 1.0 / n,
                    "tau": s["key"]["tau"],
                    "n_steps": round(0.1 / s["key"]["tau"]),
                    "l2": s["l2"][i],
                    "h1": s["h1"][i],
                }
            )
    table = pd.DataFrame(rows)
    check = compare_table(golden, table)
    assert check.passed, check.errors

    flat = table.copy()
    flat.loc[flat["tau"] == 1e-4, "l2"] *= 10.0
    check = compare_table(golden, flat)
    assert any("tau slope" in e for e in check.errors)


def _raw(table: int) -> dict:
    meta = load_golden_with_meta(table)
    with open(meta.path, encoding="utf-8") as f:
        return yaml.safe_load(f)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("table"),
        lambda d: d.update(table=12),
        lambda d: d.update(series=[]),
        lambda d: d["series"][0].update(l2=[1.0, 2.0]),
        lambda d: d["series"][0]["key"].update(colour="red"),
        lambda d: d["series"][0].update(ratio_l2=2.7),
        lambda d: d.update(exclude=[{"norm": "max", "n": 8}]),
        lambda d: d.update(tolerances={"cell_rel": 1.5}),
        lambda d: d.update(tolerances={"cell_rel": 0.1, "cell_check": "loose"}),
        lambda d: d.update(exclude=[{"n": 8}]),
        lambda d: d["plan"].update(dim=5),
    ],
)
def test_invalid_golden_rejected(mutate):
    d = copy.deepcopy(_raw(1))
    mutate(d)
    with pytest.raises(ValueError):
        GoldenTable.from_dict(d)


def test_is_excluded_matches_numeric_keys():
    golden = load_golden_with_meta(8).golden
    assert golden.is_excluded({"t": 0.1}, "l2", 32)
    assert not golden.is_excluded({"t": 0.1}, "h1", 32)
    assert not golden.is_excluded({"t": 0.01}, "l2", 32)


def test_report_mode_lists_cell_deviations_as_warnings():
    golden = load_golden_with_meta(7).golden
    assert golden.cell_check == "report"
    check = compare_table(golden, _frame(golden, {(0.1, "l2", 8): 2.12e-3 * 1.3}))
    assert check.passed, check.errors
    assert check.metrics["n_reported"] == 1
    assert check.metrics["n_failed"] == 0
    assert any("l2 at h=1/8" in w for w in check.warnings)


def test_report_mode_still_checks_ratios():
    golden = load_golden_with_meta(7).golden
    row = golden.series[2]["l2"]
    fixes = {(0.1, "l2", n): value * n / 8 for n, value in zip(_cells_per_axis(golden.plan), row)}
    check = compare_table(golden, _frame(golden, fixes))
    assert not check.passed
    assert any("l2 ratio" in e and "t=0.1" in e for e in check.errors)


def test_whole_norm_exclusion_skips_cells_and_ratio():
    golden = load_golden_with_meta(3).golden
    assert golden.is_excluded({"t": 1.0}, "h1", None)
    assert golden.is_excluded({"t": 0.005}, "h1", 8)
    assert not golden.is_excluded({"t": 1.0}, "l2", None)
    # O(h) H1 errors in place of the published column.
    fixes = {(s["key"]["t"], "h1", n): 1.14 / n for s in golden.series for n in _cells_per_axis(golden.plan)}
    check = compare_table(golden, _frame(golden, fixes))
    assert check.passed, check.errors
    assert check.metrics["n_excluded"] == 15
    assert check.metrics["n_checked"] == 15


def test_golden_plans_serialize():
    golden = load_golden_with_meta(4).golden
    assert json.loads(json.dumps(golden.plan.to_dict()))["alphas"] == [0.1, 0.5, 0.9]


_OPEN = pytest.mark.xfail(reason="not re-run since the sine-basis error norms", strict=False)


@pytest.mark.slow
@pytest.mark.parametrize("table", [t if t not in (8, 9) else pytest.param(t, marks=_OPEN) for t in TABLE_IDS])
def test_reproduce_table(table: int, tmp_path):
    check = reproduce_table(table, out_dir=str(tmp_path))
    assert check.passed, check.errors
    assert (tmp_path / f"table{table}" / "comparison.md").exists()
