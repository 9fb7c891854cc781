from __future__ import annotations

from pathlib import Path

import pytest

from fracfem.plans import ExperimentPlan, load_plan_with_meta, parse_plan_yaml, plan_hash, validate_plan_dict

PLANS_DIR = Path(__file__).resolve().parents[1] / "data" / "plans"


def _base(**kw):
    d = {
        "name": "demo",
        "dim": 2,
        "schemes": ["lumped"],
        "examples": ["c"],
        "alphas": [0.5],
        "times": [0.1],
        "levels": [3, 4],
    }
    d.update(kw)
    return d


def test_defaults_and_normalization():
    plan = ExperimentPlan.from_dict(_base(name="Demo", schemes="Galerkin", examples=["C", "custom: x*y"]))
    assert plan.name == "demo"
    assert plan.schemes == ["standard"]
    assert plan.examples == ["c", "custom:x*y"]
    assert plan.study == "convergence"
    assert plan.solver == "eigen"
    assert plan.mesh_rule == "standard"
    assert plan.reference_tol == 1e-8
    assert plan.normalize == "auto"
    assert not plan.is_empty


@pytest.mark.parametrize(
    "changes",
    [
        {"name": None},
        {"colour": "red"},
        {"dim": 3},
        {"dim": "two"},
        {"dim": 1},  # example c lives on the square
        {"alphas": [0.0]},
        {"alphas": [1.5]},
        {"alphas": ["half"]},
        {"times": [0.0]},
        {"levels": [0]},
        {"levels": [2.5]},
        {"levels": [True]},
        {"mesh_rule": "offset"},
        {"mesh_rule": "graded"},
        {"solver": "l1"},
        {"solver": "l1", "taus": [1e-3, 1e-4]},
        {"solver": "rk4"},
        {"taus": [-1e-3]},
        {"study": "temporal"},
        {"study": "temporal", "taus": [1e-2], "schemes": ["standard"]},
        {"study": "sweep"},
        {"normalize": "sometimes"},
        {"reference_tol": 0},
        {"reference_tol": "tight"},
        {"reference_h1_tol": -1.0},
        {"jobs": 0},
        {"seed": "x"},
        {"plot_data": "yes"},
        {"schemes": ["explicit"]},
        {"examples": ["z"]},
    ],
)
def test_invalid_plans_rejected(changes):
    d = _base(**changes)
    if changes.get("name", "demo") is None:
        d.pop("name")
    with pytest.raises(ValueError):
        ExperimentPlan.from_dict(d)


def test_non_mapping_rejected():
    with pytest.raises(ValueError):
        validate_plan_dict(["name", "demo"])
    with pytest.raises(ValueError):
        parse_plan_yaml("   ")


def test_scalars_become_lists():
    d = validate_plan_dict(_base(alphas=0.3, times="1e-2", levels=5))
    assert d["alphas"] == [0.3]
    assert d["times"] == [0.01]
    assert d["levels"] == [5]


def test_offset_rule_in_1d():
    plan = ExperimentPlan.from_dict(_base(dim=1, examples=["delta"], mesh_rule="offset"))
    assert plan.mesh_rule == "offset"


def test_temporal_plan():
    plan = ExperimentPlan.from_dict(_base(study="temporal", taus=["1e-2", 1e-3]))
    assert plan.taus == [1e-2, 1e-3]
    assert not plan.is_empty
    assert ExperimentPlan.from_dict(_base(study="temporal", taus=[1e-2], levels=[])).is_empty


def test_empty_plan():
    assert ExperimentPlan(name="empty").is_empty
    assert ExperimentPlan.from_dict(_base(examples=[])).is_empty


@pytest.mark.parametrize(
    "flag,is_l2,expected",
    [
        ("auto", True, True),
        ("auto", False, False),
        ("true", True, True),
        ("true", False, False),
        ("false", True, False),
    ],
)
def test_normalized_for(flag, is_l2, expected):
    plan = ExperimentPlan.from_dict(_base(normalize=flag))
    assert plan.normalized_for(is_l2) is expected


def test_normalize_accepts_yaml_booleans():
    assert ExperimentPlan.from_dict(_base(normalize=False)).normalize == "false"


def test_overrides_revalidate():
    plan = ExperimentPlan.from_dict(_base())
    changed = plan.with_overrides(alphas=[0.3, 0.7], times=None, jobs=2)
    assert changed.alphas == [0.3, 0.7]
    assert changed.times == [0.1]
    assert changed.jobs == 2
    assert plan.alphas == [0.5]
    with pytest.raises(ValueError):
        plan.with_overrides(dim=1)


def test_plan_hash_ignores_formatting():
    a = parse_plan_yaml("name: demo\ndim: 2\nalphas: [0.5]\nexamples: [c]\n")
    b = parse_plan_yaml("examples:\n  - c\nalphas: [5.0e-1]\ndim: 2\nname: Demo\n")
    assert plan_hash(a) == plan_hash(b)
    assert plan_hash(a) != plan_hash(a.with_overrides(alphas=[0.3]))
    assert len(plan_hash(a)) == 64


def test_yaml_round_trip():
    plan = ExperimentPlan.from_dict(_base(taus=[1e-3]))
    assert parse_plan_yaml(plan.to_yaml()) == plan


def test_load_plan_with_meta(tmp_path):
    path = tmp_path / "plan.yaml"
    path.write_text("name: demo\ndim: 1\nexamples: [delta]\n", encoding="utf-8")
    meta = load_plan_with_meta(str(path))
    assert meta.plan.dim == 1
    assert meta.path == str(path)
    assert len(meta.sha256) == 64

    with pytest.raises(FileNotFoundError):
        load_plan_with_meta(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: [unclosed\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_plan_with_meta(str(bad))


@pytest.mark.parametrize("path", sorted(PLANS_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_plans_are_valid(path: Path):
    plan = load_plan_with_meta(str(path)).plan
    assert not plan.is_empty
