from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .mesh import SPACING_RULES
from .naming import normalize_example_token, normalize_plan_name, normalize_scheme, normalize_solver

# Plan files are validated strictly so a run is fully determined by its file of record:
# - unknown keys are rejected (typos would otherwise silently fall back to defaults)
# - lists are YAML sequences; scalars are accepted where a one-element list is meant
# - combinations that cannot be solved (offset meshes in 2D, l1 without tau) fail here, not mid-run

STUDIES: Tuple[str, ...] = ("convergence", "temporal")
_NORMALIZE: Tuple[str, ...] = ("auto", "true", "false")

_KEYS = (
    "name",
    "description",
    "study",
    "dim",
    "schemes",
    "examples",
    "alphas",
    "times",
    "levels",
    "mesh_rule",
    "solver",
    "taus",
    "normalize",
    "reference_tol",
    "reference_h1_tol",
    "seed",
    "output_dir",
    "jobs",
    "plot_data",
)


def _as_list(d: Dict[str, Any], key: str) -> List[Any]:
    raw = d.get(key)
    if raw is None:
        return []
    if isinstance(raw, (list, tuple)):
        return list(raw)
    return [raw]


def _floats(d: Dict[str, Any], key: str) -> List[float]:
    out: List[float] = []
    for v in _as_list(d, key):
        try:
            out.append(float(v))
        except (TypeError, ValueError) as e:
            raise ValueError(f"'{key}' entries must be numeric, got {v!r}") from e
    return out


def _normalize_flag(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    s = str(value if value is not None else "auto").strip().lower()
    if s not in _NORMALIZE:
        raise ValueError(f"normalize must be one of {list(_NORMALIZE)}, got {value!r}")
    return s


def validate_plan_dict(d: Any) -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ValueError("Plan YAML must parse to an object/dict.")
    unknown = sorted(set(map(str, d)) - set(_KEYS))
    if unknown:
        raise ValueError(f"Unknown plan keys {unknown}. Allowed: {list(_KEYS)}")
    if "name" not in d:
        raise ValueError("Plan must include a 'name' field.")

    name = normalize_plan_name(str(d["name"]))
    study = str(d.get("study") or "convergence").strip().lower()
    if study not in STUDIES:
        raise ValueError(f"study must be one of {list(STUDIES)}, got {study!r}")

    try:
        dim = int(d.get("dim", 2))
    except (TypeError, ValueError) as e:
        raise ValueError(f"dim must be 1 or 2, got {d.get('dim')!r}") from e
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim!r}")

    schemes = [normalize_scheme(str(s)) for s in _as_list(d, "schemes")]
    examples = [normalize_example_token(str(e)) for e in _as_list(d, "examples")]
    for ex in examples:
        if ex in ("a", "b", "c", "d") and dim != 2:
            raise ValueError(f"example {ex!r} is defined on the unit square; set dim: 2")

    alphas = _floats(d, "alphas")
    for a in alphas:
        if not (0.0 < a <= 1.0):
            raise ValueError(f"alphas must lie in (0, 1], got {a!r}")
    times = _floats(d, "times")
    for t in times:
        if not (t > 0.0):
            raise ValueError(f"times must be positive, got {t!r}")

    levels: List[int] = []
    for lv in _as_list(d, "levels"):
        if isinstance(lv, bool) or int(lv) != lv or int(lv) < 1:
            raise ValueError(f"levels must be integers >= 1, got {lv!r}")
        levels.append(int(lv))

    mesh_rule = str(d.get("mesh_rule") or "standard").strip().lower()
    if mesh_rule not in SPACING_RULES:
        raise ValueError(f"mesh_rule must be one of {list(SPACING_RULES)}, got {mesh_rule!r}")
    if mesh_rule == "offset" and dim != 1:
        raise ValueError("offset meshes are only defined in 1D")

    solver = normalize_solver(str(d.get("solver") or "eigen"))
    taus = _floats(d, "taus")
    for tau in taus:
        if not (tau > 0.0):
            raise ValueError(f"taus must be positive, got {tau!r}")
    if solver == "l1" and len(taus) != 1 and study == "convergence":
        raise ValueError("solver 'l1' needs exactly one time step in 'taus'")
    if study == "temporal":
        if not taus:
            raise ValueError("a temporal study needs at least one entry in 'taus'")
        if any(s != "lumped" for s in schemes):
            raise ValueError("a temporal study compares against the exact lumped solution; use schemes: [lumped]")

    normalize = _normalize_flag(d.get("normalize", "auto"))

    tol_raw = d.get("reference_tol", 1e-8)
    try:
        reference_tol = float(tol_raw)
    except (TypeError, ValueError) as e:
        raise ValueError("reference_tol must be numeric") from e
    if not (reference_tol > 0.0):
        raise ValueError(f"reference_tol must be positive, got {reference_tol!r}")
    h1_raw = d.get("reference_h1_tol")
    reference_h1_tol = None if h1_raw is None else float(h1_raw)
    if reference_h1_tol is not None and not (reference_h1_tol > 0.0):
        raise ValueError(f"reference_h1_tol must be positive, got {reference_h1_tol!r}")

    try:
        seed = int(d.get("seed", 0))
        jobs = None if d.get("jobs") is None else int(d["jobs"])
    except (TypeError, ValueError) as e:
        raise ValueError("seed and jobs must be integers") from e
    if jobs is not None and jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs!r}")

    output_dir = d.get("output_dir")
    output_dir = str(output_dir).strip() or None if output_dir is not None else None

    plot_data = d.get("plot_data")
    if plot_data is not None and not isinstance(plot_data, bool):
        raise ValueError("plot_data must be boolean")

    return {
        "name": name,
        "description": str(d.get("description") or ""),
        "study": study,
        "dim": dim,
        "schemes": schemes,
        "examples": examples,
        "alphas": alphas,
        "times": times,
        "levels": levels,
        "mesh_rule": mesh_rule,
        "solver": solver,
        "taus": taus,
        "normalize": normalize,
        "reference_tol": reference_tol,
        "reference_h1_tol": reference_h1_tol,
        "seed": seed,
        "output_dir": output_dir,
        "jobs": jobs,
        "plot_data": plot_data,
    }


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    description: str = ""
    study: str = "convergence"
    dim: int = 2
    schemes: List[str] = field(default_factory=list)
    examples: List[str] = field(default_factory=list)
    alphas: List[float] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    levels: List[int] = field(default_factory=list)
    mesh_rule: str = "standard"
    solver: str = "eigen"
    taus: List[float] = field(default_factory=list)
    normalize: str = "auto"
    reference_tol: float = 1e-8
    reference_h1_tol: Optional[float] = None
    seed: int = 0
    output_dir: Optional[str] = None
    jobs: Optional[int] = None
    plot_data: Optional[bool] = None

    @staticmethod
    def from_dict(d: Dict[str, Any]) -> "ExperimentPlan":
        return ExperimentPlan(**validate_plan_dict(d))

    def to_dict(self) -> Dict[str, Any]:
        return {k: (list(v) if isinstance(v, list) else v) for k, v in self.__dict__.items()}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @property
    def is_empty(self) -> bool:
        """No combination to run."""

        if self.study == "temporal":
            return not (self.examples and self.alphas and self.times and self.levels and self.taus)
        return not (self.schemes and self.examples and self.alphas and self.times and self.levels)

    def normalized_for(self, is_l2_datum: bool) -> bool:
        if self.normalize == "auto":
            return is_l2_datum
        return self.normalize == "true" and is_l2_datum

    def with_overrides(self, **changes: Any) -> "ExperimentPlan":
        """Copy with CLI overrides applied; None values are ignored. Re-validated."""

        updates = {k: v for k, v in changes.items() if v is not None}
        return ExperimentPlan.from_dict(replace(self, **updates).to_dict())


def plan_hash(plan: ExperimentPlan) -> str:
    """sha256 of the canonical JSON form; independent of key order and YAML formatting."""

    canonical = json.dumps(plan.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_plan_yaml(raw_yaml: str) -> ExperimentPlan:
    if not (raw_yaml or "").strip():
        raise ValueError("Plan YAML is empty.")
    return ExperimentPlan.from_dict(yaml.safe_load(raw_yaml))


@dataclass(frozen=True)
class PlanLoadResult:
    plan: ExperimentPlan
    path: str
    sha256: str


def load_plan_with_meta(path: str) -> PlanLoadResult:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Plan file not found at {path}")
    with open(path, "rb") as f:
        raw = f.read()
    sha = hashlib.sha256(raw).hexdigest()
    try:
        d = yaml.safe_load(raw.decode("utf-8"))
    except yaml.YAMLError as e:
        raise ValueError(f"Plan file {path} is not valid YAML: {e}") from e
    return PlanLoadResult(plan=ExperimentPlan.from_dict(d), path=path, sha256=sha)
