"""Command-line entry point: ``fracfem run|table|ml-eval|check``.

Exit codes: 0 success, 1 numerical or tolerance failure, 2 usage error.
Results go to stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from .checks import run_checks
from .config import normalize_log_format, settings, split_csv
from .jobs import run_plan
from .logging_setup import setup_logging
from .mittag_leffler import MittagLefflerError, mittag_leffler, regime_of
from .plans import ExperimentPlan, load_plan_with_meta
from .tables import TABLE_IDS, reproduce_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _csv_floats(value: str) -> List[float]:
    try:
        return [float(v) for v in split_csv(value)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from e


def _csv_ints(value: str) -> List[int]:
    try:
        return [int(v) for v in split_csv(value)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from e


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log-level", default=settings.log_level, help="Root log level (default: LOG_LEVEL or INFO).")
    p.add_argument("--log-format", default=settings.log_format, help="json|console (default: LOG_FORMAT or json).")


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    """One flag per plan key; a flag overrides the value in the plan file."""

    p.add_argument("--name")
    p.add_argument("--description")
    p.add_argument("--study", choices=["convergence", "temporal"])
    p.add_argument("--dim", type=int, choices=[1, 2])
    p.add_argument("--schemes", type=split_csv, help="Comma-separated: standard,lumped")
    p.add_argument("--examples", type=split_csv, help="Comma-separated tokens, e.g. a,c or delta or 'custom:x*(1-x)'")
    p.add_argument("--alphas", type=_csv_floats)
    p.add_argument("--times", type=_csv_floats)
    p.add_argument("--levels", type=_csv_ints, help="Mesh levels k (N = 2^k, or 2^k + 1 for offset meshes).")
    p.add_argument("--mesh-rule", dest="mesh_rule", choices=["standard", "offset"])
    p.add_argument("--solver", help="eigen|laplace|l1")
    p.add_argument("--taus", type=_csv_floats, help="Time steps for the l1 solver or a temporal study.")
    p.add_argument("--normalize", choices=["auto", "true", "false"])
    p.add_argument("--reference-tol", dest="reference_tol", type=float)
    p.add_argument("--reference-h1-tol", dest="reference_h1_tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--plot-data", dest="plot_data", action="store_true", default=None)
    p.add_argument("--no-plot-data", dest="plot_data", action="store_false")


_PLAN_FLAG_KEYS = (
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
    "plot_data",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracfem",
        description="Finite element solver for time-fractional subdiffusion with nonsmooth initial data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run an experiment plan.")
    p_run.add_argument("--config", help="Plan YAML file of record.")
    p_run.add_argument("--out", help="Output root (overrides FRACFEM_OUT and the plan's output_dir).")
    p_run.add_argument("--jobs", type=int, help="Worker cap for combination-level parallelism.")
    _add_plan_flags(p_run)
    _add_common(p_run)

    p_table = sub.add_parser("table", help="Reproduce a published table and compare against golden values.")
    p_table.add_argument("id", type=int, choices=list(TABLE_IDS))
    p_table.add_argument("--out", help="Output root (overrides FRACFEM_OUT).")
    p_table.add_argument("--jobs", type=int)
    _add_common(p_table)

    p_ml = sub.add_parser("ml-eval", help="Print E_{alpha,beta}(z) with 17 significant digits.")
    p_ml.add_argument("alpha", type=float)
    p_ml.add_argument("beta", type=float)
    p_ml.add_argument("z", type=float)
    p_ml.add_argument("--rel-tol", dest="rel_tol", type=float)
    _add_common(p_ml)

    p_check = sub.add_parser("check", help="Run the fast property checks.")
    p_check.add_argument("--seed", type=int, default=0)
    _add_common(p_check)

    return parser


def _plan_from_args(args: argparse.Namespace) -> ExperimentPlan:
    overrides: Dict[str, Any] = {k: getattr(args, k) for k in _PLAN_FLAG_KEYS}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.config:
        meta = load_plan_with_meta(args.config)
        logger.info("loaded plan %s (sha256 %s)", meta.path, meta.sha256[:12], extra={"plan": meta.plan.name})
        return meta.plan.with_overrides(**overrides)
    return ExperimentPlan.from_dict({k: v for k, v in overrides.items() if v is not None})


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        plan = _plan_from_args(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"fracfem run: {e}", file=sys.stderr)
        return EXIT_USAGE

    result = run_plan(plan, out_dir=args.out, jobs=args.jobs)
    report = result["report"]
    print(
        json.dumps(
            {
                "ok": result["ok"],
                "plan": plan.name,
                "plan_hash": report["plan_hash"],
                "out_dir": result["out_dir"],
                "combinations": len(report["combinations"]),
                "failures": len(report["failures"]),
                "outputs": report["outputs"],
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK if result["ok"] else EXIT_FAILED


def _cmd_table(args: argparse.Namespace) -> int:
    try:
        check = reproduce_table(args.id, out_dir=args.out, jobs=args.jobs)
    except (ValueError, FileNotFoundError) as e:
        print(f"fracfem table: {e}", file=sys.stderr)
        return EXIT_USAGE

    print(
        json.dumps(
            {
                "ok": check.passed,
                "table": check.table,
                "errors": check.errors,
                "warnings": check.warnings,
                "metrics": check.metrics,
                "outputs": check.outputs,
            },
            indent=2,
            sort_keys=True,
            default=str,
        )
    )
    return EXIT_OK if check.passed else EXIT_FAILED


def _cmd_ml_eval(args: argparse.Namespace) -> int:
    try:
        value = mittag_leffler(args.alpha, args.beta, args.z, rel_tol=args.rel_tol)
    except ValueError as e:
        print(f"fracfem ml-eval: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MittagLefflerError as e:
        print(f"fracfem ml-eval: {e}", file=sys.stderr)
        return EXIT_FAILED
    logger.debug("ml-eval", extra={"alpha": args.alpha, "regime": regime_of(args.alpha, args.beta, args.z)})
    print(f"{value:.17g}")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status:4}  {r.name:<{width}}  {r.detail}  ({r.duration_s:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "table": _cmd_table,
    "ml-eval": _cmd_ml_eval,
    "check": _cmd_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage and 0 for --help.
        return int(e.code or 0)

    setup_logging(log_level=args.log_level, log_format=normalize_log_format(args.log_format))
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print(f"fracfem {args.command}: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    return _COMMANDS[args.command](args)


def run() -> None:
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
