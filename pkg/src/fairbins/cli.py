"""Command-line interface tying the pipeline together.

Exit codes, kept distinct so scripts can branch on failure class:
  0  solved (optimal, gap-limit, or time-limit with an incumbent) / success
  2  bad input data, bad flags, or a broken config file
  3  a bin is missing members of some group (overlap failure)
  4  a bound-tightening subproblem is infeasible
  5  the solver proved infeasibility or ran out of time with no plan
  6  plan and dataset disagree (edges, groups, or malformed plan)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .bounds import BoundsError
from .data import (
    BinningError,
    BinSpec,
    ColumnSchema,
    RowValidationError,
    SchemaError,
    compute_bin_stats,
    load_dataset,
    quantile_bin,
    validate_overlap,
)
from .frontier import (
    FrontierPoint,
    compare_models,
    frontier_csv,
    parse_frontier_csv,
    solve_once,
    sweep,
    tradeoff_query,
)
from .model import ModelBuildError, ModelConfig
from .nmdt import power_for_precision
from .postprocess import (
    PlanError,
    TransitionPlan,
    apply_expected_score,
    apply_interpolated,
    apply_stochastic,
    audit_stats,
)

DEFAULTS = {
    "bins": 50,
    "eps_dp": 0.03,
    "eps_eodds": 0.03,
    "eps_prp": 0.03,
    "retention": 0.5,
    "window": 13,
    "precision": 1e-5,
    "time_limit": 600.0,
    "gap": 0.0,
    "mode": "exact",
    "seed": 0,
    "eval_bins": 100,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _resolve(args: argparse.Namespace) -> dict:
    """Settings precedence: flags beat the config file, which beats defaults."""
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(2, f"cannot read config {config_path}: {e}")
        if not isinstance(loaded, dict):
            raise CliError(2, f"config {config_path} must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(2, f"config {config_path} has unknown keys {sorted(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(text)


def _schema(args: argparse.Namespace) -> ColumnSchema:
    return ColumnSchema(
        score=getattr(args, "score_column", None) or "score",
        label=getattr(args, "label_column", None) or "label",
        group=getattr(args, "group_column", None) or "group",
    )


def _binned_stats(path: str, nbins: int, schema: ColumnSchema):
    obs = load_dataset(path, schema)
    spec = quantile_bin(obs, nbins)
    return obs, spec, compute_bin_stats(obs, spec)


def _require_overlap(stats) -> None:
    report = validate_overlap(stats)
    if not report.passed:
        raise CliError(3, f"overlap check failed: {report.describe()}")


def _model_config(settings: dict) -> ModelConfig:
    return ModelConfig(
        eps_dp=settings["eps_dp"],
        eps_eodds=settings["eps_eodds"],
        eps_prp=settings["eps_prp"],
        retention=settings["retention"],
        window=int(settings["window"]),
    )


def cmd_bin_stats(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    _, _, stats = _binned_stats(args.input, int(settings["bins"]), _schema(args))
    report = validate_overlap(stats)
    if not report.passed:
        print(f"warning: {report.describe()}", file=sys.stderr)
    _write(args.output, stats.to_json())
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    _, _, stats = _binned_stats(args.input, int(settings["bins"]), _schema(args))
    _require_overlap(stats)
    config = _model_config(settings)
    power = power_for_precision(float(settings["precision"]))
    out = solve_once(
        stats,
        config,
        power=power,
        mode=settings["mode"],
        time_limit=float(settings["time_limit"]),
        gap_target=float(settings["gap"]),
    )
    report = out.report
    finite = lambda x: None if not np.isfinite(x) else float(x)
    doc = {
        "status": report.status.value,
        "incumbentObjective": None if report.incumbent is None
        else report.incumbent_objective,
        "bestLowerBound": finite(report.best_lower_bound),
        "gap": finite(report.gap),
        "nodesExplored": report.nodes_explored,
        "wallSeconds": report.wall_seconds,
        "certifiedRateSlack": out.rate_slack,
        "settings": {k: settings[k] for k in
                     ("bins", "eps_dp", "eps_eodds", "eps_prp", "retention",
                      "window", "precision", "time_limit", "gap", "mode")},
    }
    _write(args.report_out, json.dumps(doc, indent=2, sort_keys=True))
    if out.plan is None:
        print(f"{report.status.value}: no plan "
              f"(lower bound {report.best_lower_bound:.9g})", file=sys.stderr)
        return 5
    _write(args.plan_out, out.plan.to_json())
    print(f"{report.status.value}: objective {report.incumbent_objective:.9g}, "
          f"lower bound {report.best_lower_bound:.9g}, gap {report.gap:.3g}, "
          f"{report.nodes_explored} nodes")
    return 0


def _read_plan(path: str) -> TransitionPlan:
    try:
        return TransitionPlan.from_json(Path(path).read_text())
    except OSError as e:
        raise CliError(6, f"cannot read plan {path}: {e}")
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, PlanError):
            raise
        raise CliError(6, f"plan {path} is malformed: {e}")


def cmd_apply(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    seed = int(settings["seed"])
    plan = _read_plan(args.plan)
    obs = load_dataset(args.input, _schema(args))
    mode = args.mode or "expected"
    if mode == "stochastic":
        bins = apply_stochastic(plan, obs, seed)
        mids = np.asarray(plan.spec.midpoints)
        scores = mids[bins]
    elif mode == "interpolated":
        scores = apply_interpolated(plan, obs, seed)
        bins = plan.spec.assign(scores)
    elif mode == "expected":
        scores = apply_expected_score(plan, obs)
        bins = plan.spec.assign(scores)
    else:
        raise CliError(2, f"unknown apply mode {mode!r}")

    with open(args.input, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if len(body) != len(obs):
        raise CliError(6, f"{args.input} changed while being applied")
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header + ["new_score", "new_bin"])
    for row, s, b in zip(body, scores, bins):
        writer.writerow(row + [repr(float(s)), str(int(b))])
    _write(args.output, buf.getvalue())
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    k = int(settings["eval_bins"])
    if k < 2:
        raise CliError(2, f"eval_bins must be at least 2, got {k}")
    obs = load_dataset(args.input, _schema(args))
    spec = BinSpec(edges=tuple(np.linspace(0.0, 1.0, k + 1)))
    stats = compute_bin_stats(obs, spec)
    _write(args.output, audit_stats(stats).to_json())
    return 0


def _grid(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliError(2, f"{flag} expects comma-separated numbers, got {text!r}")
    if not values:
        raise CliError(2, f"{flag} needs at least one value")
    return values


def cmd_frontier(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    _, _, stats = _binned_stats(args.input, int(settings["bins"]), _schema(args))
    _require_overlap(stats)
    points = sweep(
        stats,
        _grid(args.grid_dp, "--grid-dp"),
        _grid(args.grid_eodds, "--grid-eodds"),
        _grid(args.grid_prp, "--grid-prp"),
        retention=float(settings["retention"]),
        window=int(settings["window"]),
        power=power_for_precision(float(settings["precision"])),
        mode=settings["mode"],
        budget_per_solve=args.budget_per_solve,
        gap_target=float(settings["gap"]),
    )
    _write(args.output, frontier_csv(points))
    return 0


def _operating_point(text: str) -> FrontierPoint:
    parts = text.split(",")
    if len(parts) != 4:
        raise CliError(2, "--operating expects auc,dp,eodds,prp")
    try:
        auc, dp, eodds, prp = (float(p) for p in parts)
    except ValueError:
        raise CliError(2, f"--operating values must be numbers, got {text!r}")
    return FrontierPoint(
        configured=(dp, eodds, prp), status="Operating", gap=0.0,
        solve_seconds=0.0, auc=auc, eps_dp=dp, eps_eodds=eodds, eps_prp=prp,
    )


def _read_frontier(path: str) -> list[FrontierPoint]:
    try:
        return parse_frontier_csv(Path(path).read_text())
    except OSError as e:
        raise CliError(2, f"cannot read frontier {path}: {e}")
    except ValueError as e:
        raise CliError(2, f"frontier {path}: {e}")


def cmd_tradeoff(args: argparse.Namespace) -> int:
    frontier = _read_frontier(args.frontier)
    try:
        found = tradeoff_query(frontier, _operating_point(args.operating),
                               args.cost, args.benefit)
    except ValueError as e:
        raise CliError(2, str(e))
    doc = {"found": found is not None,
           "point": None if found is None else found.to_dict()}
    _write(args.output, json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    record = compare_models(
        _read_frontier(args.frontier_a),
        _read_frontier(args.frontier_b),
        args.auc_min,
    )
    _write(args.output, record.to_json())
    return 0


def _add_schema_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--score-column", dest="score_column")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--group-column", dest="group_column")


def _add_settings_flags(p: argparse.ArgumentParser, *, solver: bool) -> None:
    p.add_argument("--config", help="JSON file of default overrides")
    p.add_argument("--bins", type=int, help="quantile bins for modelling")
    if solver:
        p.add_argument("--eps-dp", dest="eps_dp", type=float)
        p.add_argument("--eps-eodds", dest="eps_eodds", type=float)
        p.add_argument("--eps-prp", dest="eps_prp", type=float)
        p.add_argument("--retention", type=float,
                       help="maximum probability mass a bin may give away")
        p.add_argument("--window", type=int,
                       help="bins move strictly less than this many places")
        p.add_argument("--precision", type=float,
                       help="rate discretization step, e.g. 1e-5")
        p.add_argument("--time-limit", dest="time_limit", type=float)
        p.add_argument("--gap", type=float, help="stop at this relative gap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairbins",
        description="Rewrite binned classifier scores to meet group-fairness "
                    "tolerances at the smallest expected score movement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bin-stats", help="bin a dataset and print the tallies")
    p.add_argument("input")
    p.add_argument("--output")
    _add_settings_flags(p, solver=False)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_bin_stats)

    p = sub.add_parser("solve", help="solve for a transition plan")
    p.add_argument("input")
    p.add_argument("--plan-out", dest="plan_out", required=True)
    p.add_argument("--report-out", dest="report_out", required=True)
    p.add_argument("--mode", choices=("exact", "approx"))
    _add_settings_flags(p, solver=True)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("apply", help="transform scores with a stored plan")
    p.add_argument("input")
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=("stochastic", "interpolated", "expected"))
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--config")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("audit", help="re-bin a dataset and report metrics")
    p.add_argument("input")
    p.add_argument("--eval-bins", dest="eval_bins", type=int)
    p.add_argument("--output")
    p.add_argument("--config")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("frontier", help="sweep tolerance grids into a CSV")
    p.add_argument("input")
    p.add_argument("--grid-dp", dest="grid_dp", required=True)
    p.add_argument("--grid-eodds", dest="grid_eodds", required=True)
    p.add_argument("--grid-prp", dest="grid_prp", required=True)
    p.add_argument("--budget-per-solve", dest="budget_per_solve", type=float)
    p.add_argument("--mode", choices=("exact", "approx"))
    p.add_argument("--output")
    _add_settings_flags(p, solver=True)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("tradeoff", help="query a stored frontier for a trade")
    p.add_argument("--frontier", required=True)
    p.add_argument("--operating", required=True,
                   help="comma-separated auc,dp,eodds,prp")
    p.add_argument("--cost", required=True, choices=("auc", "dp", "eodds", "prp"))
    p.add_argument("--benefit", required=True,
                   choices=("auc", "dp", "eodds", "prp"))
    p.add_argument("--output")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("compare", help="compare two stored frontiers")
    p.add_argument("--frontier-a", dest="frontier_a", required=True)
    p.add_argument("--frontier-b", dest="frontier_b", required=True)
    p.add_argument("--auc-min", dest="auc_min", type=float, required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (SchemaError, RowValidationError, BinningError, ModelBuildError,
            ValueError) as e:
        if isinstance(e, PlanError):
            print(f"error: {e}", file=sys.stderr)
            return 6
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BoundsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
