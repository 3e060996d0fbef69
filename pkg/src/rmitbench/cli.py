"""Command-line entry point.

Exit codes: 0 success / no regression, 1 runtime failure, 2 usage or input
error, 3 regression detected under --fail-on-regression. Results go to
stdout as JSON (or CSV/markdown tables); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .measurements import (
    ConfigError,
    DatasetFormatError,
    ExperimentConfig,
    Mode,
    load_config,
    read_dataset,
    write_dataset,
)
from .harness import REPORT_COLUMNS, RunnerError, StudyReport, run_experiment, run_grid, run_traditional_study
from .scheduler import generate_plan
from .stats import ChangeEstimate, Verdict, analyze_rmit, analyze_traditional

log = logging.getLogger("rmitbench")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_REGRESSION = 3


class UsageError(Exception):
    pass


def _emit(data) -> None:
    sys.stdout.write(json.dumps(data, indent=2) + "\n")


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.replicates is not None:
        changes["bootstrap_replicates"] = args.replicates
    if args.level is not None:
        changes["confidence_level"] = args.level
    if args.fail_threshold is not None:
        changes["fail_threshold_pct"] = args.fail_threshold
    return config.replace(**changes) if changes else config


def _gate(estimate: ChangeEstimate, args) -> int:
    if args.fail_on_regression and estimate.verdict is Verdict.REGRESSION:
        log.error("performance regression: %+.3f%% [%+.3f, %+.3f]",
                  estimate.median_change_pct, estimate.ci_low_pct, estimate.ci_high_pct)
        return EXIT_REGRESSION
    return EXIT_OK


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_options = dict(schedule=args.schedule, think_time_s=args.think_time, parallel=args.parallel)
    analysis = dict(
        replicates=config.bootstrap_replicates,
        level=config.confidence_level,
        seed=config.master_seed,
        fail_threshold_pct=config.fail_threshold_pct,
    )
    if args.plan_out and config.mode is Mode.RMIT:
        plan = generate_plan(config.instance_count, config.calls_per_instance, config.iterations_per_call, config.master_seed)
        Path(args.plan_out).write_text(plan.to_json() + "\n", encoding="utf-8")

    dataset = run_experiment(config, **run_options)
    write_dataset(dataset, out / "measurements.csv")
    log.info("wrote %d records to %s", len(dataset), out / "measurements.csv")

    result: dict = {"experiment_id": config.experiment_id, "mode": config.mode.value, "records": len(dataset)}
    estimate = None
    if config.mode is Mode.RMIT:
        estimate = analyze_rmit(dataset, **analysis)
        result["rmit"] = estimate.to_report()
    if args.compare:
        trad_v1, trad_v2 = run_traditional_study(config, **run_options)
        write_dataset(trad_v1, out / "traditional_v1.csv")
        write_dataset(trad_v2, out / "traditional_v2.csv")
        trad = analyze_traditional(trad_v1, trad_v2, **analysis)
        result["traditional"] = trad.to_report()
        estimate = estimate or trad
    (out / "analysis.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    _emit(result)
    return _gate(estimate, args) if estimate is not None else EXIT_OK


def cmd_analyze(args) -> int:
    datasets = [read_dataset(p) for p in args.datasets]
    modes = sorted((d.mode.value if d.mode else "empty") for d in datasets)
    options = dict(
        replicates=args.replicates or 10_000,
        level=args.level or 0.99,
        seed=args.seed or 0,
        fail_threshold_pct=args.fail_threshold or 0.0,
    )
    try:
        if modes == ["rmit"]:
            estimate = analyze_rmit(datasets[0], **options)
        elif modes == ["v1_only", "v2_only"]:
            by_mode = {d.mode: d for d in datasets}
            estimate = analyze_traditional(by_mode[Mode.V1_ONLY], by_mode[Mode.V2_ONLY], **options)
        elif len(datasets) == 1:
            raise UsageError(f"a {modes[0]} dataset needs its counterpart: pass one v1_only and one v2_only file")
        else:
            raise UsageError(f"expected one rmit dataset or a v1_only/v2_only pair, got {', '.join(modes)}")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(estimate.to_report())
    return _gate(estimate, args)


def _default_study_path():
    return resources.files("rmitbench").joinpath("data/default_study.json")


def load_study(path) -> tuple[str, ExperimentConfig, list[dict]]:
    path = Path(path) if isinstance(path, str) else path
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("study", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("study", "must be a JSON object")
    for key in ("base", "grid"):
        if key not in data:
            raise ConfigError(key, "missing")
    if not isinstance(data["grid"], list) or not data["grid"]:
        raise ConfigError("grid", "must be a non-empty list")
    for n, cell in enumerate(data["grid"]):
        if not isinstance(cell, dict) or set(cell) != {"K", "C", "regression_pct"}:
            raise ConfigError(f"grid[{n}]", "needs exactly the keys K, C, regression_pct")
    return data.get("label", "simulated"), ExperimentConfig.from_dict(data["base"]), data["grid"]


def cmd_study(args) -> int:
    label, base, grid = load_study(args.config or _default_study_path())
    base = _apply_overrides(base, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(n, cell):
        log.info("cell %d/%d: K=%d C=%d regression=%g%%", n + 1, len(grid), cell.K, cell.C, cell.regression_pct)

    report = run_grid(grid, base, label=label, progress=progress)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.to_json())
    if report.failed_cells and args.strict:
        log.error("%d cell(s) failed", len(report.failed_cells))
        return EXIT_RUNTIME
    return EXIT_OK


def render_table(report: StudyReport) -> str:
    header = list(REPORT_COLUMNS) + ["verdict"]
    cells = []
    for row in report.rows:
        values = []
        for name in header:
            v = getattr(row, name)
            values.append(f"{v:+.3f}" if name in ("median_pct", "ci_low", "ci_high") else
                          f"{v:.3f}" if name == "ci_width" else f"{v:g}" if isinstance(v, float) else str(v))
        cells.append(values)
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(header)]
    lines = ["| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |",
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += ["| " + " | ".join(c.rjust(w) for c, w in zip(r, widths)) + " |" for r in cells]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    try:
        report = StudyReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"malformed report {args.report}: {exc}") from None
    sys.stdout.write(render_table(report))
    return EXIT_OK


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--replicates", "-B", type=int, help="bootstrap replicates")
    p.add_argument("--level", type=float, help="confidence level, e.g. 0.99")
    p.add_argument("--fail-threshold", type=float, help="percent change tolerated before a verdict")
    p.add_argument("--fail-on-regression", action="store_true", help="exit 3 when a regression is detected")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmitbench", description="RMIT paired benchmarking and regression detection")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one experiment from a config file")
    p.add_argument("config")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.add_argument("--compare", action="store_true", help="also run the traditional (separate deployment) study")
    p.add_argument("--schedule", choices=("round_robin", "sequential"), default="round_robin")
    p.add_argument("--think-time", type=float, default=0.0, help="pause after every call, seconds")
    p.add_argument("--parallel", action="store_true", help="drive instances concurrently (not reproducible)")
    p.add_argument("--plan-out", help="write the RMIT execution plan as JSON")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", parents=[common], help="analyze one rmit dataset or a v1_only/v2_only pair")
    p.add_argument("datasets", nargs="+")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("study", parents=[common], help="run the RMIT vs traditional grid study")
    p.add_argument("--config", help="study config (default: the shipped one)")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="exit 1 if any cell failed")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", "-B", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--fail-threshold", type=float)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", parents=[common], help="render a study report as a table")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="rmitbench: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, UsageError) as exc:
        _fail(exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _fail(exc)
        return EXIT_USAGE if exc.filename in _input_paths(args) else EXIT_RUNTIME
    except (RunnerError, OSError) as exc:
        _fail(exc)
        return EXIT_RUNTIME


def _fail(exc: Exception) -> None:
    # printed directly so the message survives whatever logging setup the host has
    print(f"rmitbench: error: {exc}", file=sys.stderr)


def _input_paths(args) -> set:
    paths = set()
    for name in ("config", "report"):
        if getattr(args, name, None):
            paths.add(getattr(args, name))
    paths.update(getattr(args, "datasets", []) or [])
    return paths


if __name__ == "__main__":
    raise SystemExit(main())
