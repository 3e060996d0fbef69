"""Benchmark manager: deploy targets, execute plans, assemble datasets and studies."""

from __future__ import annotations

import csv
import io
import json
import logging
import shlex
import subprocess
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .measurements import Dataset, ExperimentConfig, MeasurementRecord, Mode, TargetSpec, validate_dataset
from .rng import TAG_GRID_CELL, TAG_PLATFORM, TAG_PLATFORM_TRADITIONAL, derive_seed
from .scheduler import generate_plan
from .simulator import Platform, PlatformModel, WorkloadModel
from .stats import analyze_rmit, analyze_traditional

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
SCHEDULES = ("round_robin", "sequential")


class RunnerError(RuntimeError):
    """The target could not be set up or started; the experiment is aborted."""


@dataclass(frozen=True)
class Execution:
    start_ns: int
    end_ns: int
    status: str = "ok"

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns


class SimulatedRunner:
    """Runs versions on a simulated platform, timestamped by a virtual monotonic clock."""

    def __init__(self, platform: Platform):
        self.platform = platform
        self.clock_ns = 0
        self._lock = threading.Lock()

    def deploy(self, count: int) -> list[int]:
        with self._lock:
            return self.platform.deploy_instances(count)

    def execute(self, instance: int, version: int) -> Execution:
        with self._lock:
            start = self.clock_ns
            self.clock_ns += self.platform.invoke(instance, version)
            return Execution(start, self.clock_ns)

    def pause(self, seconds: float) -> None:
        with self._lock:
            self.clock_ns += round(seconds * 1e9)


def execute_local(command: Sequence[str] | str, timeout_s: float = DEFAULT_TIMEOUT_S) -> Execution:
    """Spawn ``command``, wait for it and time it with the monotonic clock.

    A nonzero exit or a timeout gives status "error"; failing to spawn at all
    raises RunnerError.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    start = time.monotonic_ns()
    try:
        proc = subprocess.run(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, timeout=timeout_s)
    except subprocess.TimeoutExpired:
        return Execution(start, time.monotonic_ns(), "error")
    except OSError as exc:
        raise RunnerError(f"cannot start {argv[0] if argv else '<empty command>'!r}: {exc}") from exc
    end = time.monotonic_ns()
    return Execution(start, end, "ok" if proc.returncode == 0 else "error")


class LocalProcessRunner:
    """Each version is a command line; instances are labels only (same host)."""

    def __init__(self, v1_command, v2_command, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.commands = {1: v1_command, 2: v2_command}
        self.timeout_s = timeout_s
        self._next_id = 0

    def deploy(self, count: int) -> list[int]:
        ids = list(range(self._next_id, self._next_id + count))
        self._next_id += count
        return ids

    def execute(self, instance: int, version: int) -> Execution:
        return execute_local(self.commands[version], self.timeout_s)

    def pause(self, seconds: float) -> None:
        time.sleep(seconds)


class HttpRunner:
    """POSTs a version selector to an endpoint and times the round trip."""

    def __init__(self, v1: Mapping[str, Any], v2: Mapping[str, Any], timeout_s: float = DEFAULT_TIMEOUT_S,
                 endpoints: Sequence[str] | None = None):
        self.targets = {1: v1, 2: v2}
        self.timeout_s = timeout_s
        self.endpoints = list(endpoints) if endpoints else None
        self._next_id = 0

    def deploy(self, count: int) -> list[int]:
        if self.endpoints is not None and self._next_id + count > len(self.endpoints):
            raise RunnerError(f"{count} instances requested but only {len(self.endpoints) - self._next_id} endpoints left")
        ids = list(range(self._next_id, self._next_id + count))
        self._next_id += count
        return ids

    def execute(self, instance: int, version: int) -> Execution:
        target = self.targets[version]
        url = self.endpoints[instance] if self.endpoints else target["url"]
        body = dict(target.get("body", {}))
        body.setdefault("version", f"v{version}")
        body.setdefault("instance", instance)
        request = urllib.request.Request(
            url, data=json.dumps(body).encode(), headers={"Content-Type": "application/json"}, method="POST"
        )
        start = time.monotonic_ns()
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                response.read()
                status = "ok" if 200 <= response.status < 300 else "error"
        except (urllib.error.URLError, OSError):
            status = "error"
        return Execution(start, time.monotonic_ns(), status)

    def pause(self, seconds: float) -> None:
        time.sleep(seconds)


def simulated_models(target: TargetSpec, seed: int) -> tuple[PlatformModel, WorkloadModel]:
    options = target.options
    platform = dict(options.get("platform", {}))
    platform["seed"] = seed
    workload = dict(options.get("workload", {}))
    workload["values_v1"] = target.v1.get("values", WorkloadModel.values_v1)
    workload["values_v2"] = target.v2.get("values", WorkloadModel.values_v2)
    try:
        return PlatformModel(**platform), WorkloadModel(**workload)
    except (TypeError, ValueError) as exc:
        raise RunnerError(f"invalid simulated target: {exc}") from exc


def open_runner(target: TargetSpec, seed: int):
    """Runner for ``target``; ``seed`` only matters for simulated targets."""
    timeout = float(target.options.get("timeout_s", DEFAULT_TIMEOUT_S))
    if target.kind == "simulated":
        return SimulatedRunner(Platform(*simulated_models(target, seed)))
    if target.kind == "local_process":
        try:
            return LocalProcessRunner(target.v1["command"], target.v2["command"], timeout)
        except KeyError as exc:
            raise RunnerError(f"local_process target needs a 'command' for each version (missing {exc})") from None
    for name, spec in (("v1", target.v1), ("v2", target.v2)):
        if "url" not in spec and "endpoints" not in target.options:
            raise RunnerError(f"http_endpoint target {name} needs a 'url'")
    return HttpRunner(target.v1, target.v2, timeout, target.options.get("endpoints"))


# --- experiments ------------------------------------------------------------


def _work_units(config: ExperimentConfig, schedule: str):
    """(instance, call) in execution order."""
    K, C = config.instance_count, config.calls_per_instance
    if schedule == "round_robin":
        return [(k, c) for c in range(C) for k in range(K)]
    if schedule == "sequential":
        return [(k, c) for k in range(K) for c in range(C)]
    raise ValueError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")


def run_experiment(
    config: ExperimentConfig,
    *,
    runner=None,
    instance_ids: Sequence[int] | None = None,
    schedule: str = "round_robin",
    think_time_s: float = 0.0,
    parallel: bool = False,
) -> Dataset:
    """Execute one experiment and return its dataset.

    rmit: every planned pair runs v1 and v2 back to back on its instance in the
    planned order. v1_only/v2_only: every call repeats the single version
    ``iterations_per_call`` times. Target failures become status="error"
    records; RunnerError (setup or spawn failure) aborts.

    ``parallel`` drives distinct instances from separate threads; records are
    still keyed correctly and sorted canonically, but timings are no longer
    reproducible.
    """
    if runner is None:
        runner = open_runner(config.target, derive_seed(config.master_seed, TAG_PLATFORM))
    if instance_ids is None:
        instance_ids = runner.deploy(config.instance_count)
    if len(instance_ids) != config.instance_count:
        raise ValueError("instance_ids must have one entry per configured instance")
    units = _work_units(config, schedule)
    plan = generate_plan(
        config.instance_count, config.calls_per_instance, config.iterations_per_call, config.master_seed
    ) if config.mode is Mode.RMIT else None
    single_version = 1 if config.mode is Mode.V1_ONLY else 2

    def record(k, c, it, version, position, ex: Execution) -> MeasurementRecord:
        return MeasurementRecord(
            config.experiment_id, config.mode, k, c, it, version, position,
            ex.start_ns, ex.end_ns, ex.duration_ns, ex.status,
        )

    def run_unit(k: int, c: int) -> list[MeasurementRecord]:
        out = []
        target = instance_ids[k]
        if plan is not None:
            for planned in plan.for_call(k, c):
                for version, position in zip(planned.order.versions, ("first", "second")):
                    out.append(record(k, c, planned.iteration_index, version, position, runner.execute(target, version)))
        else:
            for it in range(config.iterations_per_call):
                out.append(record(k, c, it, single_version, "first", runner.execute(target, single_version)))
        if think_time_s > 0:
            runner.pause(think_time_s)
        return out

    records: list[MeasurementRecord] = []
    if parallel:
        per_instance: dict[int, list[tuple[int, int]]] = {}
        for k, c in units:
            per_instance.setdefault(k, []).append((k, c))

        def run_instance(work):
            return [r for k, c in work for r in run_unit(k, c)]

        with ThreadPoolExecutor(max_workers=len(per_instance)) as pool:
            for chunk in pool.map(run_instance, per_instance.values()):
                records.extend(chunk)
        records.sort(key=lambda r: (r.key, r.position != "first"))
    else:
        for k, c in units:
            records.extend(run_unit(k, c))

    dataset = Dataset(tuple(records), config=config, instance_map=tuple(instance_ids))
    report = validate_dataset(dataset)
    for violation in report.violations:
        log.warning("dataset %s: %s", config.experiment_id, violation)
    return dataset


def run_traditional_study(config: ExperimentConfig, **kwargs) -> tuple[Dataset, Dataset]:
    """Benchmark each version on its own fresh deployment of K instances.

    Both deployments live on one platform seeded separately from the RMIT run,
    so their platform-level instance ids are disjoint.
    """
    runner = open_runner(config.target, derive_seed(config.master_seed, TAG_PLATFORM_TRADITIONAL))
    datasets = []
    for mode, suffix in ((Mode.V1_ONLY, "trad-v1"), (Mode.V2_ONLY, "trad-v2")):
        ids = runner.deploy(config.instance_count)
        sub = config.replace(mode=mode, experiment_id=f"{config.experiment_id}-{suffix}")
        datasets.append(run_experiment(sub, runner=runner, instance_ids=ids, **kwargs))
    return datasets[0], datasets[1]


# --- studies ----------------------------------------------------------------

REPORT_COLUMNS = ("label", "mode", "K", "C", "i", "injected_pct", "median_pct", "ci_low", "ci_high", "ci_width")


@dataclass(frozen=True)
class GridCell:
    K: int
    C: int
    regression_pct: float


@dataclass(frozen=True)
class StudyRow:
    label: str
    mode: str  # "rmit" | "traditional"
    K: int
    C: int
    i: int
    injected_pct: float
    median_pct: float
    ci_low: float
    ci_high: float
    ci_width: float
    verdict: str


@dataclass
class StudyReport:
    label: str
    master_seed: int
    replicates: int
    confidence_level: float
    rows: list[StudyRow] = field(default_factory=list)
    failed_cells: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        data = {
            "label": self.label,
            "master_seed": self.master_seed,
            "replicates": self.replicates,
            "confidence_level": self.confidence_level,
            "rows": [asdict(r) for r in self.rows],
            "failed_cells": self.failed_cells,
        }
        return json.dumps(data, indent=2) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(row, c) for c in REPORT_COLUMNS)])
        return out.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        data = json.loads(text)
        if not isinstance(data, dict) or not isinstance(data.get("rows"), list):
            raise ValueError("report must be an object with a 'rows' list")
        rows = []
        for n, row in enumerate(data["rows"]):
            try:
                rows.append(StudyRow(**row))
            except TypeError as exc:
                raise ValueError(f"row {n}: {exc}") from None
        return cls(
            label=data.get("label", ""),
            master_seed=data.get("master_seed", 0),
            replicates=data.get("replicates", 0),
            confidence_level=data.get("confidence_level", 0.0),
            rows=rows,
            failed_cells=data.get("failed_cells", []),
        )


def inject_regression(target: TargetSpec, regression_pct: float) -> TargetSpec:
    """Simulated target whose v2 processes ``regression_pct`` percent more values than v1."""
    if target.kind != "simulated":
        raise ValueError("regression injection needs a simulated target")
    values_v1 = target.v1.get("values", WorkloadModel.values_v1)
    v2 = dict(target.v2)
    v2["values"] = round(values_v1 * (1 + regression_pct / 100))
    return TargetSpec(target.kind, dict(target.v1), v2, dict(target.options))


def run_cell(base: ExperimentConfig, cell: GridCell, seed: int, label: str, **kwargs) -> list[StudyRow]:
    config = base.replace(
        experiment_id=f"{base.experiment_id}-K{cell.K}-C{cell.C}-r{cell.regression_pct:g}",
        mode=Mode.RMIT,
        instance_count=cell.K,
        calls_per_instance=cell.C,
        master_seed=seed,
        target=inject_regression(base.target, cell.regression_pct),
    )
    analysis = dict(
        replicates=config.bootstrap_replicates,
        level=config.confidence_level,
        seed=seed,
        fail_threshold_pct=config.fail_threshold_pct,
    )
    rmit = analyze_rmit(run_experiment(config, **kwargs), **analysis)
    trad = analyze_traditional(*run_traditional_study(config, **kwargs), **analysis)
    rows = []
    for mode, est in (("rmit", rmit), ("traditional", trad)):
        rows.append(StudyRow(
            label, mode, cell.K, cell.C, config.iterations_per_call, float(cell.regression_pct),
            est.median_change_pct, est.ci_low_pct, est.ci_high_pct, est.ci_width, est.verdict.value,
        ))
    return rows


def run_grid(
    grid: Sequence[GridCell | Mapping[str, Any]],
    base_config: ExperimentConfig,
    label: str = "simulated",
    progress: Callable[[int, GridCell], None] | None = None,
    **kwargs,
) -> StudyReport:
    """Run RMIT and traditional benchmarks for every grid cell.

    Cell n uses the seed derived from the master seed with tag TAG_GRID_CELL + n.
    A failing cell is recorded in ``failed_cells`` and the rest still run.
    """
    if not grid:
        raise ValueError("grid must contain at least one cell")
    cells = [c if isinstance(c, GridCell) else GridCell(**c) for c in grid]
    report = StudyReport(label, base_config.master_seed, base_config.bootstrap_replicates, base_config.confidence_level)
    for n, cell in enumerate(cells):
        if progress:
            progress(n, cell)
        seed = derive_seed(base_config.master_seed, TAG_GRID_CELL + n)
        try:
            report.rows.extend(run_cell(base_config, cell, seed, label, **kwargs))
        except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the study
            log.error("cell %d (%s) failed: %s", n, cell, exc)
            report.failed_cells.append({"cell": n, **asdict(cell), "error": str(exc)})
    return report
