"""Experiment configuration, measurement records, pairing and CSV persistence."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

CSV_HEADER = (
    "experiment_id",
    "mode",
    "instance_id",
    "call_index",
    "iteration_index",
    "version",
    "position",
    "start_ns",
    "end_ns",
    "duration_ns",
    "status",
)

UINT64_MAX = (1 << 64) - 1


class Mode(str, Enum):
    RMIT = "rmit"
    V1_ONLY = "v1_only"
    V2_ONLY = "v2_only"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DatasetFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


TARGET_KINDS = ("simulated", "local_process", "http_endpoint")


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    v1: Mapping[str, Any]
    v2: Mapping[str, Any]
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError("target.kind", f"unknown kind {self.kind!r}")
        for name in ("v1", "v2"):
            if not isinstance(getattr(self, name), Mapping):
                raise ConfigError(f"target.{name}", "must be an object")
        if not isinstance(self.options, Mapping):
            raise ConfigError("target.options", "must be an object")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "v1": dict(self.v1), "v2": dict(self.v2), "options": dict(self.options)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TargetSpec":
        if not isinstance(data, Mapping):
            raise ConfigError("target", "must be an object")
        for key in ("kind", "v1", "v2"):
            if key not in data:
                raise ConfigError(f"target.{key}", "missing")
        return cls(kind=data["kind"], v1=data["v1"], v2=data["v2"], options=data.get("options", {}))


def _positive_int(name: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(name, f"must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    mode: Mode
    instance_count: int
    calls_per_instance: int
    iterations_per_call: int
    target: TargetSpec
    master_seed: int = 0
    confidence_level: float = 0.99
    bootstrap_replicates: int = 10_000
    fail_threshold_pct: float = 0.0

    def __post_init__(self):
        if not isinstance(self.experiment_id, str) or not self.experiment_id or "," in self.experiment_id:
            raise ConfigError("experiment_id", "must be a non-empty string without commas")
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError("mode", f"unknown mode {self.mode!r}") from None
        _positive_int("instance_count", self.instance_count)
        _positive_int("calls_per_instance", self.calls_per_instance)
        _positive_int("iterations_per_call", self.iterations_per_call)
        _positive_int("bootstrap_replicates", self.bootstrap_replicates)
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int) or not 0 <= self.master_seed <= UINT64_MAX:
            raise ConfigError("master_seed", "must be an unsigned 64-bit integer")
        if not isinstance(self.confidence_level, (int, float)) or not 0.0 < self.confidence_level < 1.0:
            raise ConfigError("confidence_level", "must lie strictly between 0 and 1")
        if not isinstance(self.fail_threshold_pct, (int, float)) or self.fail_threshold_pct < 0:
            raise ConfigError("fail_threshold_pct", "must be >= 0")
        if not isinstance(self.target, TargetSpec):
            raise ConfigError("target", "must be a TargetSpec")

    @property
    def planned_pairs(self) -> int:
        return self.instance_count * self.calls_per_instance * self.iterations_per_call

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        if isinstance(data["target"], dict):
            data["target"] = TargetSpec.from_dict(data["target"])
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["target"] = self.target.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config", "must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        for key in ("experiment_id", "mode", "instance_count", "calls_per_instance", "iterations_per_call", "target"):
            if key not in data:
                raise ConfigError(key, "missing")
        values = dict(data)
        values["target"] = TargetSpec.from_dict(data["target"])
        return cls(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class MeasurementRecord:
    experiment_id: str
    mode: Mode
    instance_id: int
    call_index: int
    iteration_index: int
    version: int  # 1 or 2
    position: str  # "first" | "second"
    start_ns: int
    end_ns: int
    duration_ns: int
    status: str = "ok"  # "ok" | "error"

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.instance_id, self.call_index, self.iteration_index)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class MeasurementPair:
    instance_id: int
    call_index: int
    iteration_index: int
    first_version: int
    v1_duration_ns: int
    v2_duration_ns: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of records from one experiment.

    ``config`` and ``instance_map`` (platform-level instance id for every
    local ``instance_id``) are metadata; equality compares records only.
    """

    records: tuple[MeasurementRecord, ...] = ()
    config: ExperimentConfig | None = None
    instance_map: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.records == other.records

    def __len__(self):
        return len(self.records)

    @property
    def mode(self) -> Mode | None:
        if self.config is not None:
            return self.config.mode
        return self.records[0].mode if self.records else None

    @property
    def experiment_id(self) -> str | None:
        if self.config is not None:
            return self.config.experiment_id
        return self.records[0].experiment_id if self.records else None

    def grid(self) -> tuple[int, int, int]:
        """(K, C, i) from the config, or inferred from the largest observed indices."""
        if self.config is not None:
            c = self.config
            return c.instance_count, c.calls_per_instance, c.iterations_per_call
        if not self.records:
            return 0, 0, 0
        return (
            max(r.instance_id for r in self.records) + 1,
            max(r.call_index for r in self.records) + 1,
            max(r.iteration_index for r in self.records) + 1,
        )

    def index(self) -> dict[int, dict[int, dict[int, list[MeasurementRecord]]]]:
        """Grouping instance -> call -> iteration -> records (in file order)."""
        tree: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
        for record in self.records:
            tree[record.instance_id][record.call_index][record.iteration_index].append(record)
        return tree

    def durations(self, version: int, ok_only: bool = True) -> list[int]:
        return [r.duration_ns for r in self.records if r.version == version and (r.ok or not ok_only)]


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    record_index: int | None
    key: tuple[int, int, int] | None
    message: str

    def __str__(self):
        where = []
        if self.record_index is not None:
            where.append(f"record {self.record_index}")
        if self.key is not None:
            where.append("instance={} call={} iteration={}".format(*self.key))
        return f"{', '.join(where)}: {self.message}" if where else self.message


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    dropped_keys: tuple[tuple[int, int, int], ...]
    complete_keys: int

    @property
    def ok(self) -> bool:
        return not self.violations


def _record_violations(i: int, r: MeasurementRecord, bounds: tuple[int, int, int]) -> list[str]:
    problems = []
    if r.end_ns < r.start_ns:
        problems.append(f"end_ns {r.end_ns} < start_ns {r.start_ns}")
    elif r.duration_ns != r.end_ns - r.start_ns:
        problems.append(f"duration_ns {r.duration_ns} != end_ns - start_ns ({r.end_ns - r.start_ns})")
    elif r.ok and r.duration_ns <= 0:
        problems.append("ok record with non-positive duration")
    for name, value, bound in zip(("instance_id", "call_index", "iteration_index"), r.key, bounds):
        if not 0 <= value < bound:
            problems.append(f"{name} {value} outside [0, {bound})")
    if r.version not in (1, 2):
        problems.append(f"unknown version {r.version!r}")
    if r.position not in ("first", "second"):
        problems.append(f"unknown position {r.position!r}")
    if r.status not in ("ok", "error"):
        problems.append(f"unknown status {r.status!r}")
    return problems


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check every record and, for RMIT data, every (instance, call, iteration) key.

    Never raises: all problems end up in the report.
    """
    violations: list[Violation] = []
    bounds = dataset.grid()
    mode = dataset.mode
    exp_id = dataset.experiment_id

    for i, r in enumerate(dataset.records):
        for problem in _record_violations(i, r, bounds):
            violations.append(Violation(i, r.key, problem))
        if r.experiment_id != exp_id:
            violations.append(Violation(i, r.key, f"experiment_id {r.experiment_id!r} differs from {exp_id!r}"))
        if r.mode != mode:
            violations.append(Violation(i, r.key, f"mode {r.mode.value} differs from {mode.value}"))

    dropped: list[tuple[int, int, int]] = []
    complete = 0
    if mode is Mode.RMIT:
        by_key: dict[tuple[int, int, int], list[tuple[int, MeasurementRecord]]] = defaultdict(list)
        for i, r in enumerate(dataset.records):
            by_key[r.key].append((i, r))
        K, C, I = bounds
        expected = [(k, c, it) for k in range(K) for c in range(C) for it in range(I)]
        for key in sorted(set(expected) | set(by_key)):
            entries = by_key.get(key, [])
            versions = [r.version for _, r in entries]
            if versions.count(1) > 1 or versions.count(2) > 1:
                violations.append(Violation(None, key, "duplicate record for a version"))
            positions = [r.position for _, r in entries]
            if len(entries) == 2 and positions[0] == positions[1]:
                violations.append(Violation(entries[1][0], key, f"both records at position {positions[0]}"))
            if _complete(entries):
                complete += 1
            else:
                dropped.append(key)
    elif mode is not None:
        wanted = 1 if mode is Mode.V1_ONLY else 2
        for i, r in enumerate(dataset.records):
            if r.version != wanted:
                violations.append(Violation(i, r.key, f"version {r.version} in {mode.value} dataset"))
        complete = sum(1 for r in dataset.records if r.ok)

    return ValidationReport(tuple(violations), tuple(dropped), complete)


def _complete(entries: Sequence[tuple[int, MeasurementRecord]]) -> bool:
    if len(entries) != 2:
        return False
    (_, a), (_, b) = entries
    return {a.version, b.version} == {1, 2} and a.ok and b.ok


def pair_records(dataset: Dataset) -> list[MeasurementPair]:
    """Match v1/v2 records per key; keys with a missing, duplicate or failed side are dropped."""
    if dataset.mode is not Mode.RMIT:
        raise ValueError(f"pairing needs an rmit dataset, got {dataset.mode and dataset.mode.value}")
    by_key: dict[tuple[int, int, int], list[tuple[int, MeasurementRecord]]] = defaultdict(list)
    for i, r in enumerate(dataset.records):
        by_key[r.key].append((i, r))
    pairs = []
    for key in sorted(by_key):
        entries = by_key[key]
        if not _complete(entries):
            continue
        v1 = next(r for _, r in entries if r.version == 1)
        v2 = next(r for _, r in entries if r.version == 2)
        first = v1.version if v1.position == "first" else v2.version
        pairs.append(MeasurementPair(*key, first_version=first, v1_duration_ns=v1.duration_ns, v2_duration_ns=v2.duration_ns))
    return pairs


# --- CSV persistence --------------------------------------------------------


def format_dataset(dataset: Dataset) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_HEADER) + "\n")
    for r in dataset.records:
        row = (
            r.experiment_id, r.mode.value, r.instance_id, r.call_index, r.iteration_index,
            r.version, r.position, r.start_ns, r.end_ns, r.duration_ns, r.status,
        )
        out.write(",".join(str(v) for v in row) + "\n")
    return out.getvalue()


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_dataset(dataset))


_INT_FIELDS = ("instance_id", "call_index", "iteration_index", "start_ns", "end_ns", "duration_ns")


def parse_dataset(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(1, "missing header")
    header = lines[0].rstrip("\r").split(",")
    if tuple(header) != CSV_HEADER:
        for pos, expected in enumerate(CSV_HEADER):
            got = header[pos] if pos < len(header) else None
            if got != expected:
                raise DatasetFormatError(1, f"header column {pos + 1} is {got!r}, expected {expected!r}")
        raise DatasetFormatError(1, f"unexpected extra header column {header[len(CSV_HEADER)]!r}")

    records = []
    for lineno, line in enumerate(csv.reader(lines[1:]), start=2):
        if len(line) != len(CSV_HEADER):
            raise DatasetFormatError(lineno, f"expected {len(CSV_HEADER)} fields, got {len(line)}")
        row = dict(zip(CSV_HEADER, line))
        values: dict[str, Any] = {"experiment_id": row["experiment_id"]}
        try:
            values["mode"] = Mode(row["mode"])
        except ValueError:
            raise DatasetFormatError(lineno, f"unknown mode {row['mode']!r}") from None
        for name in _INT_FIELDS:
            try:
                values[name] = int(row[name])
            except ValueError:
                raise DatasetFormatError(lineno, f"{name} is not an integer: {row[name]!r}") from None
        if row["version"] not in ("1", "2"):
            raise DatasetFormatError(lineno, f"unknown version {row['version']!r}")
        values["version"] = int(row["version"])
        if row["position"] not in ("first", "second"):
            raise DatasetFormatError(lineno, f"unknown position {row['position']!r}")
        values["position"] = row["position"]
        if row["status"] not in ("ok", "error"):
            raise DatasetFormatError(lineno, f"unknown status {row['status']!r}")
        values["status"] = row["status"]
        records.append(MeasurementRecord(**values))
    return Dataset(tuple(records))


def read_dataset(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_dataset(f.read())

