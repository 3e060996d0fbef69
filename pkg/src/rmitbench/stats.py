"""Median performance change and its hierarchical percentile-bootstrap interval.

Resampling is three-level (instances, then calls inside each drawn instance,
then iterations inside each drawn call). Every draw of a replicate has a fixed
address in that replicate's SplitMix64 stream:

    instance slot a          -> position a
    call slot (a, b)         -> position K + a*Cmax + b
    iteration slot (a, b, c) -> position K + K*Cmax + (a*Cmax + b)*Imax + c

where K is the number of instances and Cmax/Imax the largest call/iteration
counts. ``hierarchical_resample`` walks this layout one draw at a time;
``bootstrap_ci`` evaluates whole batches of replicates with numpy and produces
exactly the same statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .measurements import Dataset, MeasurementPair, Mode, pair_records
from .rng import (
    TAG_BOOTSTRAP,
    TAG_BOOTSTRAP_V1,
    TAG_BOOTSTRAP_V2,
    SplitMix64,
    derive_seed,
    derive_seeds,
    stream_values,
    to_index,
    to_index_array,
)

DEFAULT_REPLICATES = 10_000
DEFAULT_LEVEL = 0.99
MIN_REPLICATES = 100

# Upper bound on padded leaves held in memory per bootstrap batch.
_BATCH_ELEMENTS = 2_000_000

Nested = tuple[tuple[tuple[float, ...], ...], ...]


class Verdict(str, Enum):
    REGRESSION = "regression"
    IMPROVEMENT = "improvement"
    NO_CHANGE = "no_change"


def median(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("median of an empty sequence")
    xs = sorted(values)
    n = len(xs)
    mid = n // 2
    if n % 2:
        return xs[mid]
    return (xs[mid - 1] + xs[mid]) / 2


def percentile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between closest ranks at h = (n - 1) * p."""
    if len(values) == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    xs = sorted(values)
    h = (len(xs) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def change_statistic(v1_durations: Sequence[float], v2_durations: Sequence[float]) -> float:
    """Relative change of the v2 median over the v1 median, in percent."""
    if len(v1_durations) == 0 or len(v2_durations) == 0:
        raise ValueError("both versions need at least one duration")
    m1 = median(v1_durations)
    if m1 == 0:
        raise ValueError("median of version 1 is zero")
    m2 = median(v2_durations)
    return 100.0 * (m2 - m1) / m1


@dataclass(frozen=True)
class HierarchicalSample:
    """Durations nested instance -> call -> iteration for both versions.

    When ``paired`` is set, ``v1`` and ``v2`` have identical shapes and leaf
    ``[a][b][c]`` of each forms one measurement pair.
    """

    v1: Nested
    v2: Nested
    paired: bool

    def __post_init__(self):
        v1 = _freeze(self.v1, "v1")
        v2 = _freeze(self.v2, "v2")
        if self.paired and _shape(v1) != _shape(v2):
            raise ValueError("paired sample needs identical v1/v2 shapes")
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)

    @classmethod
    def from_pairs(cls, pairs: Sequence[MeasurementPair]) -> "HierarchicalSample":
        tree: dict[int, dict[int, list[MeasurementPair]]] = {}
        for p in sorted(pairs, key=lambda p: (p.instance_id, p.call_index, p.iteration_index)):
            tree.setdefault(p.instance_id, {}).setdefault(p.call_index, []).append(p)
        v1 = [[[float(p.v1_duration_ns) for p in calls[c]] for c in sorted(calls)] for _, calls in sorted(tree.items())]
        v2 = [[[float(p.v2_duration_ns) for p in calls[c]] for c in sorted(calls)] for _, calls in sorted(tree.items())]
        return cls(v1, v2, paired=True)

    @classmethod
    def from_datasets(cls, dataset_v1: Dataset, dataset_v2: Dataset) -> "HierarchicalSample":
        """Unpaired sample from two single-version datasets; error records are skipped."""
        return cls(_nest(dataset_v1, 1), _nest(dataset_v2, 2), paired=False)

    def leaves(self, version: int) -> list[float]:
        tree = self.v1 if version == 1 else self.v2
        return [x for calls in tree for its in calls for x in its]

    @property
    def n_pairs(self) -> int | None:
        return len(self.leaves(1)) if self.paired else None


def _freeze(tree, name: str) -> Nested:
    frozen = tuple(tuple(tuple(float(x) for x in its) for its in calls) for calls in tree)
    if not frozen or any(not calls for calls in frozen) or any(not its for calls in frozen for its in calls):
        raise ValueError(f"{name}: every instance, call and iteration level must be non-empty")
    return frozen


def _shape(tree: Nested) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(len(its) for its in calls) for calls in tree)


def _nest(dataset: Dataset, version: int) -> list[list[list[float]]]:
    tree: dict[int, dict[int, list[tuple[int, float]]]] = {}
    for r in dataset.records:
        if r.version == version and r.ok:
            tree.setdefault(r.instance_id, {}).setdefault(r.call_index, []).append((r.iteration_index, float(r.duration_ns)))
    return [[[d for _, d in sorted(calls[c])] for c in sorted(calls)] for _, calls in sorted(tree.items())]


# --- resampling -------------------------------------------------------------


def _draw_indices(shape, stream: SplitMix64):
    """Resampled (instance, [(call, [iteration, ...]), ...]) index tree."""
    K = len(shape)
    c_max = max(len(calls) for calls in shape)
    i_max = max(n for calls in shape for n in calls)
    call_base = K
    iter_base = K + K * c_max
    tree = []
    for a in range(K):
        inst = to_index(stream.value_at(a), K)
        calls = []
        for b in range(len(shape[inst])):
            call = to_index(stream.value_at(call_base + a * c_max + b), len(shape[inst]))
            n_it = shape[inst][call]
            its = [to_index(stream.value_at(iter_base + (a * c_max + b) * i_max + c), n_it) for c in range(n_it)]
            calls.append((call, its))
        tree.append((inst, calls))
    return tree


def _apply(tree: Nested, picks) -> Nested:
    return tuple(tuple(tuple(tree[inst][call][it] for it in its) for call, its in calls) for inst, calls in picks)


def hierarchical_resample(
    sample: HierarchicalSample, stream: SplitMix64, stream_v2: SplitMix64 | None = None
) -> HierarchicalSample:
    """One hierarchical bootstrap resample.

    Paired samples use ``stream`` for both versions so pairs travel together.
    Unpaired samples resample v2 with ``stream_v2``, which is then required.
    """
    picks = _draw_indices(_shape(sample.v1), stream)
    if sample.paired:
        return HierarchicalSample(_apply(sample.v1, picks), _apply(sample.v2, picks), paired=True)
    if stream_v2 is None:
        raise ValueError("unpaired resampling needs an independent stream for version 2")
    picks_v2 = _draw_indices(_shape(sample.v2), stream_v2)
    return HierarchicalSample(_apply(sample.v1, picks), _apply(sample.v2, picks_v2), paired=False)


class _Padded:
    """A nested tree padded to (K, Cmax, Imax) with NaN in unused slots."""

    def __init__(self, tree: Nested):
        self.K = len(tree)
        self.c_max = max(len(calls) for calls in tree)
        self.i_max = max(len(its) for calls in tree for its in calls)
        self.n_calls = np.array([len(calls) for calls in tree], dtype=np.int64)
        self.n_iters = np.zeros((self.K, self.c_max), dtype=np.int64)
        self.values = np.full((self.K, self.c_max, self.i_max), np.nan)
        for a, calls in enumerate(tree):
            for b, its in enumerate(calls):
                self.n_iters[a, b] = len(its)
                self.values[a, b, : len(its)] = its
        K, cm, im = self.K, self.c_max, self.i_max
        self._call_pos = (K + np.arange(K)[:, None] * cm + np.arange(cm)[None, :]).astype(np.uint64)
        slot = np.arange(K)[:, None] * cm + np.arange(cm)[None, :]
        self._iter_pos = (K + K * cm + slot[:, :, None] * im + np.arange(im)[None, None, :]).astype(np.uint64)

    @property
    def leaves_per_replicate(self) -> int:
        return self.K * self.c_max * self.i_max

    def draw(self, seeds: np.ndarray):
        """Index arrays (inst, call, iter, valid) for one replicate per seed."""
        s = seeds[:, None]
        inst = to_index_array(stream_values(s, np.arange(self.K, dtype=np.uint64)[None, :]), self.K)
        n_calls = self.n_calls[inst]  # (R, K)
        call_raw = stream_values(s[:, :, None], self._call_pos[None, :, :])
        call = to_index_array(call_raw, n_calls[:, :, None])  # (R, K, Cmax)
        call_valid = np.arange(self.c_max)[None, None, :] < n_calls[:, :, None]
        n_it = np.where(call_valid, self.n_iters[inst[:, :, None], call], 0)  # (R, K, Cmax)
        it_raw = stream_values(s[:, :, None, None], self._iter_pos[None, :, :, :])
        it = to_index_array(it_raw, n_it[..., None])
        valid = np.arange(self.i_max)[None, None, None, :] < n_it[..., None]
        return inst[:, :, None, None], call[:, :, :, None], it, valid

    def gather(self, idx) -> np.ndarray:
        inst, call, it, valid = idx
        picked = self.values[inst, call, it]
        picked[~valid] = np.nan
        return picked.reshape(picked.shape[0], -1)


def _row_medians(x: np.ndarray) -> np.ndarray:
    """Per-row median ignoring NaN padding; even counts average the middle pair."""
    s = np.sort(x, axis=1)
    n = np.count_nonzero(~np.isnan(s), axis=1)
    lo = ((n - 1) // 2)[:, None]
    hi = (n // 2)[:, None]
    return (np.take_along_axis(s, lo, axis=1)[:, 0] + np.take_along_axis(s, hi, axis=1)[:, 0]) / 2


def replicate_seeds(seed: int, replicates: int, paired: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-replicate stream seeds: replicate r always uses sub-stream r."""
    r = np.arange(replicates, dtype=np.uint64)
    if paired:
        return derive_seeds(seed, r), None
    return derive_seeds(derive_seed(seed, TAG_BOOTSTRAP_V1), r), derive_seeds(derive_seed(seed, TAG_BOOTSTRAP_V2), r)


def replicate_streams(seed: int, r: int, paired: bool) -> tuple[SplitMix64, SplitMix64 | None]:
    """Scalar streams of replicate ``r``, matching replicate_seeds()."""
    if paired:
        return SplitMix64(derive_seed(seed, r)), None
    return (
        SplitMix64(derive_seed(derive_seed(seed, TAG_BOOTSTRAP_V1), r)),
        SplitMix64(derive_seed(derive_seed(seed, TAG_BOOTSTRAP_V2), r)),
    )


def bootstrap_statistics(sample: HierarchicalSample, replicates: int, seed: int) -> np.ndarray:
    """change_statistic of every bootstrap replicate, in replicate order."""
    p1 = _Padded(sample.v1)
    p2 = _Padded(sample.v2)
    seeds_v1, seeds_v2 = replicate_seeds(seed, replicates, sample.paired)
    per_batch = max(1, _BATCH_ELEMENTS // max(p1.leaves_per_replicate, p2.leaves_per_replicate))
    out = np.empty(replicates)
    for start in range(0, replicates, per_batch):
        stop = min(start + per_batch, replicates)
        idx1 = p1.draw(seeds_v1[start:stop])
        idx2 = idx1 if sample.paired else p2.draw(seeds_v2[start:stop])
        m1 = _row_medians(p1.gather(idx1))
        m2 = _row_medians(p2.gather(idx2))
        out[start:stop] = 100.0 * (m2 - m1) / m1
    return out


@dataclass(frozen=True)
class ChangeEstimate:
    median_change_pct: float
    ci_low_pct: float
    ci_high_pct: float
    confidence_level: float
    replicates_used: int
    verdict: Verdict
    seed: int
    n_pairs: int | None = None
    n_v1: int = 0
    n_v2: int = 0

    @property
    def ci_width(self) -> float:
        return self.ci_high_pct - self.ci_low_pct

    def to_report(self) -> dict:
        report = {
            "median_change_pct": self.median_change_pct,
            "ci_low_pct": self.ci_low_pct,
            "ci_high_pct": self.ci_high_pct,
            "confidence_level": self.confidence_level,
            "n_pairs": self.n_pairs,
            "replicates": self.replicates_used,
            "verdict": self.verdict.value,
            "seed": self.seed,
        }
        if self.n_pairs is None:
            report["n_v1"] = self.n_v1
            report["n_v2"] = self.n_v2
        return report


def classify(ci_low_pct: float, ci_high_pct: float, fail_threshold_pct: float = 0.0) -> Verdict:
    if ci_low_pct > fail_threshold_pct:
        return Verdict.REGRESSION
    if ci_high_pct < -fail_threshold_pct:
        return Verdict.IMPROVEMENT
    return Verdict.NO_CHANGE


def bootstrap_ci(
    sample: HierarchicalSample,
    replicates: int = DEFAULT_REPLICATES,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    fail_threshold_pct: float = 0.0,
) -> ChangeEstimate:
    if replicates < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} bootstrap replicates, got {replicates}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    v1, v2 = sample.leaves(1), sample.leaves(2)
    estimate = change_statistic(v1, v2)
    stats = bootstrap_statistics(sample, replicates, seed).tolist()
    tail = (1.0 - level) / 2
    low = percentile(stats, tail)
    high = percentile(stats, 1.0 - tail)
    return ChangeEstimate(
        median_change_pct=estimate,
        ci_low_pct=low,
        ci_high_pct=high,
        confidence_level=level,
        replicates_used=replicates,
        verdict=classify(low, high, fail_threshold_pct),
        seed=seed,
        n_pairs=sample.n_pairs,
        n_v1=len(v1),
        n_v2=len(v2),
    )


def analyze_rmit(
    dataset: Dataset,
    replicates: int = DEFAULT_REPLICATES,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    fail_threshold_pct: float = 0.0,
) -> ChangeEstimate:
    """Paired analysis of an RMIT dataset; ``seed`` is the experiment master seed."""
    pairs = pair_records(dataset)
    if not pairs:
        raise ValueError("dataset has no complete measurement pairs")
    estimate = bootstrap_ci(
        HierarchicalSample.from_pairs(pairs), replicates, level, derive_seed(seed, TAG_BOOTSTRAP), fail_threshold_pct
    )
    return replace(estimate, seed=seed)


def analyze_traditional(
    dataset_v1: Dataset,
    dataset_v2: Dataset,
    replicates: int = DEFAULT_REPLICATES,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    fail_threshold_pct: float = 0.0,
) -> ChangeEstimate:
    """Unpaired analysis of separately benchmarked v1 and v2 datasets."""
    if dataset_v1.mode is not Mode.V1_ONLY or dataset_v2.mode is not Mode.V2_ONLY:
        raise ValueError("traditional analysis needs one v1_only and one v2_only dataset")
    if not any(r.ok for r in dataset_v1.records) or not any(r.ok for r in dataset_v2.records):
        raise ValueError("both datasets need at least one successful record")
    estimate = bootstrap_ci(
        HierarchicalSample.from_datasets(dataset_v1, dataset_v2),
        replicates, level, derive_seed(seed, TAG_BOOTSTRAP), fail_threshold_pct,
    )
    return replace(estimate, seed=seed)
