"""Acceptance suite: one test per criterion, each printing a pass/fail line in the summary."""

import sys
import time

import pytest

from rmitbench.cli import main
from rmitbench.harness import GridCell, run_experiment, run_grid
from rmitbench.measurements import ExperimentConfig, TargetSpec
from rmitbench.scheduler import generate_plan, order_counts
from rmitbench.stats import HierarchicalSample, Verdict, analyze_rmit, bootstrap_ci

from conftest import NOISE_FREE, simulated_config
from test_stats import enumerate_paired_resamples, quantile_from_distribution

SEEDS = range(100)


def _rmit_estimates(v2_values):
    start = time.perf_counter()
    estimates = []
    for seed in SEEDS:
        cfg = simulated_config(5, 10, 3, v2=v2_values, seed=seed)
        estimates.append(analyze_rmit(run_experiment(cfg), replicates=10_000, level=0.99, seed=seed))
    return estimates, time.perf_counter() - start


def test_criterion_1_noise_free_exactness(acceptance):
    start = time.perf_counter()
    report = run_grid([GridCell(5, 10, 5)], simulated_config(5, 10, 3, v2=5_000_000, platform=NOISE_FREE))
    elapsed = time.perf_counter() - start
    ok = len(report.rows) == 2 and elapsed < 1.0
    for row in report.rows:
        ok = ok and row.median_pct == pytest.approx(5.0) and row.ci_width == pytest.approx(0.0, abs=1e-12)
    detail = ", ".join(f"{r.mode} {r.median_pct:+.4f}% width {r.ci_width:.2e}" for r in report.rows)
    acceptance(1, ok, f"{detail}; {elapsed:.2f}s")
    assert ok


@pytest.mark.slow
def test_criterion_2_aa_straddles_zero(acceptance):
    estimates, elapsed = _rmit_estimates(5_000_000)
    straddle = sum(e.ci_low_pct <= 0.0 <= e.ci_high_pct for e in estimates)
    ok = straddle >= 95 and elapsed < 120
    acceptance(2, ok, f"{straddle}/100 A/A intervals straddle 0; {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_3_regression_detected(acceptance):
    estimates, elapsed = _rmit_estimates(5_250_000)
    # the interval must clear zero and lie within 2 points of the injected +5%
    hits = sum(e.ci_low_pct > 0.0 and e.ci_low_pct - 2.0 <= 5.0 <= e.ci_high_pct + 2.0 for e in estimates)
    ok = hits >= 99 and elapsed < 120
    acceptance(3, ok, f"{hits}/100 intervals exclude 0 and hold 5 +/- 2; {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_4_rmit_narrower_than_traditional(acceptance):
    start = time.perf_counter()
    grid = [GridCell(K, C, 5) for K in (5, 10) for C in (5, 10, 25)]
    report = run_grid(grid, simulated_config(seed=20231), label="efficiency")
    elapsed = time.perf_counter() - start
    widths = {}
    for row in report.rows:
        widths.setdefault((row.K, row.C), {})[row.mode] = row.ci_width
    ratios = [w["traditional"] / w["rmit"] for w in widths.values()]
    narrower = sum(w["rmit"] < w["traditional"] for w in widths.values())
    mean_ratio = sum(ratios) / len(ratios)
    ok = len(widths) == 6 and narrower == 6 and mean_ratio >= 2 and elapsed < 300
    acceptance(4, ok, f"RMIT narrower in {narrower}/6 cells, mean ratio {mean_ratio:.2f}; {elapsed:.1f}s")
    assert ok


def test_criterion_5_bootstrap_matches_enumeration(acceptance):
    v1, v2 = [[[100.0], [110.0]]], [[[105.0], [115.0]]]
    outcomes = enumerate_paired_resamples(v1, v2)
    lo, hi = quantile_from_distribution(outcomes, 0.005), quantile_from_distribution(outcomes, 0.995)
    est = bootstrap_ci(HierarchicalSample(v1, v2, paired=True), 100_000, 0.99, seed=11)
    err = max(abs(est.ci_low_pct - lo), abs(est.ci_high_pct - hi))
    ok = err <= 0.1
    acceptance(5, ok, f"bootstrap [{est.ci_low_pct:.4f}, {est.ci_high_pct:.4f}] vs enumerated [{lo:.4f}, {hi:.4f}]")
    assert ok


def test_criterion_6_scheduler_properties(acceptance):
    small, large = generate_plan(5, 5, 3, 7), generate_plan(10, 25, 3, 7)
    big = generate_plan(10, 100, 10, 12345)
    v1_first, _ = order_counts(big)
    fraction = v1_first / len(big.invocations)
    repeat = generate_plan(10, 100, 10, 12345)
    ok = (
        len(small.invocations) == 75
        and len(large.invocations) == 750
        and len(big.invocations) == 10_000
        and 0.47 <= fraction <= 0.53
        and repeat.to_json() == big.to_json()
    )
    acceptance(6, ok, f"75/750 pairs, V1First fraction {fraction:.4f} over 10000, repeatable")
    assert ok


def test_criterion_7_study_is_byte_identical(acceptance, tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["study", "--out", str(out)]) == 0
        outputs.append(((out / "report.csv").read_bytes(), (out / "report.json").read_bytes()))
    ok = outputs[0] == outputs[1]
    acceptance(7, ok, "report.csv and report.json identical across two runs")
    assert ok


@pytest.mark.environment
def test_criterion_8_local_pi_estimator(acceptance):
    def command(values):
        return {"command": [sys.executable, "-m", "rmitbench.workload", "--values", str(values)]}

    target = TargetSpec("local_process", command(500_000), command(525_000), {"timeout_s": 60})
    cfg = ExperimentConfig("pi-smoke", "rmit", 1, 10, 3, target, master_seed=1)
    est = analyze_rmit(run_experiment(cfg), replicates=10_000, level=0.99, seed=1)
    ok = est.verdict is Verdict.REGRESSION and est.ci_low_pct > 0
    acceptance(8, ok, f"{est.median_change_pct:+.2f}% [{est.ci_low_pct:+.2f}, {est.ci_high_pct:+.2f}] {est.verdict.value}")
    assert ok
