import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from rmitbench.harness import (
    GridCell,
    HttpRunner,
    RunnerError,
    StudyReport,
    execute_local,
    inject_regression,
    run_experiment,
    run_grid,
    run_traditional_study,
)
from rmitbench.measurements import ExperimentConfig, Mode, TargetSpec, pair_records, validate_dataset
from rmitbench.scheduler import generate_plan
from rmitbench.stats import analyze_traditional

from conftest import NOISE_FREE, simulated_config


def test_noise_free_rmit_pairs_are_exact():
    ds = run_experiment(simulated_config(5, 10, 3, platform=NOISE_FREE))
    pairs = pair_records(ds)
    assert len(pairs) == 150
    assert {(p.v1_duration_ns, p.v2_duration_ns) for p in pairs} == {(100_000_000, 105_000_000)}


def test_single_version_mode_repeats_each_call():
    ds = run_experiment(simulated_config(5, 10, 3, platform=NOISE_FREE, mode="v1_only"))
    assert len(ds) == 150
    assert all(r.version == 1 for r in ds.records)
    assert sorted(r.key for r in ds.records) == [(k, c, i) for k in range(5) for c in range(10) for i in range(3)]
    assert validate_dataset(ds).ok


@pytest.mark.parametrize("K,C,i", [(1, 1, 1), (3, 4, 2), (5, 5, 3)])
def test_record_conservation_and_schedule_fidelity(K, C, i):
    cfg = simulated_config(K, C, i, seed=K * 100 + C)
    ds = run_experiment(cfg)
    assert len(ds) == 2 * K * C * i
    plan = generate_plan(K, C, i, cfg.master_seed)
    by_key = {}
    for r in ds.records:
        by_key.setdefault(r.key, []).append((r.version, r.position))
    for p in plan.invocations:
        first, second = p.order.versions
        assert by_key[(p.instance_id, p.call_index, p.iteration_index)] == [(first, "first"), (second, "second")]


def test_round_robin_and_sequential_orders():
    ds = run_experiment(simulated_config(3, 2, 1, platform=NOISE_FREE))
    visit = [(r.instance_id, r.call_index) for r in sorted(ds.records, key=lambda r: r.start_ns)][::2]
    assert visit == [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    ds = run_experiment(simulated_config(3, 2, 1, platform=NOISE_FREE), schedule="sequential")
    visit = [(r.instance_id, r.call_index) for r in sorted(ds.records, key=lambda r: r.start_ns)][::2]
    assert visit == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]
    with pytest.raises(ValueError):
        run_experiment(simulated_config(1, 1, 1), schedule="random")


def test_think_time_advances_virtual_clock():
    ds = run_experiment(simulated_config(1, 2, 1, platform=NOISE_FREE), think_time_s=1.0)
    starts = sorted(r.start_ns for r in ds.records)
    # first call takes 100 + 105 ms, then one second of think time
    assert starts[2] == 1_205_000_000


def test_simulated_runs_are_bit_identical():
    cfg = simulated_config(4, 6, 3, seed=77)
    assert run_experiment(cfg).records == run_experiment(cfg).records
    assert run_experiment(cfg).records != run_experiment(cfg.replace(master_seed=78)).records


def test_parallel_mode_keeps_attribution():
    cfg = simulated_config(4, 5, 3, seed=3)
    serial = run_experiment(cfg)
    parallel = run_experiment(cfg, parallel=True)
    assert len(parallel) == len(serial)
    keys = [(r.key, r.position) for r in parallel.records]
    assert keys == sorted(keys, key=lambda k: (k[0], k[1] != "first"))
    assert {(r.key, r.version, r.position) for r in parallel.records} == {(r.key, r.version, r.position) for r in serial.records}
    assert validate_dataset(parallel).ok


def test_traditional_study_noise_free():
    cfg = simulated_config(5, 10, 3, platform=NOISE_FREE)
    d1, d2 = run_traditional_study(cfg)
    assert d1.mode is Mode.V1_ONLY and d2.mode is Mode.V2_ONLY
    assert set(d1.durations(1)) == {100_000_000} and set(d2.durations(2)) == {105_000_000}
    est = analyze_traditional(d1, d2, replicates=200)
    assert est.median_change_pct == pytest.approx(5.0)
    assert est.ci_width == pytest.approx(0.0, abs=1e-12)


def test_traditional_study_uses_fresh_instances():
    cfg = simulated_config(5, 4, 3, seed=9)
    d1, d2 = run_traditional_study(cfg)
    assert set(d1.instance_map).isdisjoint(d2.instance_map)
    assert len(d1) + len(d2) == 2 * cfg.planned_pairs
    assert validate_dataset(d1).ok and validate_dataset(d2).ok


def test_fairness_between_methodologies():
    cfg = simulated_config(3, 4, 3, seed=1)
    rmit = run_experiment(cfg)
    d1, d2 = run_traditional_study(cfg)
    for version in (1, 2):
        assert sum(r.version == version for r in rmit.records) == cfg.planned_pairs
    assert len(d1) == len(d2) == cfg.planned_pairs


def test_inject_regression():
    target = inject_regression(simulated_config().target, 5)
    assert target.v2["values"] == 5_250_000
    with pytest.raises(ValueError):
        inject_regression(TargetSpec("local_process", {"command": "true"}, {"command": "true"}), 5)


def test_grid_rows_and_failures():
    base = simulated_config(bootstrap_replicates=200)
    grid = [{"K": K, "C": C, "regression_pct": r} for K in (5, 10) for C in (5, 10, 25) for r in (0, 5)]
    report = run_grid(grid, base, label="t")
    assert len(report.rows) == 24
    assert not report.failed_cells
    assert {row.mode for row in report.rows} == {"rmit", "traditional"}
    assert all(row.ci_width == row.ci_high - row.ci_low >= 0 for row in report.rows)

    broken = run_grid([GridCell(2, 2, 0), GridCell(0, 2, 0), GridCell(2, 3, 5)], base)
    assert len(broken.rows) == 4
    assert [c["cell"] for c in broken.failed_cells] == [1]


def test_grid_needs_cells():
    with pytest.raises(ValueError):
        run_grid([], simulated_config())


def test_grid_is_deterministic():
    base = simulated_config(bootstrap_replicates=200, seed=5)
    grid = [GridCell(2, 3, 5)]
    assert run_grid(grid, base).to_json() == run_grid(grid, base).to_json()


def test_report_json_round_trip():
    report = run_grid([GridCell(2, 2, 5)], simulated_config(bootstrap_replicates=100))
    again = StudyReport.from_json(report.to_json())
    assert again.rows == report.rows
    assert report.to_csv().splitlines()[0] == "label,mode,K,C,i,injected_pct,median_pct,ci_low,ci_high,ci_width"


# --- local processes -----------------------------------------------------------


def test_execute_local_sleep():
    ex = execute_local("sleep 0.1")
    assert ex.status == "ok"
    assert 100_000_000 <= ex.duration_ns <= 250_000_000


def test_execute_local_failure_and_timeout():
    ex = execute_local([sys.executable, "-c", "raise SystemExit(1)"])
    assert ex.status == "error" and ex.duration_ns > 0
    ex = execute_local("sleep 5", timeout_s=0.2)
    assert ex.status == "error"
    assert ex.duration_ns < 2_000_000_000


def test_execute_local_missing_binary():
    with pytest.raises(RunnerError, match="cannot start"):
        execute_local(["/nonexistent/binary-xyz"])


def _local_config(v1_command, v2_command, K=1, C=2, i=2):
    target = TargetSpec("local_process", {"command": v1_command}, {"command": v2_command}, {"timeout_s": 10})
    return ExperimentConfig("local", "rmit", K, C, i, target)


def test_local_failure_drops_one_pair(tmp_path):
    counter = tmp_path / "count"
    script = (
        "import pathlib, sys; p = pathlib.Path(sys.argv[1]); "
        "n = int(p.read_text()) if p.exists() else 0; p.write_text(str(n + 1)); sys.exit(1 if n == 2 else 0)"
    )
    cfg = _local_config([sys.executable, "-c", "pass"], [sys.executable, "-c", script, str(counter)])
    ds = run_experiment(cfg)
    assert len(ds) == 8
    assert sum(r.status == "error" for r in ds.records) == 1
    assert len(pair_records(ds)) == 3
    assert validate_dataset(ds).ok


def test_local_missing_binary_aborts():
    with pytest.raises(RunnerError):
        run_experiment(_local_config(["/nonexistent/xyz"], ["/nonexistent/xyz"]))


def test_local_config_needs_commands():
    target = TargetSpec("local_process", {"cmd": "true"}, {"command": "true"})
    with pytest.raises(RunnerError):
        run_experiment(ExperimentConfig("x", "rmit", 1, 1, 1, target))


# --- HTTP ----------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.seen.append(body)
        code = 500 if body.get("fail") else 200
        self.send_response(code)
        self.send_header("Content-Length", "2")
        self.end_headers()
        self.wfile.write(b"ok")

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    _Handler.seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/"
    server.shutdown()
    server.server_close()


def test_http_runner_posts_version_selector(http_server):
    target = TargetSpec("http_endpoint", {"url": http_server}, {"url": http_server, "body": {"fail": True}})
    ds = run_experiment(ExperimentConfig("http", "rmit", 2, 2, 1, target))
    assert len(ds) == 8
    assert {b["version"] for b in _Handler.seen} == {"v1", "v2"}
    assert {r.status for r in ds.records if r.version == 1} == {"ok"}
    assert {r.status for r in ds.records if r.version == 2} == {"error"}
    assert pair_records(ds) == []


def test_http_unreachable_endpoint_is_recorded_as_error():
    runner = HttpRunner({"url": "http://127.0.0.1:9/"}, {"url": "http://127.0.0.1:9/"}, timeout_s=1)
    runner.deploy(1)
    assert runner.execute(0, 1).status == "error"


def test_http_endpoint_list_limits_instances(http_server):
    runner = HttpRunner({}, {}, endpoints=[http_server, http_server])
    assert runner.deploy(2) == [0, 1]
    with pytest.raises(RunnerError):
        runner.deploy(1)
