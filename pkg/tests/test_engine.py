import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_capacity, check_dependencies, flat_graph, make_run
from magcal.engine import (
    ClusterSpec,
    LocalBackend,
    Manifest,
    ReplayBackend,
    RunReport,
    Unschedulable,
    WorkflowFailed,
    allocated_hours,
    build_dag,
    execute,
    makespan,
    run_schedule,
)
from magcal.engine.accounting import TABLE_ROWS, TOTAL_ROW, comparison_rows, format_table, percent_change
from magcal.engine.dag import DEFAULT_REQUESTS, KINDS, TASKS, TaskGraph, abstract_tasks, Instance
from magcal.engine.scheduler import TaskRun

MONTHS = [f"2010-{m:02d}" for m in range(1, 13)]


# -- graph -------------------------------------------------------------------------

def test_build_dag_counts():
    assert len(build_dag(["2010-01"])) == 7
    g = build_dag(MONTHS)
    assert len(g) == 62
    assert g.in_degree("preprocessing2", "all") == 12
    assert g.in_degree("model_training", "all") == 12
    with pytest.raises(ValueError):
        build_dag(["2010-01", "2010-01"])
    with pytest.raises(ValueError):
        build_dag([])


def test_build_dag_edges_exactly():
    months = ["2010-01", "2010-02"]
    g = build_dag(months)
    expected = set()
    for m in months:
        expected |= {
            (("data_preparation", m), ("preprocessing1", m)),
            (("preprocessing1", m), ("preprocessing2", "all")),
            (("preprocessing2", "all"), ("preprocessing3", m)),
            (("data_preparation", m), ("preprocessing3", m)),
            (("preprocessing3", m), ("model_training", "all")),
            (("model_training", "all"), ("model_finetuning", m)),
            (("preprocessing3", m), ("model_finetuning", m)),
            (("model_finetuning", m), ("dataset_publication", m)),
        }
    assert set(g.edges()) == expected
    g.check_acyclic()


def test_abstract_tasks():
    tasks = abstract_tasks()
    assert list(tasks) == list(TASKS)
    gathers = {n for n, t in tasks.items() if t.kind == "gather"}
    assert gathers == {"preprocessing2", "model_training"}
    assert all(tasks[n].cpu_request == 1 for n in TASKS if KINDS[n] == "scatter")
    assert tasks["model_training"].cpu_request == 32 and tasks["model_training"].mem_request == 128.0
    with pytest.raises(ValueError):
        abstract_tasks({"preprocessing1": (0, 1.0)})


def test_cycle_detected():
    g = TaskGraph()
    g.add(Instance("a", "x", 1, 1.0, (("b", "x"),)))
    g.add(Instance("b", "x", 1, 1.0, (("a", "x"),)))
    with pytest.raises(ValueError):
        g.check_acyclic()


# -- scheduling ----------------------------------------------------------------------

def _replay(graph, cluster, seconds):
    return run_schedule(graph, cluster, ReplayBackend({i: int(seconds * 1e6) for i in graph.instances}))


def test_schedule_examples():
    g = flat_graph(4)
    runs, _ = _replay(g, ClusterSpec(n_nodes=2, threads_per_node=1, mem_per_node_gb=1.0), 10)
    assert makespan(runs) == 20.0
    runs, _ = _replay(g, ClusterSpec(n_nodes=4, threads_per_node=1, mem_per_node_gb=1.0), 10)
    assert makespan(runs) == 10.0
    big = flat_graph(1, cpu=33, task="huge")
    with pytest.raises(Unschedulable, match=r"huge\[k0\]"):
        _replay(big, ClusterSpec(n_nodes=8), 1)


def test_replay_single_node_serializes():
    g = TaskGraph()
    for key, dep in (("a", ()), ("b", (("t", "a"),)), ("c", ())):
        g.add(Instance("t", key, 32, 128.0, dep, 0))
    durations = {("t", "a"): 3_000_000, ("t", "b"): 5_000_000, ("t", "c"): 7_000_000}
    runs, _ = run_schedule(g, ClusterSpec(n_nodes=1), ReplayBackend(durations))
    assert makespan(runs) == 15.0
    order = [r.key for r in sorted(runs, key=lambda r: r.start_us)]
    assert order == ["a", "b", "c"]


def test_dispatch_order_is_rank_then_key():
    g = TaskGraph()
    for task, rank in (("late", 1), ("early", 0)):
        for key in ("m2", "m1"):
            g.add(Instance(task, key, 1, 1.0, (), rank))
    runs, _ = _replay(g, ClusterSpec(n_nodes=1, threads_per_node=1, mem_per_node_gb=1.0), 1)
    assert [(r.task, r.key) for r in sorted(runs, key=lambda r: r.start_us)] == [
        ("early", "m1"), ("early", "m2"), ("late", "m1"), ("late", "m2")]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.lists(st.integers(1, 10_000), min_size=62, max_size=62),
       st.integers(1, 4), st.sampled_from([8.0, 40.0, 96.0]))
def test_safety_invariants_on_random_traces(n_nodes, durations, cpu, mem):
    requests = {t: (cpu, mem) for t in TASKS if KINDS[t] == "scatter"}
    g = build_dag(MONTHS, requests)
    trace = dict(zip(sorted(g.instances), durations))
    cluster = ClusterSpec(n_nodes=n_nodes)
    runs, events = run_schedule(g, cluster, ReplayBackend(trace))
    assert len(runs) == 62
    check_capacity(runs, cluster)
    check_dependencies(runs, g)
    times = [e.time_us for e in events]
    assert times == sorted(times)
    train = [r for r in runs if r.task == "model_training"]
    assert makespan(train) == trace[("model_training", "all")] / 1e6


def test_replay_of_replay_is_exact():
    g = build_dag(MONTHS)
    rng = np.random.default_rng(0)
    trace = {i: int(rng.integers(1, 5_000_000)) for i in g.instances}
    cluster = ClusterSpec(n_nodes=3)
    first = RunReport(run_schedule(g, cluster, ReplayBackend(trace))[0], cluster, "replay")
    second = RunReport(run_schedule(g, cluster, ReplayBackend(first.durations_us()))[0], cluster, "replay")
    for t in TASKS:
        assert first.task_summary(t)["makespan_s"] == second.task_summary(t)["makespan_s"]


def _body(task, key):
    time.sleep(0.001)
    if (task, key) == ("preprocessing1", "2010-02"):
        return False, "boom: bad month"
    return True, f"{task} {key} ok"


def test_failure_stops_dependents():
    g = build_dag(MONTHS[:3])
    cluster = ClusterSpec(n_nodes=2)
    with ThreadPoolExecutor(2) as pool, pytest.raises(WorkflowFailed) as info:
        run_schedule(g, cluster, LocalBackend(_body, 2, executor=pool))
    exc = info.value
    assert (exc.run.task, exc.run.key) == ("preprocessing1", "2010-02")
    assert "boom: bad month" in str(exc)
    started = {(r.task, r.key) for r in exc.runs}
    assert ("preprocessing2", "all") not in started
    assert not any(t in ("model_training", "model_finetuning", "dataset_publication") for t, _ in started)
    assert all(r.finished for r in exc.runs)


def test_local_backend_respects_capacity_and_workers():
    g = build_dag(MONTHS[:4])
    cluster = ClusterSpec(n_nodes=2)
    ok = lambda task, key: (time.sleep(0.002), (True, ""))[1]  # noqa: E731
    with ThreadPoolExecutor(3) as pool:
        runs, events = run_schedule(g, cluster, LocalBackend(ok, 3, executor=pool))
    check_capacity(runs, cluster)
    check_dependencies(runs, g)
    live, peak = 0, 0
    for e in events:
        live += 1 if e.kind == "start" else -1
        peak = max(peak, live)
    assert peak <= 2  # one 96 GB scatter instance per 128 GB node


# -- accounting ----------------------------------------------------------------------

def test_allocated_hours_examples():
    assert allocated_hours([make_run("t", "a", 0, 1800, cpu=4)], "cpu") == 2.0
    runs = [make_run("t", "a", 0, 1800, cpu=4), make_run("t", "b", 0, 3600, cpu=2)]
    assert allocated_hours(runs, "cpu") == 4.0
    assert allocated_hours([make_run("t", "a", 0, 3600, mem=16.0)], "mem") == 16.0
    unfinished = TaskRun("t", "x", 0, 0, None, "running", 1, 1.0)
    with pytest.raises(ValueError):
        allocated_hours([unfinished], "cpu")
    with pytest.raises(ValueError):
        allocated_hours(runs, "gpu")


def test_makespan_examples():
    assert makespan([make_run("t", "a", 0, 10)]) == 10
    assert makespan([make_run("t", "a", 0, 10), make_run("t", "b", 5, 20)]) == 20
    assert makespan([make_run("t", "a", 0, 10), make_run("t", "b", 30, 40)]) == 40
    with pytest.raises(ValueError):
        makespan([])


def _replay_report(n_nodes=2):
    g = build_dag(MONTHS[:3])
    trace = {i: 1_000_000 * (1 + k % 4) for k, i in enumerate(sorted(g.instances))}
    cluster = ClusterSpec(n_nodes=n_nodes)
    return RunReport(run_schedule(g, cluster, ReplayBackend(trace))[0], cluster, "replay", {"months": MONTHS[:3]})


def test_report_json_roundtrip_and_totals(tmp_path):
    rep = _replay_report()
    d = rep.to_json()
    assert set(d) >= {"tasks", "totals", "cluster"}
    assert set(d["tasks"]) == set(TASKS)
    inst = d["tasks"]["preprocessing1"]["instances"][0]
    assert {"key", "start_s", "end_s", "cpu", "mem_gb"} <= set(inst)
    assert d["totals"]["cpu_hours"] == pytest.approx(sum(t["cpu_hours"] for t in d["tasks"].values()), rel=1e-12)
    assert d["totals"]["mem_hours"] == pytest.approx(sum(t["mem_hours"] for t in d["tasks"].values()), rel=1e-12)
    rep.save(tmp_path / "r.json")
    back = RunReport.load(tmp_path / "r.json")
    assert back.to_json() == d


def test_comparison_table():
    a, b = _replay_report(1), _replay_report(2)
    header, rows = comparison_rows([a, b], ["one", "two"])
    assert [r[0] for r in rows] == list(TABLE_ROWS.values()) + [TOTAL_ROW]
    runtime = header.index("Runtime in s [one]")
    change = header.index("Runtime in s change % [two]")
    total = rows[-1]
    assert total[change] == pytest.approx((total[runtime + 1] - total[runtime]) / total[runtime] * 100)
    assert percent_change(50.0, 25.0) == -50.0
    text = format_table(header, rows)
    assert "Total (Makespan)" in text and "CPU Hours Allocated [one]" in text
    with pytest.raises(ValueError):
        comparison_rows([], [])


# -- manifest and execute ------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    m = Manifest(months=["2010-02", "2010-01"], seed=7, resources={"model_training": (16, 64.0)})
    assert m.months == ["2010-01", "2010-02"]
    m.save(tmp_path / "run.toml")
    back = Manifest.load(tmp_path / "run.toml")
    assert back == m
    assert back.resources["preprocessing1"] == DEFAULT_REQUESTS["preprocessing1"]
    assert back.train_config().seed != back.train.seed
    with pytest.raises(ValueError):
        Manifest.from_dict({"months": ["2010-01"], "bogus": 1})
    with pytest.raises(ValueError):
        Manifest(months=[])
    with pytest.raises(ValueError):
        Manifest(months=["2010-01"], resources={"nope": (1, 1.0)})
    with pytest.raises(FileNotFoundError):
        Manifest.load(tmp_path / "missing.toml")


def test_execute_input_errors(tmp_path):
    m = Manifest(months=["2010-01"])
    with pytest.raises(FileNotFoundError):
        execute(m, tmp_path)
    with pytest.raises(ValueError):
        execute(m, tmp_path, mode="replay")
    with pytest.raises(ValueError, match="trace lacks"):
        execute(Manifest(months=MONTHS[:4]), tmp_path, mode="replay", trace=_replay_report())
    with pytest.raises(ValueError):
        execute(m, tmp_path, mode="bogus")


def test_execute_replay_node_sweep():
    rep = _replay_report(1)
    m = Manifest(months=MONTHS[:3])
    spans = [execute(m, ".", ClusterSpec(n_nodes=n), mode="replay", trace=rep).totals()["makespan_s"]
             for n in (1, 2, 4, 8)]
    assert spans == sorted(spans, reverse=True)
