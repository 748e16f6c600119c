"""Event-loop scheduler over simulated node capacities.

Times are kept as integer microseconds so that replaying a trace reproduces
its durations exactly.
"""

from __future__ import annotations

import heapq
import logging
import multiprocessing as mp
import time
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Mapping

from .dag import Instance, TaskGraph

log = logging.getLogger(__name__)

US = 1_000_000

PENDING, RUNNING, SUCCEEDED, FAILED = "pending", "running", "succeeded", "failed"


class Unschedulable(ValueError):
    pass


class WorkflowFailed(RuntimeError):
    def __init__(self, run: "TaskRun", runs: list["TaskRun"], events: list["Event"]):
        super().__init__(f"task {run.task}[{run.key}] failed on node {run.node}:\n{run.log}")
        self.run = run
        self.runs = runs
        self.events = events


@dataclass(frozen=True)
class ClusterSpec:
    n_nodes: int = 8
    threads_per_node: int = 32
    mem_per_node_gb: float = 128.0

    def __post_init__(self):
        if self.n_nodes < 1 or self.threads_per_node < 1 or not self.mem_per_node_gb > 0:
            raise ValueError("cluster capacities must be positive")


@dataclass(frozen=True)
class TaskRun:
    task: str
    key: str
    node: int
    start_us: int
    end_us: int | None
    status: str
    cpu: int
    mem_gb: float
    log: str = ""

    @property
    def start_s(self) -> float:
        return self.start_us / US

    @property
    def end_s(self) -> float | None:
        return None if self.end_us is None else self.end_us / US

    @property
    def duration_us(self) -> int:
        if self.end_us is None:
            raise ValueError(f"{self.task}[{self.key}] has not finished")
        return self.end_us - self.start_us

    @property
    def finished(self) -> bool:
        return self.status in (SUCCEEDED, FAILED) and self.end_us is not None


@dataclass(frozen=True)
class Event:
    time_us: int
    kind: str  # "start" | "end"
    run: TaskRun


# -- backends ----------------------------------------------------------------

class ReplayBackend:
    """Virtual clock: each instance takes its recorded duration; no task bodies run."""

    def __init__(self, durations_us: Mapping[tuple[str, str], int]):
        self.durations = dict(durations_us)
        self._now = 0
        self._heap: list = []
        self._seq = 0

    def now(self) -> int:
        return self._now

    def has_slot(self) -> bool:
        return True

    def start(self, inst: Instance) -> None:
        try:
            dur = int(self.durations[inst.id])
        except KeyError:
            raise KeyError(f"trace has no duration for {inst.task}[{inst.key}]") from None
        if dur < 0:
            raise ValueError(f"negative duration for {inst.id}")
        heapq.heappush(self._heap, (self._now + dur, self._seq, inst.id))
        self._seq += 1

    def wait(self) -> list[tuple[tuple[str, str], int, bool, str]]:
        t = self._heap[0][0]
        done = []
        while self._heap and self._heap[0][0] == t:
            _, _, iid = heapq.heappop(self._heap)
            done.append((iid, t, True, ""))
        self._now = t
        return done

    def close(self) -> None:
        pass


def _warm_up() -> None:
    import magcal.engine.tasks  # noqa: F401


class LocalBackend:
    """Runs task bodies on a process pool and times them with the wall clock."""

    def __init__(self, body: Callable[[str, str], str], max_workers: int, executor=None):
        self.body = body
        self.max_workers = max(1, int(max_workers))
        self._executor = executor
        self._owns = executor is None
        self._futures: dict[Future, tuple[str, str]] = {}
        if self._executor is None:
            self._executor = ProcessPoolExecutor(self.max_workers, mp_context=mp.get_context("spawn"))
            # start and import every worker up front so start-up cost is not billed to the first tasks
            for f in [self._executor.submit(_warm_up) for _ in range(self.max_workers)]:
                f.result()
        self._t0 = time.monotonic()

    def _pool(self):
        return self._executor

    def now(self) -> int:
        return int(round((time.monotonic() - self._t0) * US))

    def has_slot(self) -> bool:
        return len(self._futures) < self.max_workers

    def start(self, inst: Instance) -> None:
        fut = self._pool().submit(self.body, inst.task, inst.key)
        self._futures[fut] = inst.id

    def wait(self):
        done, _ = wait(list(self._futures), return_when=FIRST_COMPLETED)
        t = self.now()
        out = []
        for fut in done:
            iid = self._futures.pop(fut)
            try:
                ok, text = fut.result()
            except Exception as exc:  # worker crashed before reporting
                ok, text = False, f"{type(exc).__name__}: {exc}"
            out.append((iid, t, ok, text))
        return out

    def close(self) -> None:
        if self._owns and self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


# -- event loop ----------------------------------------------------------------

def _order(inst: Instance) -> tuple:
    return (inst.rank, inst.key, inst.task)


def check_schedulable(graph: TaskGraph, cluster: ClusterSpec) -> None:
    for inst in sorted(graph.instances.values(), key=_order):
        if inst.cpu > cluster.threads_per_node or inst.mem_gb > cluster.mem_per_node_gb:
            raise Unschedulable(
                f"{inst.task}[{inst.key}] requests {inst.cpu} threads / {inst.mem_gb} GB; "
                f"nodes offer {cluster.threads_per_node} threads / {cluster.mem_per_node_gb} GB"
            )


def schedule(graph: TaskGraph, cluster: ClusterSpec, backend) -> Iterator[Event]:
    """Validate, then return the (lazy) stream of start/end events.

    Ready instances go out in (rank, key) order to the lowest-numbered node
    with enough free threads and memory. After a failure nothing new starts;
    running instances drain and ``WorkflowFailed`` is raised.
    """
    graph.check_acyclic()
    check_schedulable(graph, cluster)
    return _loop(graph, cluster, backend)


def _loop(graph: TaskGraph, cluster: ClusterSpec, backend) -> Iterator[Event]:
    free_cpu = [cluster.threads_per_node] * cluster.n_nodes
    free_mem = [float(cluster.mem_per_node_gb)] * cluster.n_nodes
    waiting = {iid: len(inst.deps) for iid, inst in graph.instances.items()}
    dependents = graph.dependents()
    ready = sorted((graph.instances[i] for i, n in waiting.items() if n == 0), key=_order)
    running: dict[tuple[str, str], TaskRun] = {}
    finished: list[TaskRun] = []
    events: list[Event] = []
    failure: TaskRun | None = None

    try:
        while True:
            if failure is None:
                still = []
                for inst in ready:
                    node = next(
                        (n for n in range(cluster.n_nodes) if free_cpu[n] >= inst.cpu and free_mem[n] >= inst.mem_gb),
                        None,
                    )
                    if node is None or not backend.has_slot():
                        still.append(inst)
                        continue
                    free_cpu[node] -= inst.cpu
                    free_mem[node] -= inst.mem_gb
                    now = backend.now()
                    backend.start(inst)
                    run = TaskRun(inst.task, inst.key, node, now, None, RUNNING, inst.cpu, inst.mem_gb)
                    running[inst.id] = run
                    ev = Event(now, "start", run)
                    events.append(ev)
                    yield ev
                ready = still
            if not running:
                break
            newly_ready = []
            for iid, t_end, ok, text in sorted(backend.wait(), key=lambda d: _order(graph.instances[d[0]])):
                run = running.pop(iid)
                done = replace(run, end_us=t_end, status=SUCCEEDED if ok else FAILED, log=text)
                free_cpu[run.node] += run.cpu
                free_mem[run.node] += run.mem_gb
                finished.append(done)
                ev = Event(t_end, "end", done)
                events.append(ev)
                yield ev
                if not ok:
                    if failure is None:
                        failure = done
                    continue
                for v in dependents[iid]:
                    waiting[v] -= 1
                    if waiting[v] == 0:
                        newly_ready.append(graph.instances[v])
            ready = sorted(ready + newly_ready, key=_order)
    finally:
        backend.close()

    if failure is not None:
        raise WorkflowFailed(failure, finished, events)


def run_schedule(graph: TaskGraph, cluster: ClusterSpec, backend) -> tuple[list[TaskRun], list[Event]]:
    events = list(schedule(graph, cluster, backend))
    runs = [e.run for e in events if e.kind == "end"]
    return runs, events
