"""Run the workflow for a manifest, either for real or by replaying a trace."""

from __future__ import annotations

import logging
from pathlib import Path

from .accounting import RunReport
from .dag import build_dag
from .manifest import Manifest
from .scheduler import ClusterSpec, LocalBackend, ReplayBackend, WorkflowFailed, run_schedule
from .tasks import Layout, TaskRunner

log = logging.getLogger(__name__)

MODES = ("local", "replay")


def execute(
    manifest: Manifest,
    workdir: Path,
    cluster: ClusterSpec | None = None,
    mode: str = "local",
    trace: RunReport | None = None,
    executor=None,
) -> RunReport:
    """Execute the expanded workflow and return its report.

    ``local`` runs the task bodies on a worker pool (at most
    ``manifest.workers`` at once, and never beyond the simulated node
    capacities). ``replay`` runs nothing and re-times ``trace`` on a
    virtual clock.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cluster = cluster or manifest.cluster
    workdir = Path(workdir)
    graph = build_dag(manifest.months, manifest.resources)

    if mode == "replay":
        if trace is None:
            raise ValueError("replay mode needs a trace (a previous run report)")
        durations = trace.durations_us()
        missing = [i for i in graph.instances if i not in durations]
        if missing:
            raise ValueError(f"trace lacks {len(missing)} instances, e.g. {missing[0]}")
        backend = ReplayBackend(durations)
    else:
        lay = Layout(workdir, manifest.data_dir)
        absent = [mo for mo in manifest.months if not (lay.raw / mo).is_dir()]
        if absent:
            raise FileNotFoundError(f"raw input missing for months {absent} under {lay.raw}")
        backend = LocalBackend(TaskRunner(manifest, workdir), manifest.workers, executor=executor)

    meta = {"months": list(manifest.months), "seed": manifest.seed}
    try:
        runs, _ = run_schedule(graph, cluster, backend)
    except WorkflowFailed as exc:
        partial = RunReport([r for r in exc.runs], cluster, mode, {**meta, "failed": f"{exc.run.task}[{exc.run.key}]"})
        exc.report = partial
        raise
    return RunReport(runs, cluster, mode, meta)
