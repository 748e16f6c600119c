"""Allocated resource hours, makespans and the run report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .dag import TASKS
from .scheduler import SUCCEEDED, US, ClusterSpec, TaskRun

SECONDS_PER_HOUR = 3600.0


def allocated_hours(runs: Iterable[TaskRun], resource: str = "cpu") -> float:
    """Sum over instances of runtime (h) times the allocated amount (cores or GB)."""
    if resource not in ("cpu", "mem"):
        raise ValueError("resource must be 'cpu' or 'mem'")
    total = 0.0
    for r in runs:
        if not r.finished:
            raise ValueError(f"{r.task}[{r.key}] has not finished")
        alloc = r.cpu if resource == "cpu" else r.mem_gb
        total += (r.duration_us / US / SECONDS_PER_HOUR) * alloc
    return total


def makespan(runs: Sequence[TaskRun]) -> float:
    """Seconds between the earliest start and the latest end, idle gaps included."""
    runs = list(runs)
    if not runs:
        raise ValueError("makespan of an empty set of runs")
    if any(not r.finished for r in runs):
        raise ValueError("makespan needs finished runs")
    return (max(r.end_us for r in runs) - min(r.start_us for r in runs)) / US


@dataclass
class RunReport:
    runs: list[TaskRun]
    cluster: ClusterSpec
    mode: str = "local"
    meta: dict = field(default_factory=dict)

    def task_names(self) -> list[str]:
        seen = {r.task for r in self.runs}
        ordered = [t for t in TASKS if t in seen]
        return ordered + sorted(seen - set(ordered))

    def runs_of(self, task: str) -> list[TaskRun]:
        return sorted((r for r in self.runs if r.task == task), key=lambda r: (r.start_us, r.key))

    def task_summary(self, task: str) -> dict:
        runs = self.runs_of(task)
        return {
            "cpu_hours": allocated_hours(runs, "cpu"),
            "mem_hours": allocated_hours(runs, "mem"),
            "makespan_s": makespan(runs),
            "instances": [
                {
                    "key": r.key,
                    "node": r.node,
                    "start_s": r.start_us / US,
                    "end_s": r.end_us / US,
                    "cpu": r.cpu,
                    "mem_gb": r.mem_gb,
                    "status": r.status,
                }
                for r in runs
            ],
        }

    def totals(self) -> dict:
        return {
            "cpu_hours": allocated_hours(self.runs, "cpu"),
            "mem_hours": allocated_hours(self.runs, "mem"),
            "makespan_s": makespan(self.runs),
        }

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "tasks": {t: self.task_summary(t) for t in self.task_names()},
            "totals": self.totals(),
            "cluster": {
                "n_nodes": self.cluster.n_nodes,
                "threads_per_node": self.cluster.threads_per_node,
                "mem_per_node_gb": self.cluster.mem_per_node_gb,
            },
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunReport":
        runs = []
        for task, body in d["tasks"].items():
            for inst in body["instances"]:
                runs.append(
                    TaskRun(
                        task=task,
                        key=inst["key"],
                        node=int(inst.get("node", 0)),
                        start_us=int(round(inst["start_s"] * US)),
                        end_us=int(round(inst["end_s"] * US)),
                        status=inst.get("status", SUCCEEDED),
                        cpu=inst["cpu"],
                        mem_gb=float(inst["mem_gb"]),
                    )
                )
        return cls(runs, ClusterSpec(**d["cluster"]), d.get("mode", "local"), d.get("meta", {}))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "RunReport":
        return cls.from_json(json.loads(Path(path).read_text()))

    def durations_us(self) -> dict[tuple[str, str], int]:
        return {(r.task, r.key): r.duration_us for r in self.runs}


# -- comparison table ------------------------------------------------------------

TABLE_ROWS = {
    "data_preparation": "Data Preparation",
    "preprocessing1": "Preprocessing I",
    "preprocessing2": "Preprocessing II",
    "preprocessing3": "Preprocessing III",
    "model_training": "Model Training",
    "model_finetuning": "Model Finetuning",
    "dataset_publication": "Dataset Publication",
}
TOTAL_ROW = "Total (Makespan)"
METRICS = (
    ("cpu_hours", "CPU Hours Allocated"),
    ("mem_hours", "Memory Hours Allocated"),
    ("makespan_s", "Runtime in s"),
)


def percent_change(old: float, new: float) -> float:
    if old == 0:
        return float("nan")
    return (new - old) / old * 100.0


def comparison_rows(reports: Sequence[RunReport], labels: Sequence[str]) -> tuple[list[str], list[list]]:
    """Rows of the side-by-side table: 7 tasks and the total.

    Columns per metric: one value per report, then a percent change of
    each later report against the first.
    """
    if not reports:
        raise ValueError("at least one run report is required")
    if len(labels) != len(reports):
        raise ValueError("one label per report")
    header = ["task"]
    for _, title in METRICS:
        header += [f"{title} [{lab}]" for lab in labels]
        header += [f"{title} change % [{lab}]" for lab in labels[1:]]

    summaries = [{t: rep.task_summary(t) for t in rep.task_names()} for rep in reports]
    totals = [rep.totals() for rep in reports]
    rows = []
    for task, title in list(TABLE_ROWS.items()) + [(None, TOTAL_ROW)]:
        row: list = [title]
        for metric, _ in METRICS:
            vals = [
                (tot[metric] if task is None else s.get(task, {}).get(metric))
                for s, tot in zip(summaries, totals)
            ]
            row += vals
            row += [
                None if v is None or vals[0] is None else percent_change(vals[0], v) for v in vals[1:]
            ]
        rows.append(row)
    return header, rows


def format_table(header: list[str], rows: list[list]) -> str:
    def cell(v, col):
        if v is None:
            return "-"
        if isinstance(v, str):
            return v
        if "change" in header[col]:
            return f"{v:+.1f}"
        if "Runtime" in header[col]:
            return f"{v:.1f}"
        return f"{v:.4f}"

    text = [[cell(v, i) for i, v in enumerate(r)] for r in rows]
    widths = [max(len(header[i]), *(len(t[i]) for t in text)) for i in range(len(header))]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for t in text:
        lines.append(" | ".join([t[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(t[1:], widths[1:])]))
    return "\n".join(lines)
