"""Abstract workflow tasks and their expansion into an instance graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

# Topological order of the seven abstract tasks; the index is the dispatch rank.
TASKS = (
    "data_preparation",
    "preprocessing1",
    "preprocessing2",
    "preprocessing3",
    "model_training",
    "model_finetuning",
    "dataset_publication",
)

SCATTER = "scatter"
GATHER = "gather"
ALL = "all"


@dataclass(frozen=True)
class AbstractTask:
    name: str
    kind: str
    cpu_request: int
    mem_request: float
    dependencies: frozenset = frozenset()

    def __post_init__(self):
        if self.cpu_request < 1:
            raise ValueError(f"{self.name}: cpu_request must be >= 1")
        if not self.mem_request > 0:
            raise ValueError(f"{self.name}: mem_request must be > 0")


KINDS = {
    "data_preparation": SCATTER,
    "preprocessing1": SCATTER,
    "preprocessing2": GATHER,
    "preprocessing3": SCATTER,
    "model_training": GATHER,
    "model_finetuning": SCATTER,
    "dataset_publication": SCATTER,
}

DEPENDENCIES = {
    "data_preparation": (),
    "preprocessing1": ("data_preparation",),
    "preprocessing2": ("preprocessing1",),
    "preprocessing3": ("preprocessing2", "data_preparation"),
    "model_training": ("preprocessing3",),
    "model_finetuning": ("model_training", "preprocessing3"),
    "dataset_publication": ("model_finetuning",),
}

# (cores, GB). Scatter instances use one core but reserve most of a node's
# memory (a month of data held in RAM), so each 128 GB node runs one month at a
# time; training takes a whole node.
DEFAULT_REQUESTS = {
    "data_preparation": (1, 96.0),
    "preprocessing1": (1, 96.0),
    "preprocessing2": (1, 4.0),
    "preprocessing3": (1, 96.0),
    "model_training": (32, 128.0),
    "model_finetuning": (1, 96.0),
    "dataset_publication": (1, 96.0),
}


def abstract_tasks(requests: Mapping[str, tuple[int, float]] | None = None) -> dict[str, AbstractTask]:
    req = dict(DEFAULT_REQUESTS)
    req.update(requests or {})
    return {
        name: AbstractTask(name, KINDS[name], int(req[name][0]), float(req[name][1]), frozenset(DEPENDENCIES[name]))
        for name in TASKS
    }


@dataclass(frozen=True)
class Instance:
    task: str
    key: str
    cpu: int
    mem_gb: float
    deps: tuple[tuple[str, str], ...] = ()
    rank: int = 0

    @property
    def id(self) -> tuple[str, str]:
        return (self.task, self.key)


@dataclass
class TaskGraph:
    instances: dict[tuple[str, str], Instance] = field(default_factory=dict)

    def add(self, inst: Instance) -> None:
        if inst.id in self.instances:
            raise ValueError(f"duplicate instance {inst.id}")
        self.instances[inst.id] = inst

    def __len__(self) -> int:
        return len(self.instances)

    def edges(self) -> list[tuple[tuple[str, str], tuple[str, str]]]:
        return [(d, inst.id) for inst in self.instances.values() for d in inst.deps]

    def in_degree(self, task: str, key: str) -> int:
        return len(self.instances[(task, key)].deps)

    def dependents(self) -> dict[tuple[str, str], list[tuple[str, str]]]:
        out: dict = {i: [] for i in self.instances}
        for u, v in self.edges():
            out[u].append(v)
        return out

    def check_acyclic(self) -> None:
        for inst in self.instances.values():
            for d in inst.deps:
                if d not in self.instances:
                    raise ValueError(f"{inst.id} depends on unknown instance {d}")
        indeg = {i: len(inst.deps) for i, inst in self.instances.items()}
        frontier = [i for i, n in indeg.items() if n == 0]
        deps_of = self.dependents()
        seen = 0
        while frontier:
            u = frontier.pop()
            seen += 1
            for v in deps_of[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    frontier.append(v)
        if seen != len(self.instances):
            raise ValueError("task graph contains a cycle")


def build_dag(months: Iterable[str], requests: Mapping[str, tuple[int, float]] | None = None) -> TaskGraph:
    """Expand the seven abstract tasks over ``months``: 5 scatter instances per month plus 2 gathers."""
    months = list(months)
    if not months:
        raise ValueError("at least one month is required")
    if len(set(months)) != len(months):
        raise ValueError("duplicate months")
    months = sorted(months)
    tasks = abstract_tasks(requests)
    graph = TaskGraph()

    def keys_of(task: str) -> list[str]:
        return months if KINDS[task] == SCATTER else [ALL]

    for rank, name in enumerate(TASKS):
        t = tasks[name]
        for key in keys_of(name):
            deps = []
            for dep in DEPENDENCIES[name]:
                if KINDS[dep] == GATHER:
                    deps.append((dep, ALL))
                elif KINDS[name] == SCATTER:
                    deps.append((dep, key))  # same month
                else:
                    deps.extend((dep, m) for m in months)  # barrier over every month
            graph.add(Instance(name, key, t.cpu_request, t.mem_request, tuple(deps), rank))
    return graph
