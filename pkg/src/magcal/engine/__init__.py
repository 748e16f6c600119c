from .accounting import RunReport, allocated_hours, makespan
from .dag import TASKS, AbstractTask, Instance, TaskGraph, abstract_tasks, build_dag
from .execute import execute
from .manifest import Manifest
from .scheduler import (
    ClusterSpec,
    Event,
    LocalBackend,
    ReplayBackend,
    TaskRun,
    Unschedulable,
    WorkflowFailed,
    run_schedule,
    schedule,
)

__all__ = [
    "TASKS", "AbstractTask", "ClusterSpec", "Event", "Instance", "LocalBackend", "Manifest",
    "ReplayBackend", "RunReport", "TaskGraph", "TaskRun", "Unschedulable", "WorkflowFailed",
    "abstract_tasks", "allocated_hours", "build_dag", "execute", "makespan", "run_schedule", "schedule",
]
