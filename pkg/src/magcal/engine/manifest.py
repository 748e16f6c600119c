"""Run manifest: a TOML file describing inputs, seeds, thresholds, training and resources.

Example::

    months = ["2010-01", "2010-02"]
    seed = 7
    data_dir = "raw"
    max_workers = 0            # 0: one worker per CPU

    [thresholds]
    drop_missing = 0.2
    quiet = 3.0
    k_outlier = 5.0
    w_min = 0.05

    [train]
    epochs = 30
    finetune_epochs = 10
    hidden = [384, 128]

    [dipole]
    b0 = 30000.0
    tilt_deg = 11.0

    [cluster]
    n_nodes = 8
    threads_per_node = 32
    mem_per_node_gb = 128.0

    [resources.model_training]
    cpu = 32
    mem_gb = 128.0
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..core import derive_seed, parse_month
from ..neuralnet import TrainConfig
from ..preprocess import Thresholds
from ..synthgen import DipoleModel
from .dag import DEFAULT_REQUESTS, TASKS
from .scheduler import ClusterSpec

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}


@dataclass
class Manifest:
    months: list[str]
    seed: int = 1
    data_dir: str = "raw"
    max_workers: int = 0
    thresholds: Thresholds = field(default_factory=Thresholds)
    train: TrainConfig = field(default_factory=TrainConfig)
    dipole: DipoleModel = field(default_factory=DipoleModel)
    cluster: ClusterSpec = field(default_factory=ClusterSpec)
    resources: dict[str, tuple[int, float]] = field(default_factory=lambda: dict(DEFAULT_REQUESTS))

    def __post_init__(self):
        if not self.months:
            raise ValueError("manifest lists no months")
        for m in self.months:
            parse_month(m)
        if len(set(self.months)) != len(self.months):
            raise ValueError("manifest lists a month twice")
        unknown = set(self.resources) - set(TASKS)
        if unknown:
            raise ValueError(f"resources for unknown tasks: {sorted(unknown)}")
        self.resources = {**DEFAULT_REQUESTS, **self.resources}
        self.months = sorted(self.months)

    @property
    def workers(self) -> int:
        return self.max_workers if self.max_workers > 0 else (os.cpu_count() or 1)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=derive_seed(self.seed, "model_training"))

    def with_cluster(self, cluster: ClusterSpec) -> "Manifest":
        return dataclasses.replace(self, cluster=cluster)

    def to_dict(self) -> dict:
        train = {k: v for k, v in dataclasses.asdict(self.train).items() if k in _TRAIN_FIELDS}
        train["hidden"] = list(train["hidden"])
        return {
            "months": list(self.months),
            "seed": self.seed,
            "data_dir": self.data_dir,
            "max_workers": self.max_workers,
            "thresholds": dataclasses.asdict(self.thresholds),
            "train": train,
            "dipole": dataclasses.asdict(self.dipole),
            "cluster": dataclasses.asdict(self.cluster),
            "resources": {t: {"cpu": c, "mem_gb": m} for t, (c, m) in self.resources.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        d = dict(d)
        known = {"months", "seed", "data_dir", "max_workers", "thresholds", "train", "dipole", "cluster", "resources"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        if "months" not in d:
            raise ValueError("manifest must list months")
        train = dict(d.get("train", {}))
        bad = set(train) - _TRAIN_FIELDS
        if bad:
            raise ValueError(f"unknown train keys: {sorted(bad)}")
        resources = {}
        for task, body in d.get("resources", {}).items():
            resources[task] = (int(body["cpu"]), float(body["mem_gb"]))
        return cls(
            months=list(d["months"]),
            seed=int(d.get("seed", 1)),
            data_dir=str(d.get("data_dir", "raw")),
            max_workers=int(d.get("max_workers", 0)),
            thresholds=Thresholds(**d.get("thresholds", {})),
            train=TrainConfig(**train),
            dipole=DipoleModel(**d.get("dipole", {})),
            cluster=ClusterSpec(**d.get("cluster", {})),
            resources=resources,
        )

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))
