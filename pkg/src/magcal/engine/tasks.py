"""Bodies of the seven abstract tasks. Each reads and writes files under the work directory only."""

from __future__ import annotations

import io
import json
import logging
import traceback
from dataclasses import dataclass
from functools import partial
from pathlib import Path

from ..core import AlignedMonthTable
from ..neuralnet import ModelParams, finetune_month, train_global
from ..preprocess import (
    CleanMonthTable,
    GlobalStats,
    MonthStats,
    prepare_month,
    preprocess1,
    preprocess2,
    preprocess3,
    read_excluded,
    write_excluded,
)
from ..publish import publish_month
from ..synthgen import RawBundle
from .manifest import Manifest

log = logging.getLogger("magcal.task")


@dataclass(frozen=True)
class Layout:
    root: Path
    data_dir: str = "raw"

    @property
    def raw(self) -> Path:
        return self.root / self.data_dir

    @property
    def aligned(self) -> Path:
        return self.root / "aligned"

    @property
    def stats(self) -> Path:
        return self.root / "stats"

    @property
    def clean(self) -> Path:
        return self.root / "clean"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def published(self) -> Path:
        return self.root / "published"

    @property
    def reports(self) -> Path:
        return self.root / "reports"


def data_preparation(m: Manifest, lay: Layout, key: str) -> None:
    table = prepare_month(RawBundle.read(lay.raw, key), m.dipole)
    table.write(lay.aligned)
    log.info("%s: aligned %d rows, %d features", key, len(table), table.n_features)


def preprocessing1(m: Manifest, lay: Layout, key: str) -> None:
    preprocess1(AlignedMonthTable.read(lay.aligned, key)).write(lay.stats)


def preprocessing2(m: Manifest, lay: Layout, key: str) -> None:
    g = preprocess2([MonthStats.read(lay.stats, month) for month in m.months], m.thresholds)
    g.write(lay.stats)
    log.info("dropped features: %s", [g.feature_names[i] for i in g.drop_list])


def preprocessing3(m: Manifest, lay: Layout, key: str) -> None:
    clean, excluded = preprocess3(
        AlignedMonthTable.read(lay.aligned, key),
        GlobalStats.read(lay.stats),
        m.thresholds,
        seed=m.seed,
        validation_fraction=m.train.validation_fraction,
    )
    clean.write(lay.clean)
    write_excluded(excluded, lay.clean, key)
    log.info("%s: %d clean rows, %d excluded", key, len(clean), len(excluded))


def model_training(m: Manifest, lay: Layout, key: str) -> None:
    sources = [partial(CleanMonthTable.read, lay.clean, month) for month in m.months]
    params, report = train_global(sources, m.train_config(), month_ids=m.months)
    params.save(lay.models / "model_global.json")
    (lay.models / "train_global.json").write_text(json.dumps(report.to_json(), indent=1) + "\n")
    log.info("global model: final loss %.4g, validation %.4g", report.epoch_losses[-1], report.validation_loss)


def model_finetuning(m: Manifest, lay: Layout, key: str) -> None:
    glob = ModelParams.load(lay.models / "model_global.json")
    params, report = finetune_month(glob, CleanMonthTable.read(lay.clean, key), m.train_config())
    params.save(lay.models / f"model_{key}.json")
    (lay.models / f"train_{key}.json").write_text(json.dumps(report.to_json(), indent=1) + "\n")


def dataset_publication(m: Manifest, lay: Layout, key: str) -> None:
    paths = publish_month(
        AlignedMonthTable.read(lay.aligned, key),
        read_excluded(lay.clean, key),
        CleanMonthTable.read(lay.clean, key),
        ModelParams.load(lay.models / f"model_{key}.json"),
        GlobalStats.read(lay.stats),
        lay.published,
    )
    log.info("%s: wrote %d daily files", key, len(paths))


BODIES = {
    "data_preparation": data_preparation,
    "preprocessing1": preprocessing1,
    "preprocessing2": preprocessing2,
    "preprocessing3": preprocessing3,
    "model_training": model_training,
    "model_finetuning": model_finetuning,
    "dataset_publication": dataset_publication,
}


def run_task(manifest_dict: dict, root: str, task: str, key: str) -> tuple[bool, str]:
    """Worker entry point: run one instance, capture its log and any traceback."""
    buf = io.StringIO()
    handler = logging.StreamHandler(buf)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger = logging.getLogger("magcal")
    logger.addHandler(handler)
    old_level = logger.level
    logger.setLevel(logging.INFO)
    try:
        m = Manifest.from_dict(manifest_dict)
        BODIES[task](m, Layout(Path(root), m.data_dir), key)
        return True, buf.getvalue()
    except Exception:
        return False, buf.getvalue() + traceback.format_exc()
    finally:
        logger.removeHandler(handler)
        logger.setLevel(old_level)


class TaskRunner:
    """Picklable callable binding a manifest and work directory for the worker pool."""

    def __init__(self, manifest: Manifest, root: Path):
        self.manifest_dict = manifest.to_dict()
        self.root = str(root)

    def __call__(self, task: str, key: str) -> tuple[bool, str]:
        return run_task(self.manifest_dict, self.root, task, key)
