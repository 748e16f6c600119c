"""Data preparation and the three preprocessing steps.

``prepare_month``, ``preprocess1`` and ``preprocess3`` are independent per
month; ``preprocess2`` is the single merge point between them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .core import (
    BMEAS_COLUMNS,
    BREF_COLUMNS,
    EXCLUDING_FLAGS,
    POSITION_COLUMNS,
    AlignedMonthTable,
    Flag,
    SeededRng,
    derive_seed,
    read_csv,
    shuffle_permutation,
    unmask,
    write_csv,
)
from .synthgen import DipoleModel, RawBundle, dipole_field


class PreprocessError(RuntimeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    drop_missing: float = 0.2
    quiet: float = 3.0
    k_outlier: float = 5.0
    w_min: float = 0.05


# -- data preparation ----------------------------------------------------------

def interpolate_masked(t_src, values, missing, t_dst):
    """Linear interpolation of a masked series onto ``t_dst``.

    With both bracketing samples present the result is linear; with one
    present it takes that sample; with neither, or outside the source span,
    the output cell is missing. Returns ``(values, missing)``.
    """
    t_src = np.asarray(t_src, dtype=np.float64)
    t_dst = np.asarray(t_dst, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    out = np.zeros(len(t_dst))
    out_missing = np.ones(len(t_dst), dtype=bool)
    if len(t_src) == 0:
        return out, out_missing

    inside = (t_dst >= t_src[0]) & (t_dst <= t_src[-1])
    hi = np.clip(np.searchsorted(t_src, t_dst, side="right"), 1, len(t_src) - 1) if len(t_src) > 1 else np.zeros(len(t_dst), int)
    lo = np.maximum(hi - 1, 0)
    # exact hit on the last sample
    at_end = t_dst == t_src[-1]
    lo = np.where(at_end, len(t_src) - 1, lo)
    hi = np.where(at_end, len(t_src) - 1, hi)

    span = t_src[hi] - t_src[lo]
    w = np.where(span > 0, (t_dst - t_src[lo]) / np.where(span > 0, span, 1.0), 0.0)
    lo_ok, hi_ok = ~missing[lo], ~missing[hi]
    both = lo_ok & hi_ok
    out = np.where(both, values[lo] * (1 - w) + values[hi] * w, np.where(lo_ok, values[lo], values[hi]))
    out_missing = ~inside | ~(lo_ok | hi_ok)
    return np.where(out_missing, 0.0, out), out_missing


def prepare_month(bundle: RawBundle, model: DipoleModel = DipoleModel()) -> AlignedMonthTable:
    """Merge the magnetometer, housekeeping and telemetry streams onto magnetometer timestamps."""
    mag = bundle.mag
    if len(mag) == 0:
        raise PreprocessError(f"{bundle.month_id}: empty magnetometer stream")
    mag = mag.sort_values("epoch_s", kind="stable").drop_duplicates("epoch_s", keep="first")
    t = mag["epoch_s"].to_numpy(dtype=np.int64)
    pos, pos_missing = unmask(mag, POSITION_COLUMNS)
    bm, bm_missing = unmask(mag, BMEAS_COLUMNS)

    columns: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for src in (bundle.hk, bundle.tm):
        src = src.sort_values("epoch_s", kind="stable").drop_duplicates("epoch_s", keep="first")
        ts = src["epoch_s"].to_numpy(dtype=np.float64)
        for name in src.columns:
            if name == "epoch_s":
                continue
            v, m = unmask(src, [name])
            columns[name] = interpolate_masked(ts, v[:, 0], m[:, 0], t)
    names = tuple(sorted(columns))
    n = len(t)
    feats = np.column_stack([columns[c][0] for c in names]) if names else np.zeros((n, 0))
    feats_missing = np.column_stack([columns[c][1] for c in names]) if names else np.zeros((n, 0), bool)

    b_ref = np.zeros((n, 3))
    ok = ~pos_missing.any(axis=1)
    if ok.any():
        b_ref[ok] = dipole_field(pos[ok, 0], pos[ok, 1], pos[ok, 2], model)

    return AlignedMonthTable(
        month_id=bundle.month_id,
        epoch_s=t,
        position=pos,
        position_missing=pos_missing,
        b_meas=bm,
        b_meas_missing=bm_missing,
        b_ref=b_ref,
        features=feats,
        features_missing=feats_missing,
        quiet=mag["quiet"].to_numpy(dtype=np.float64),
        feature_names=names,
    )


# -- Preprocessing I -----------------------------------------------------------

@dataclass
class MonthStats:
    month_id: str
    feature_names: tuple[str, ...]
    sum: np.ndarray
    sumsq: np.ndarray
    count: np.ndarray
    missing: np.ndarray
    min: np.ndarray
    max: np.ndarray
    row_count: int

    def to_json(self) -> dict:
        return {
            "month_id": self.month_id,
            "row_count": int(self.row_count),
            "features": {
                name: {
                    "sum": float(self.sum[i]),
                    "sumsq": float(self.sumsq[i]),
                    "count": int(self.count[i]),
                    "missing": int(self.missing[i]),
                    "min": None if self.count[i] == 0 else float(self.min[i]),
                    "max": None if self.count[i] == 0 else float(self.max[i]),
                }
                for i, name in enumerate(self.feature_names)
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "MonthStats":
        names = tuple(d["features"])
        col = lambda key, fill=np.nan: np.array(  # noqa: E731
            [fill if d["features"][n][key] is None else d["features"][n][key] for n in names], dtype=float
        )
        return cls(
            month_id=d["month_id"],
            feature_names=names,
            sum=col("sum"),
            sumsq=col("sumsq"),
            count=col("count").astype(np.int64),
            missing=col("missing").astype(np.int64),
            min=col("min", np.inf),
            max=col("max", -np.inf),
            row_count=int(d["row_count"]),
        )

    def write(self, directory: Path) -> Path:
        path = Path(directory) / f"stats_{self.month_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path

    @classmethod
    def read(cls, directory: Path, month_id: str) -> "MonthStats":
        return cls.from_json(json.loads((Path(directory) / f"stats_{month_id}.json").read_text()))


def preprocess1(table: AlignedMonthTable) -> MonthStats:
    present = ~table.features_missing
    x = np.where(present, table.features, 0.0)
    return MonthStats(
        month_id=table.month_id,
        feature_names=table.feature_names,
        sum=x.sum(axis=0),
        sumsq=(x * x).sum(axis=0),
        count=present.sum(axis=0).astype(np.int64),
        missing=(~present).sum(axis=0).astype(np.int64),
        min=np.where(present, table.features, np.inf).min(axis=0, initial=np.inf),
        max=np.where(present, table.features, -np.inf).max(axis=0, initial=-np.inf),
        row_count=len(table),
    )


# -- Preprocessing II ----------------------------------------------------------

@dataclass
class GlobalStats:
    feature_names: tuple[str, ...]
    weighted_mean: np.ndarray
    pooled_std: np.ndarray
    total_count: np.ndarray
    missing_fraction: np.ndarray
    drop_list: tuple[int, ...]

    @property
    def kept(self) -> np.ndarray:
        return np.array([i for i in range(len(self.feature_names)) if i not in set(self.drop_list)], dtype=int)

    @property
    def kept_names(self) -> tuple[str, ...]:
        return tuple(self.feature_names[i] for i in self.kept)

    def to_json(self) -> dict:
        def num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "feature_names": list(self.feature_names),
            "weighted_mean": [num(v) for v in self.weighted_mean],
            "pooled_std": [num(v) for v in self.pooled_std],
            "total_count": [int(v) for v in self.total_count],
            "missing_fraction": [float(v) for v in self.missing_fraction],
            "drop_list": list(self.drop_list),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GlobalStats":
        arr = lambda key: np.array([np.nan if v is None else v for v in d[key]], dtype=float)  # noqa: E731
        return cls(
            feature_names=tuple(d["feature_names"]),
            weighted_mean=arr("weighted_mean"),
            pooled_std=arr("pooled_std"),
            total_count=np.array(d["total_count"], dtype=np.int64),
            missing_fraction=arr("missing_fraction"),
            drop_list=tuple(d["drop_list"]),
        )

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "global_stats.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path

    @classmethod
    def read(cls, directory: Path) -> "GlobalStats":
        return cls.from_json(json.loads((Path(directory) / "global_stats.json").read_text()))


def preprocess2(stats: Sequence[MonthStats], thresholds: Thresholds = Thresholds()) -> GlobalStats:
    if not stats:
        raise PreprocessError("no monthly statistics to merge")
    names = stats[0].feature_names
    for s in stats[1:]:
        if s.feature_names != names:
            raise PreprocessError(f"{s.month_id}: feature set differs from {stats[0].month_id}")

    total = np.sum([s.sum for s in stats], axis=0)
    total_sq = np.sum([s.sumsq for s in stats], axis=0)
    count = np.sum([s.count for s in stats], axis=0)
    missing = np.sum([s.missing for s in stats], axis=0)
    rows = sum(s.row_count for s in stats)
    lo = np.min([s.min for s in stats], axis=0)
    hi = np.max([s.max for s in stats], axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / count, np.nan)
        var = np.where(count > 0, total_sq / count - mean * mean, np.nan)
    std = np.sqrt(np.maximum(var, 0.0))
    std = np.where(lo == hi, 0.0, std)  # constant columns are exactly zero-variance
    missing_fraction = missing / rows if rows else np.ones(len(names))

    drop = tuple(
        int(i)
        for i in range(len(names))
        if count[i] == 0 or missing_fraction[i] > thresholds.drop_missing or std[i] == 0
    )
    if len(drop) == len(names):
        raise PreprocessError("every feature was dropped; nothing to train on")
    return GlobalStats(names, mean, std, count.astype(np.int64), missing_fraction, drop)


# -- Preprocessing III ---------------------------------------------------------

def model_inputs(table: AlignedMonthTable, gstats: GlobalStats) -> tuple[np.ndarray, np.ndarray]:
    """Gap-filled, standardized features of every row, plus the per-row gap-filled mask."""
    if table.feature_names != gstats.feature_names:
        raise PreprocessError(f"{table.month_id}: features do not match global statistics")
    keep = gstats.kept
    x = table.features[:, keep]
    gaps = table.features_missing[:, keep]
    mean = gstats.weighted_mean[keep]
    x = np.where(gaps, mean, x)
    return (x - mean) / gstats.pooled_std[keep], gaps.any(axis=1)


def sample_weight(lat_deg, w_min: float) -> np.ndarray:
    c = np.cos(np.radians(np.asarray(lat_deg, dtype=np.float64)))
    return np.maximum(w_min, c * c)


def row_flags(table: AlignedMonthTable, gstats: GlobalStats, thresholds: Thresholds):
    """Flags for every aligned row, plus the scaled model inputs."""
    x, filled = model_inputs(table, gstats)
    flags = np.zeros(len(table), dtype=np.int64)
    flags[table.critical] |= int(Flag.CRITICAL_GAP)
    flags[filled] |= int(Flag.GAP_FILLED)
    flags[table.quiet > thresholds.quiet] |= int(Flag.NOT_QUIET)
    flags[(np.abs(x) > thresholds.k_outlier).any(axis=1)] |= int(Flag.OUTLIER)
    return flags, x


@dataclass
class CleanMonthTable:
    month_id: str
    epoch_s: np.ndarray
    position: np.ndarray
    b_meas: np.ndarray
    b_ref: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    weight: np.ndarray
    flags: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.epoch_s)

    @property
    def target(self) -> np.ndarray:
        return self.b_meas - self.b_ref

    @property
    def held_out(self) -> np.ndarray:
        return (self.flags & int(Flag.HELD_OUT)) != 0

    def to_frame(self) -> pd.DataFrame:
        return pd.concat(
            [
                pd.DataFrame({"epoch_s": self.epoch_s}),
                pd.DataFrame(self.position, columns=list(POSITION_COLUMNS)),
                pd.DataFrame(self.b_meas, columns=list(BMEAS_COLUMNS)),
                pd.DataFrame(self.b_ref, columns=list(BREF_COLUMNS)),
                pd.DataFrame(self.features, columns=list(self.feature_names)),
                pd.DataFrame({"weight": self.weight, "flags": self.flags}),
            ],
            axis=1,
        )

    @classmethod
    def from_frame(cls, month_id: str, df: pd.DataFrame) -> "CleanMonthTable":
        names = tuple(c for c in df.columns if c.startswith("f_"))
        return cls(
            month_id=month_id,
            epoch_s=df["epoch_s"].to_numpy(dtype=np.int64),
            position=df[list(POSITION_COLUMNS)].to_numpy(dtype=np.float64),
            b_meas=df[list(BMEAS_COLUMNS)].to_numpy(dtype=np.float64),
            b_ref=df[list(BREF_COLUMNS)].to_numpy(dtype=np.float64),
            features=df[list(names)].to_numpy(dtype=np.float64).reshape(len(df), len(names)),
            feature_names=names,
            weight=df["weight"].to_numpy(dtype=np.float64),
            flags=df["flags"].to_numpy(dtype=np.int64),
        )

    def write(self, directory: Path) -> Path:
        path = Path(directory) / f"clean_{self.month_id}.csv"
        write_csv(self.to_frame(), path)
        return path

    @classmethod
    def read(cls, directory: Path, month_id: str) -> "CleanMonthTable":
        return cls.from_frame(month_id, read_csv(Path(directory) / f"clean_{month_id}.csv"))


def holdout_count(n: int, fraction: float) -> int:
    if n <= 1:
        return 0
    return min(int(round(fraction * n)), n - 1)


def preprocess3(
    table: AlignedMonthTable,
    gstats: GlobalStats,
    thresholds: Thresholds = Thresholds(),
    seed: int = 0,
    validation_fraction: float = 0.1,
) -> tuple[CleanMonthTable, pd.DataFrame]:
    """Filter, fill, scale, weight and shuffle one month.

    Returns the clean table and the sidecar of excluded rows (aligned columns
    plus an integer ``flags`` column). The last ``validation_fraction`` of the
    shuffled rows carry HELD_OUT.
    """
    flags, x = row_flags(table, gstats, thresholds)
    keep = (flags & EXCLUDING_FLAGS) == 0
    if not keep.any():
        raise PreprocessError(f"{table.month_id}: no rows survive cleaning")

    rows = np.flatnonzero(keep)
    rows = rows[shuffle_permutation(len(rows), SeededRng(derive_seed(seed, "preprocessing3", table.month_id)))]
    out_flags = flags[rows].copy()
    n_val = holdout_count(len(rows), validation_fraction)
    if n_val:
        out_flags[-n_val:] |= int(Flag.HELD_OUT)

    clean = CleanMonthTable(
        month_id=table.month_id,
        epoch_s=table.epoch_s[rows],
        position=table.position[rows],
        b_meas=table.b_meas[rows],
        b_ref=table.b_ref[rows],
        features=x[rows],
        feature_names=gstats.kept_names,
        weight=sample_weight(table.position[rows, 0], thresholds.w_min),
        flags=out_flags,
    )
    excluded = table.to_frame().iloc[np.flatnonzero(~keep)].reset_index(drop=True)
    excluded["flags"] = flags[~keep]
    return clean, excluded


def write_excluded(excluded: pd.DataFrame, directory: Path, month_id: str) -> Path:
    path = Path(directory) / f"excluded_{month_id}.csv"
    write_csv(excluded, path)
    return path


def read_excluded(directory: Path, month_id: str) -> pd.DataFrame:
    return read_csv(Path(directory) / f"excluded_{month_id}.csv")
