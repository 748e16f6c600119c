"""Shared domain types: flags, seeded randomness, month calendar and the aligned table."""

from __future__ import annotations

import calendar
import enum
import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

# Geomagnetic reference radius.
REFERENCE_RADIUS_KM = 6371.2

POSITION_COLUMNS = ("lat_deg", "lon_deg", "r_km")
BMEAS_COLUMNS = ("bmeas1", "bmeas2", "bmeas3")
BREF_COLUMNS = ("bref1", "bref2", "bref3")


class Flag(enum.IntFlag):
    OUTLIER = 1
    NOT_QUIET = 2
    CRITICAL_GAP = 4
    GAP_FILLED = 8
    HELD_OUT = 16


ALL_FLAGS = int(Flag.OUTLIER | Flag.NOT_QUIET | Flag.CRITICAL_GAP | Flag.GAP_FILLED | Flag.HELD_OUT)
# Any of these removes a row from the training output.
EXCLUDING_FLAGS = int(Flag.OUTLIER | Flag.NOT_QUIET | Flag.CRITICAL_GAP)


def _flag_bit(name: str | Flag) -> int:
    if isinstance(name, Flag):
        return int(name)
    try:
        return int(Flag[name])
    except KeyError:
        raise ValueError(f"unknown flag {name!r}; expected one of {[f.name for f in Flag]}") from None


def flag_set(mask: int, name: str | Flag) -> int:
    return int(mask) | _flag_bit(name)


def flag_test(mask: int, name: str | Flag) -> bool:
    return bool(int(mask) & _flag_bit(name))


def derive_seed(run_seed: int, *parts: object) -> int:
    """Derive a 64-bit seed from the run seed and a key such as (task name, month)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(run_seed)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "little")


class SeededRng:
    """PCG64 (O'Neill 2014) stream with distribution transforms defined here.

    Only the raw 64-bit output of numpy's PCG64 bit generator is used; it is
    stable across numpy versions and platforms, unlike ``Generator`` methods.
    Uniforms take the top 53 bits, normals use Box-Muller.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.PCG64(self.seed)

    def raw(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        return np.asarray(self._bitgen.random_raw(n), dtype=np.uint64)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def normal(self, n: int, mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])[:n]
        return mean + sigma * z

    def integers_below(self, bounds: np.ndarray) -> np.ndarray:
        """One draw from [0, b) for every b in ``bounds``."""
        bounds = np.asarray(bounds, dtype=np.int64)
        j = np.floor(self.uniform(len(bounds)) * bounds).astype(np.int64)
        return np.minimum(j, bounds - 1)


def shuffle_permutation(n: int, rng: SeededRng) -> np.ndarray:
    """Index permutation produced by a Fisher-Yates pass of length ``n``."""
    perm = list(range(n))
    if n > 1:
        # j_i uniform on [0, i] for i = n-1 .. 1
        js = rng.integers_below(np.arange(n, 1, -1)).tolist()
        for i, j in zip(range(n - 1, 0, -1), js):
            perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def fisher_yates_shuffle(items: Sequence, rng: SeededRng) -> list:
    perm = shuffle_permutation(len(items), rng)
    return [items[i] for i in perm]


# -- calendar ---------------------------------------------------------------

def parse_month(month_id: str) -> tuple[int, int]:
    try:
        y, m = month_id.split("-")
        year, month = int(y), int(m)
    except ValueError:
        raise ValueError(f"month id must be YYYY-MM, got {month_id!r}") from None
    if not 1 <= month <= 12 or len(y) != 4 or len(m) != 2:
        raise ValueError(f"month id must be YYYY-MM, got {month_id!r}")
    return year, month


def month_range(start: str, n: int) -> list[str]:
    year, month = parse_month(start)
    out = []
    for _ in range(n):
        out.append(f"{year:04d}-{month:02d}")
        month += 1
        if month > 12:
            year, month = year + 1, 1
    return out


def month_bounds(month_id: str) -> tuple[int, int]:
    """[start, end) of the month in epoch seconds (UTC)."""
    year, month = parse_month(month_id)
    start = calendar.timegm((year, month, 1, 0, 0, 0))
    days = calendar.monthrange(year, month)[1]
    return start, start + days * 86400


def days_in_month(month_id: str) -> int:
    year, month = parse_month(month_id)
    return calendar.monthrange(year, month)[1]


def day_of(epoch_s: int) -> str:
    return datetime.fromtimestamp(int(epoch_s), tz=timezone.utc).strftime("%Y-%m-%d")


def feature_names(n: int) -> tuple[str, ...]:
    return tuple(f"f_{i:03d}" for i in range(n))


# -- CSV helpers -------------------------------------------------------------

def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])


def write_csv(df: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, na_rep="", lineterminator="\n")


def masked_frame(values: np.ndarray, missing: np.ndarray, columns: Sequence[str]) -> pd.DataFrame:
    v = np.where(missing, np.nan, values)
    return pd.DataFrame(v, columns=list(columns))


def unmask(df: pd.DataFrame, columns: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    v = df[list(columns)].to_numpy(dtype=np.float64)
    missing = np.isnan(v)
    return np.where(missing, 0.0, v), missing


# -- aligned table -----------------------------------------------------------

@dataclass(frozen=True)
class AlignedMonthTable:
    """One month of samples on the magnetometer timestamps.

    Missing cells are carried in the boolean ``*_missing`` arrays; the value
    arrays hold 0.0 there. ``b_ref`` is unavailable exactly where any
    position component is missing.
    """

    month_id: str
    epoch_s: np.ndarray          # (n,) int64
    position: np.ndarray         # (n, 3) lat_deg, lon_deg, r_km
    position_missing: np.ndarray  # (n, 3) bool
    b_meas: np.ndarray           # (n, 3)
    b_meas_missing: np.ndarray   # (n, 3) bool
    b_ref: np.ndarray            # (n, 3)
    features: np.ndarray         # (n, F)
    features_missing: np.ndarray  # (n, F) bool
    quiet: np.ndarray            # (n,)
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.epoch_s)
        if self.features.shape != (n, len(self.feature_names)):
            raise ValueError("feature array does not match feature names")
        if n > 1 and not np.all(np.diff(self.epoch_s) > 0):
            raise ValueError(f"{self.month_id}: timestamps must be unique and increasing")

    def __len__(self) -> int:
        return len(self.epoch_s)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def critical(self) -> np.ndarray:
        """Rows whose magnetometer reading or position is (partly) missing."""
        return self.b_meas_missing.any(axis=1) | self.position_missing.any(axis=1)

    def to_frame(self) -> pd.DataFrame:
        ref_missing = np.repeat(self.position_missing.any(axis=1)[:, None], 3, axis=1)
        parts = [
            pd.DataFrame({"epoch_s": self.epoch_s.astype(np.int64)}),
            masked_frame(self.position, self.position_missing, POSITION_COLUMNS),
            masked_frame(self.b_meas, self.b_meas_missing, BMEAS_COLUMNS),
            masked_frame(self.b_ref, ref_missing, BREF_COLUMNS),
            pd.DataFrame({"quiet": self.quiet}),
            masked_frame(self.features, self.features_missing, self.feature_names),
        ]
        return pd.concat(parts, axis=1)

    @classmethod
    def from_frame(cls, month_id: str, df: pd.DataFrame) -> "AlignedMonthTable":
        names = tuple(c for c in df.columns if c.startswith("f_"))
        pos, pos_missing = unmask(df, POSITION_COLUMNS)
        bm, bm_missing = unmask(df, BMEAS_COLUMNS)
        br, _ = unmask(df, BREF_COLUMNS)
        feats, feats_missing = unmask(df, names)
        return cls(
            month_id=month_id,
            epoch_s=df["epoch_s"].to_numpy(dtype=np.int64),
            position=pos,
            position_missing=pos_missing,
            b_meas=bm,
            b_meas_missing=bm_missing,
            b_ref=br,
            features=feats.reshape(len(df), len(names)),
            features_missing=feats_missing.reshape(len(df), len(names)),
            quiet=df["quiet"].to_numpy(dtype=np.float64),
            feature_names=names,
        )

    def write(self, directory: Path) -> Path:
        path = Path(directory) / f"aligned_{self.month_id}.csv"
        write_csv(self.to_frame(), path)
        return path

    @classmethod
    def read(cls, directory: Path, month_id: str) -> "AlignedMonthTable":
        return cls.from_frame(month_id, read_csv(Path(directory) / f"aligned_{month_id}.csv"))
