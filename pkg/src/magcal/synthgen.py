"""Synthetic satellite mission: orbit, dipole reference field, platform channels and disturbances.

Every month is a pure function of ``(month_index, MissionConfig, DipoleModel)``;
months can be generated in any order or concurrently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import (
    BMEAS_COLUMNS,
    POSITION_COLUMNS,
    REFERENCE_RADIUS_KM,
    SeededRng,
    derive_seed,
    feature_names,
    month_bounds,
    month_range,
    read_csv,
    shuffle_permutation,
    write_csv,
)

ORBIT_ALTITUDE_KM = 260.0
ORBIT_INCLINATION_DEG = 96.7
ORBIT_PERIOD_S = 5400.0
SIDEREAL_DAY_S = 86164.0905

# log-normal activity index: P(index > 3.0) = 0.15 for a unit-variance driver
QUIET_LOG_MEAN = 0.4768
QUIET_LOG_SIGMA = 0.6


@dataclass(frozen=True)
class DipoleModel:
    b0: float = 30000.0
    tilt_deg: float = 11.0

    def __post_init__(self):
        if not self.b0 > 0:
            raise ValueError("b0 must be positive")
        if not abs(self.tilt_deg) < 90:
            raise ValueError("|tilt_deg| must be below 90")


def _default_coupling(n: int) -> tuple[float, ...]:
    gains = SeededRng(derive_seed(0, "coupling")).normal(n, sigma=10.0)
    return tuple(float(g) for g in gains)


@dataclass(frozen=True)
class MissionConfig:
    n_months: int = 12
    start_month: str = "2010-01"
    samples_per_day: int = 1440
    n_features: int = 24
    coupling: tuple[float, ...] | None = None  # nT per feature unit; None -> fixed default gains
    noise_sigma: float = 0.5
    gap_fraction: float = 0.02
    outlier_fraction: float = 0.005
    drift_nT: float = 5.0
    seed: int = 1

    def __post_init__(self):
        if self.n_months < 1:
            raise ValueError("n_months must be >= 1")
        if self.n_features < 4:
            raise ValueError("n_features must be >= 4")
        if not 0 <= self.gap_fraction < 1 or not 0 <= self.outlier_fraction < 1:
            raise ValueError("gap_fraction and outlier_fraction must lie in [0, 1)")
        if self.samples_per_day < 1 or 86400 // self.samples_per_day < 2:
            raise ValueError("samples_per_day must give a cadence of at least 2 s")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.coupling is None:
            object.__setattr__(self, "coupling", _default_coupling(self.n_features))
        else:
            object.__setattr__(self, "coupling", tuple(float(c) for c in self.coupling))
        if len(self.coupling) != self.n_features:
            raise ValueError("coupling length must equal n_features")

    @property
    def months(self) -> list[str]:
        return month_range(self.start_month, self.n_months)

    @property
    def cadence_s(self) -> int:
        return 86400 // self.samples_per_day

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["coupling"] = list(self.coupling)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MissionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mission config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("coupling") is not None:
            d["coupling"] = tuple(d["coupling"])
        return cls(**d)


# -- geometry ----------------------------------------------------------------

def orbit(t, period_s: float = ORBIT_PERIOD_S, inclination_deg: float = ORBIT_INCLINATION_DEG):
    """Circular polar orbit: (lat_deg, lon_deg, r_km) arrays for epoch seconds ``t``.

    Ascending node at t = 0 on the prime meridian; the ground track drifts
    west with Earth rotation.
    """
    t = np.asarray(t, dtype=np.float64)
    u = 2 * np.pi * t / period_s
    inc = np.radians(inclination_deg)
    lat = np.degrees(np.arcsin(np.sin(inc) * np.sin(u)))
    lon_inertial = np.arctan2(np.cos(inc) * np.sin(u), np.cos(u))
    lon = np.degrees(lon_inertial - 2 * np.pi * t / SIDEREAL_DAY_S)
    lon = (lon + 180.0) % 360.0 - 180.0
    r = np.full_like(t, REFERENCE_RADIUS_KM + ORBIT_ALTITUDE_KM)
    return lat, lon, r


def dipole_field(lat_deg, lon_deg, r_km, model: DipoleModel = DipoleModel()) -> np.ndarray:
    """Centered tilted dipole in the local spherical frame (B_r, B_theta, B_phi), nT.

    The axis is tilted by ``model.tilt_deg`` toward the prime meridian. With
    magnetic colatitude th: B_r = -2 b0 (a/r)^3 cos th, B_th = -b0 (a/r)^3 sin th.
    Accepts scalars or arrays; returns shape (..., 3).
    """
    lat = np.radians(np.asarray(lat_deg, dtype=np.float64))
    lon = np.radians(np.asarray(lon_deg, dtype=np.float64))
    r = np.asarray(r_km, dtype=np.float64)
    if np.any(r < REFERENCE_RADIUS_KM):
        raise ValueError("position below the reference radius")
    tilt = np.radians(model.tilt_deg)
    axis = np.array([np.sin(tilt), 0.0, np.cos(tilt)])

    clat, slat = np.cos(lat), np.sin(lat)
    clon, slon = np.cos(lon), np.sin(lon)
    r_hat = np.stack([clat * clon, clat * slon, slat], axis=-1)
    th_hat = np.stack([slat * clon, slat * slon, -clat], axis=-1)
    ph_hat = np.stack([-slon, clon, np.zeros_like(lon)], axis=-1)

    cos_m = r_hat @ axis
    scale = model.b0 * (REFERENCE_RADIUS_KM / r) ** 3
    # B = b0 (a/r)^3 [m - 3 (m.r) r] with m the unit axis (moment points south)
    b_cart = scale[..., None] * (axis - 3.0 * cos_m[..., None] * r_hat)
    return np.stack(
        [
            np.sum(b_cart * r_hat, axis=-1),
            np.sum(b_cart * th_hat, axis=-1),
            np.sum(b_cart * ph_hat, axis=-1),
        ],
        axis=-1,
    )


def feature_directions(n: int) -> np.ndarray:
    """Fixed unit vectors along which each channel's disturbance acts, shape (n, 3)."""
    v = SeededRng(derive_seed(0, "directions")).normal(3 * n).reshape(n, 3)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def drift(month_index: int, cfg: MissionConfig) -> np.ndarray:
    k = np.arange(3)
    return cfg.drift_nT * np.sin(2 * np.pi * month_index / 12.0 + 2 * np.pi * k / 3.0)


# -- platform channels ---------------------------------------------------------

@dataclass
class _Channels:
    """Analytic feature signals valid on one month's (padded) time span."""

    kinds: np.ndarray
    sin_params: list  # per feature: (offset, amplitudes, periods, phases)
    ramps: dict = field(default_factory=dict)  # feature -> (knot times, knot values)

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.empty((len(t), len(self.kinds)))
        for i, (offset, amps, periods, phases) in enumerate(self.sin_params):
            if i in self.ramps:
                knots, values = self.ramps[i]
                out[:, i] = np.interp(t, knots, values)
            else:
                arg = 2 * np.pi * t[:, None] / periods[None, :] + phases[None, :]
                out[:, i] = offset + np.sin(arg) @ amps
        return out


def _channels(month_index: int, cfg: MissionConfig, t0: float, t1: float) -> _Channels:
    n = cfg.n_features
    kinds = np.arange(n) % 4
    sin_params = []
    for i in range(n):
        rng = SeededRng(derive_seed(cfg.seed, "channel", i))
        if kinds[i] == 0:  # temperature: orbital cycle plus slow trend
            periods = np.array([ORBIT_PERIOD_S, 86400.0 * (3 + 4 * rng.uniform(1)[0])])
            amps = np.array([3.0, 2.0])
            offset = 2.0
        elif kinds[i] == 1:  # currents: smooth broadband wander
            periods = 3000.0 * 10 ** (2 * rng.uniform(4))
            amps = rng.uniform(4, 0.2, 0.6)
            offset = 1.5
        elif kinds[i] == 3:  # attitude-like channel
            periods = np.array([ORBIT_PERIOD_S, 86400.0 * 7])
            amps = np.array([1.0, 0.3])
            offset = 0.0
        else:
            periods, amps, offset = np.ones(1), np.zeros(1), 0.0
        phases = rng.uniform(len(periods), 0, 2 * np.pi)
        sin_params.append((offset, amps, periods, phases))

    ramps = {}
    for i in np.flatnonzero(kinds == 2):  # system activations: on/off with 10-min ramps
        rng = SeededRng(derive_seed(cfg.seed, "activation", int(i), month_index))
        expected = int((t1 - t0) / 7200.0) + 8
        gaps = 600.0 + rng.uniform(expected) * 13200.0
        switches = t0 - 7200.0 + np.cumsum(gaps)
        switches = switches[switches < t1 + 7200.0]
        state0 = float(rng.uniform(1)[0] < 0.5)
        knots = [t0 - 7200.0]
        values = [state0]
        state = state0
        for s in switches:
            knots += [s, s + 600.0]
            values += [state, 1.0 - state]
            state = 1.0 - state
        knots.append(max(knots[-1], t1 + 7200.0) + 1.0)
        values.append(state)
        ramps[int(i)] = (np.array(knots), np.array(values))
    return _Channels(kinds, sin_params, ramps)


def _quiet_index(t: np.ndarray, cfg: MissionConfig) -> np.ndarray:
    rng = SeededRng(derive_seed(cfg.seed, "quiet"))
    m = 6
    periods = 86400.0 * (0.3 + 4.7 * rng.uniform(m))
    phases = rng.uniform(m, 0, 2 * np.pi)
    z = np.sin(2 * np.pi * t[:, None] / periods[None, :] + phases[None, :]) @ np.full(m, np.sqrt(2.0 / m))
    return np.exp(QUIET_LOG_MEAN + QUIET_LOG_SIGMA * z)


def _mask_runs(n: int, fraction: float, rng: SeededRng, max_run: int = 120) -> np.ndarray:
    """Boolean mask with exactly round(fraction * n) cells set, in contiguous runs."""
    target = int(round(fraction * n))
    mask = np.zeros(n, dtype=bool)
    count = 0
    while count < target:
        start = int(rng.integers_below(np.array([n]))[0])
        length = 5 + int(rng.integers_below(np.array([max_run - 4]))[0])
        seg = mask[start:start + length]
        fresh = np.flatnonzero(~seg)[: target - count]
        seg[fresh] = True
        count += len(fresh)
    return mask


# -- month bundle ------------------------------------------------------------

@dataclass
class RawBundle:
    month_id: str
    mag: pd.DataFrame
    hk: pd.DataFrame
    tm: pd.DataFrame
    truth: pd.DataFrame

    def write(self, raw_dir: Path) -> Path:
        d = Path(raw_dir) / self.month_id
        for name in ("mag", "hk", "tm", "truth"):
            write_csv(getattr(self, name), d / f"{name}.csv")
        return d

    @classmethod
    def read(cls, raw_dir: Path, month_id: str) -> "RawBundle":
        d = Path(raw_dir) / month_id
        if not d.is_dir():
            raise FileNotFoundError(f"raw bundle missing: {d}")
        truth_path = d / "truth.csv"
        truth = read_csv(truth_path) if truth_path.exists() else pd.DataFrame()
        return cls(month_id, read_csv(d / "mag.csv"), read_csv(d / "hk.csv"), read_csv(d / "tm.csv"), truth)


def split_channels(n_features: int) -> tuple[list[str], list[str]]:
    """Channel names carried by the housekeeping and telemetry streams."""
    names = list(feature_names(n_features))
    half = n_features // 2
    return names[:half], names[half:]


def generate_month(month_index: int, cfg: MissionConfig, model: DipoleModel = DipoleModel()) -> RawBundle:
    if not 0 <= month_index < cfg.n_months:
        raise ValueError(f"month_index {month_index} outside [0, {cfg.n_months})")
    month_id = cfg.months[month_index]
    start, end = month_bounds(month_id)
    dt = cfg.cadence_s
    hk_dt, tm_dt = max(1, dt // 2), 2 * dt

    t_mag = np.arange(start + dt // 3, end, dt, dtype=np.int64)
    t_hk = np.arange(start, end + hk_dt + 1, hk_dt, dtype=np.int64)
    t_tm = np.arange(start, end + tm_dt + 1, tm_dt, dtype=np.int64)
    n = len(t_mag)

    channels = _channels(month_index, cfg, float(start), float(end))
    f_mag = channels.evaluate(t_mag)
    gains = np.asarray(cfg.coupling)
    d = (f_mag * gains) @ feature_directions(cfg.n_features) + drift(month_index, cfg)

    lat, lon, r = orbit(t_mag)
    b_ref = dipole_field(lat, lon, r, model)
    rng = SeededRng(derive_seed(cfg.seed, "month", month_id))
    noise = rng.normal(3 * n, sigma=cfg.noise_sigma).reshape(n, 3) if cfg.noise_sigma > 0 else np.zeros((n, 3))
    b_meas = b_ref + d + noise

    n_out = int(round(cfg.outlier_fraction * n))
    if n_out:
        rows = shuffle_permutation(n, rng)[:n_out]
        direction = rng.normal(3 * n_out).reshape(n_out, 3)
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        scale = cfg.noise_sigma if cfg.noise_sigma > 0 else 1.0
        size = rng.uniform(n_out, 20.0, 50.0) * scale
        b_meas[rows] += direction * size[:, None]

    position = np.stack([lat, lon, r], axis=1)
    b_meas_missing = np.repeat(_mask_runs(n, cfg.gap_fraction, rng)[:, None], 3, axis=1)
    pos_missing = np.repeat(_mask_runs(n, cfg.gap_fraction, rng)[:, None], 3, axis=1)

    mag = pd.concat(
        [
            pd.DataFrame({"epoch_s": t_mag}),
            pd.DataFrame(np.where(pos_missing, np.nan, position), columns=list(POSITION_COLUMNS)),
            pd.DataFrame(np.where(b_meas_missing, np.nan, b_meas), columns=list(BMEAS_COLUMNS)),
            pd.DataFrame({"quiet": _quiet_index(t_mag.astype(np.float64), cfg)}),
        ],
        axis=1,
    )

    hk_names, tm_names = split_channels(cfg.n_features)
    streams = []
    for t_src, names in ((t_hk, hk_names), (t_tm, tm_names)):
        idx = [int(nm[2:]) for nm in names]
        values = channels.evaluate(t_src)[:, idx]
        for j in range(len(names)):
            values[_mask_runs(len(t_src), cfg.gap_fraction, rng), j] = np.nan
        streams.append(pd.concat([pd.DataFrame({"epoch_s": t_src}), pd.DataFrame(values, columns=names)], axis=1))

    truth = pd.concat([pd.DataFrame({"epoch_s": t_mag}), pd.DataFrame(d, columns=["d1", "d2", "d3"])], axis=1)
    return RawBundle(month_id, mag, streams[0], streams[1], truth)
