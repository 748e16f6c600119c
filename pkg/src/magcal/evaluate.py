"""Calibration quality against the hidden ground truth of a synthetic mission.

Residuals are computed over unflagged published records (flags == 0), split
into bands by geographic |lat|.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .core import BMEAS_COLUMNS, POSITION_COLUMNS, read_csv
from .publish import BCAL_COLUMNS, DHAT_COLUMNS
from .synthgen import DipoleModel, dipole_field

BANDS = (("low_mid", 0.0, 50.0), ("high", 50.0, 70.0), ("polar", 70.0, 90.0))
TRUTH_COLUMNS = ("d1", "d2", "d3")


class EvaluationError(ValueError):
    pass


def band_of(lat_deg) -> np.ndarray:
    """Band index per latitude: 0 for |lat| <= 50, 1 for 50 < |lat| <= 70, 2 above."""
    a = np.abs(np.asarray(lat_deg, dtype=np.float64))
    return np.where(a <= 50.0, 0, np.where(a <= 70.0, 1, 2))


def rms_norm(v: np.ndarray) -> float:
    """sqrt(mean ||v_i||^2) over rows; NaN for an empty array."""
    if len(v) == 0:
        return float("nan")
    return float(np.sqrt(np.mean(np.sum(v * v, axis=1))))


def load_published_month(published: Path, month: str) -> pd.DataFrame:
    files = sorted((Path(published) / month).glob("GO_MAG_CAL_*.csv"))
    if not files:
        raise EvaluationError(f"no published files for {month} under {published}")
    return pd.concat([read_csv(f) for f in files], ignore_index=True)


def load_truth(raw: Path, month: str) -> pd.DataFrame:
    path = Path(raw) / month / "truth.csv"
    if not path.exists():
        raise EvaluationError(f"{path} not found: evaluation requires synthetic data with ground truth")
    return read_csv(path)


def month_residuals(records: pd.DataFrame, truth: pd.DataFrame, model: DipoleModel) -> pd.DataFrame:
    """Per unflagged record: latitude, band and the three residual vectors' squared norms."""
    rec = records[records["flags"] == 0]
    rec = rec.merge(truth, on="epoch_s", how="left", validate="one_to_one")
    if rec[list(TRUTH_COLUMNS)].isna().any().any():
        raise EvaluationError("published records without a matching ground-truth row")
    pos = rec[list(POSITION_COLUMNS)].to_numpy()
    b_ref = dipole_field(pos[:, 0], pos[:, 1], pos[:, 2], model)
    b_meas = rec[list(BMEAS_COLUMNS)].to_numpy()
    b_cal = rec[list(BCAL_COLUMNS)].to_numpy()
    d_hat = rec[list(DHAT_COLUMNS)].to_numpy()
    d_true = rec[list(TRUTH_COLUMNS)].to_numpy()
    return pd.DataFrame(
        {
            "lat_deg": pos[:, 0],
            "band": band_of(pos[:, 0]),
            "pre": np.sum((b_meas - b_ref) ** 2, axis=1),
            "post": np.sum((b_cal - b_ref) ** 2, axis=1),
            "dhat_err": np.sum((d_hat - d_true) ** 2, axis=1),
        }
    )


def _summary(res: pd.DataFrame) -> dict:
    def rms(col):
        return float(np.sqrt(res[col].mean())) if len(res) else None

    return {"count": int(len(res)), "rms_pre": rms("pre"), "rms_post": rms("post"), "rms_dhat_error": rms("dhat_err")}


def finetune_deltas(models_dir: Path, months: list[str]) -> dict:
    """Validation loss of each month's fine-tuned model against the global model, nT^2."""
    rows = {}
    for m in months:
        path = Path(models_dir) / f"train_{m}.json"
        if not path.exists():
            continue
        rep = json.loads(path.read_text())
        fine = rep["validation_loss"]
        glob = rep.get("extra", {}).get("global_validation_loss")
        if fine is None or glob is None:
            continue
        rows[m] = {"finetuned": fine, "global": glob, "delta": fine - glob, "improved": bool(fine < glob)}
    frac = float(np.mean([r["improved"] for r in rows.values()])) if rows else None
    return {"months": rows, "fraction_improved": frac}


def evaluate(workdir: Path, months: list[str] | None = None, data_dir: str = "raw",
             model: DipoleModel = DipoleModel()) -> dict:
    """Metrics JSON for a finished run under ``workdir``."""
    workdir = Path(workdir)
    published = workdir / "published"
    if months is None:
        months = sorted(p.name for p in published.iterdir() if p.is_dir()) if published.is_dir() else []
    if not months:
        raise EvaluationError(f"no published months under {published}")
    parts, total_records = [], 0
    for m in months:
        records = load_published_month(published, m)
        total_records += len(records)
        parts.append(month_residuals(records, load_truth(workdir / data_dir, m), model))
    res = pd.concat(parts, ignore_index=True)
    bands = {name: _summary(res[res["band"] == i]) for i, (name, _, _) in enumerate(BANDS)}
    return {
        "months": list(months),
        "records": total_records,
        "unflagged": int(len(res)),
        "bands": bands,
        "band_limits_deg": {name: [lo, hi] for name, lo, hi in BANDS},
        "all": _summary(res),
        "finetune": finetune_deltas(workdir / "models", months),
    }
