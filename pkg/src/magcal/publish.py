"""Apply a month's model to every aligned row and write one record file per UTC day.

Record columns: epoch_s, lat_deg, lon_deg, r_km, bmeas1..3, dhat1..3, bcal1..3, flags.
Rows with a critical gap are published uncalibrated (dhat = 0) with their flags.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .core import (
    BMEAS_COLUMNS,
    POSITION_COLUMNS,
    AlignedMonthTable,
    day_of,
    days_in_month,
    masked_frame,
    month_bounds,
    write_csv,
)
from .neuralnet import ModelParams, forward
from .preprocess import CleanMonthTable, GlobalStats, model_inputs

DHAT_COLUMNS = ("dhat1", "dhat2", "dhat3")
BCAL_COLUMNS = ("bcal1", "bcal2", "bcal3")
RECORD_COLUMNS = ("epoch_s", *POSITION_COLUMNS, *BMEAS_COLUMNS, *DHAT_COLUMNS, *BCAL_COLUMNS, "flags")


class PublishError(RuntimeError):
    pass


def daily_filename(day: str) -> str:
    return f"GO_MAG_CAL_{day}.csv"


def calibrate_month(
    aligned: AlignedMonthTable,
    excluded: pd.DataFrame,
    clean: CleanMonthTable,
    model: ModelParams,
    gstats: GlobalStats,
) -> pd.DataFrame:
    """All records of the month, sorted by time."""
    if model.feature_names != gstats.kept_names:
        raise PublishError(f"{aligned.month_id}: model features {len(model.feature_names)} "
                           f"do not match the {len(gstats.kept_names)} surviving features")
    flags = pd.concat(
        [
            pd.Series(clean.flags, index=clean.epoch_s),
            pd.Series(excluded["flags"].to_numpy(dtype=np.int64), index=excluded["epoch_s"].to_numpy(dtype=np.int64)),
        ]
    )
    if flags.index.duplicated().any():
        raise PublishError(f"{aligned.month_id}: a row is both clean and excluded")
    try:
        row_flags = flags.loc[aligned.epoch_s].to_numpy(dtype=np.int64)
    except KeyError as exc:
        raise PublishError(f"{aligned.month_id}: rows missing from clean/excluded outputs") from exc
    if len(flags) != len(aligned):
        raise PublishError(f"{aligned.month_id}: clean/excluded outputs hold rows not in the aligned table")

    x, _ = model_inputs(aligned, gstats)
    d_hat = np.zeros((len(aligned), 3))
    usable = ~aligned.critical
    if usable.any():
        d_hat[usable] = forward(model, x[usable])
    b_cal = aligned.b_meas - d_hat

    return pd.concat(
        [
            pd.DataFrame({"epoch_s": aligned.epoch_s}),
            masked_frame(aligned.position, aligned.position_missing, POSITION_COLUMNS),
            masked_frame(aligned.b_meas, aligned.b_meas_missing, BMEAS_COLUMNS),
            pd.DataFrame(d_hat, columns=list(DHAT_COLUMNS)),
            masked_frame(b_cal, aligned.b_meas_missing, BCAL_COLUMNS),
            pd.DataFrame({"flags": row_flags}),
        ],
        axis=1,
    )


def publish_month(
    aligned: AlignedMonthTable,
    excluded: pd.DataFrame,
    clean: CleanMonthTable,
    model: ModelParams,
    gstats: GlobalStats,
    out_dir: Path,
) -> list[Path]:
    """Write ``<out_dir>/<YYYY-MM>/GO_MAG_CAL_<date>.csv`` for every day of the month."""
    records = calibrate_month(aligned, excluded, clean, model, gstats)
    start, end = month_bounds(aligned.month_id)
    epoch = records["epoch_s"].to_numpy(dtype=np.int64)
    if len(epoch) and (epoch.min() < start or epoch.max() >= end):
        raise PublishError(f"{aligned.month_id}: rows dated outside the month")
    day_index = (epoch - start) // 86400
    month_dir = Path(out_dir) / aligned.month_id
    paths = []
    for i in range(days_in_month(aligned.month_id)):
        path = month_dir / daily_filename(day_of(start + i * 86400))
        write_csv(records[day_index == i].reset_index(drop=True), path)
        paths.append(path)
    return paths
