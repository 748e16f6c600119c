# A tour of one synthetic month: raw streams, the hidden disturbance, and what
# the preprocessing does to it. Run top to bottom: python demos/01_synthetic_mission.py

import numpy as np

from magcal.core import Flag
from magcal.preprocess import preprocess1, preprocess2, preprocess3, prepare_month
from magcal.synthgen import MissionConfig, generate_month

# %% generate two small months
cfg = MissionConfig(n_months=2, samples_per_day=288, seed=3)
bundles = [generate_month(i, cfg) for i in range(cfg.n_months)]
b = bundles[0]
print(b.month_id, "mag rows:", len(b.mag), "hk rows:", len(b.hk), "tm rows:", len(b.tm))
print(b.mag.head())

# %% the disturbance the network has to learn (kept only in truth.csv)
d = b.truth[["d1", "d2", "d3"]].to_numpy()
print("disturbance RMS per axis [nT]:", np.sqrt(np.mean(d**2, axis=0)).round(2))

# %% align everything on magnetometer timestamps and attach the dipole reference
tables = [prepare_month(x) for x in bundles]
t = tables[0]
resid = t.b_meas - t.b_ref
ok = ~t.critical
print("aligned rows:", len(t), "critical rows:", int(t.critical.sum()))
print("uncalibrated |b_meas - b_ref| RMS:", np.sqrt(np.mean(np.sum(resid[ok] ** 2, axis=1))).round(2), "nT")

# %% scatter: per-month sums; gather: pooled mean and std
stats = [preprocess1(x) for x in tables]
g = preprocess2(stats)
print("features kept:", len(g.kept), "of", len(g.feature_names), "dropped:", [g.feature_names[i] for i in g.drop_list])
print("pooled std, first five:", g.pooled_std[:5].round(3))

# %% filter, fill, standardize, weight, shuffle
clean, excluded = preprocess3(t, g, seed=cfg.seed)
print("clean rows:", len(clean), "excluded rows:", len(excluded))
for f in (Flag.OUTLIER, Flag.NOT_QUIET, Flag.CRITICAL_GAP):
    print(f"  {f.name:12s}", int(((excluded["flags"] & int(f)) != 0).sum()))
print("held out for validation:", int(clean.held_out.sum()))
print("standardized features, mean ~0 / std ~1:", clean.features.mean().round(3), clean.features.std().round(3))
