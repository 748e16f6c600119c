import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magcal.core import EXCLUDING_FLAGS, AlignedMonthTable, Flag
from magcal.preprocess import (
    CleanMonthTable,
    GlobalStats,
    MonthStats,
    PreprocessError,
    Thresholds,
    holdout_count,
    interpolate_masked,
    prepare_month,
    preprocess1,
    preprocess2,
    preprocess3,
    read_excluded,
    sample_weight,
    write_excluded,
)
from magcal.synthgen import RawBundle


def make_table(features, missing=None, lat=None, quiet=None, b_missing=None, month="2010-01"):
    features = np.asarray(features, dtype=float)
    n, f = features.shape
    missing = np.zeros((n, f), bool) if missing is None else np.asarray(missing, bool)
    lat = np.zeros(n) if lat is None else np.asarray(lat, float)
    pos = np.column_stack([lat, np.zeros(n), np.full(n, 6631.2)])
    bm_missing = np.zeros((n, 3), bool) if b_missing is None else np.asarray(b_missing, bool)
    return AlignedMonthTable(
        month_id=month,
        epoch_s=np.arange(n, dtype=np.int64) * 10 + 1262304000,
        position=pos,
        position_missing=np.zeros((n, 3), bool),
        b_meas=np.ones((n, 3)),
        b_meas_missing=bm_missing,
        b_ref=np.zeros((n, 3)),
        features=np.where(missing, 0.0, features),
        features_missing=missing,
        quiet=np.zeros(n) if quiet is None else np.asarray(quiet, float),
        feature_names=tuple(f"f_{i:03d}" for i in range(f)),
    )


# -- interpolation and alignment ---------------------------------------------------

def test_interpolation_examples():
    v, m = interpolate_masked([0, 10], [0.0, 10.0], [False, False], [4])
    assert v[0] == 4.0 and not m[0]
    v, m = interpolate_masked([0, 5, 10], [5.0, 5.0, 5.0], [False] * 3, [0, 2, 5, 7, 10])
    np.testing.assert_array_equal(v, 5.0)
    assert not m.any()


def test_interpolation_missing_rules():
    t = [0, 10, 20, 30]
    vals = [0.0, 10.0, 20.0, 30.0]
    # one bracket missing: take the present neighbour; both missing: missing
    v, m = interpolate_masked(t, vals, [False, True, False, False], [5, 25])
    assert v[0] == 0.0 and not m[0]
    assert v[1] == 25.0 and not m[1]
    v, m = interpolate_masked(t, vals, [False, True, True, False], [15])
    assert m[0] and v[0] == 0.0
    # outside the span: missing, no extrapolation
    v, m = interpolate_masked(t, vals, [False] * 4, [-1, 31, 30])
    assert m.tolist() == [True, True, False]
    assert v[2] == 30.0


def test_prepare_month_constant_channel_and_counts(small_bundles):
    b = small_bundles[0]
    hk = b.hk.copy()
    hk["f_000"] = 5.0
    table = prepare_month(RawBundle(b.month_id, b.mag, hk, b.tm, b.truth))
    assert len(table) == len(b.mag)
    col = table.feature_names.index("f_000")
    np.testing.assert_array_equal(table.features[:, col], 5.0)
    assert not table.features_missing[:, col].any()


def test_prepare_month_sorts_and_dedups(small_bundles):
    b = small_bundles[0]
    shuffled = pd.concat([b.mag.iloc[::-1], b.mag.iloc[:5]], ignore_index=True)
    table = prepare_month(RawBundle(b.month_id, shuffled, b.hk, b.tm, b.truth))
    assert len(table) == len(b.mag)
    assert np.all(np.diff(table.epoch_s) > 0)


def test_prepare_month_empty_stream_fails(small_bundles):
    b = small_bundles[0]
    with pytest.raises(PreprocessError):
        prepare_month(RawBundle(b.month_id, b.mag.iloc[:0], b.hk, b.tm, b.truth))


# -- statistics --------------------------------------------------------------------

def test_preprocess1_examples():
    s = preprocess1(make_table([[1.0, 0.0], [2.0, 0.0], [0.0, 0.0], [3.0, 0.0]],
                               missing=[[False, True], [False, True], [True, True], [False, True]]))
    assert (s.sum[0], s.count[0], s.missing[0]) == (6.0, 3, 1)
    assert (s.sum[1], s.count[1]) == (0.0, 0)
    np.testing.assert_array_equal(s.count + s.missing, s.row_count)


def test_preprocess1_without_gaps_counts_every_row(small_bundles):
    from magcal.synthgen import MissionConfig, generate_month

    t = prepare_month(generate_month(0, MissionConfig(n_months=1, samples_per_day=48, gap_fraction=0.0)))
    s = preprocess1(t)
    # the first magnetometer sample precedes no stream start, so nothing is missing
    np.testing.assert_array_equal(s.count, s.row_count)


def test_preprocess2_examples():
    a = preprocess1(make_table([[1.0, 7.0], [2.0, 8.0], [3.0, 9.0]]))
    b = preprocess1(make_table([[4.0, 7.0], [0.0, 9.0]], missing=[[False, False], [True, False]], month="2010-02"))
    g = preprocess2([a, b])
    assert g.weighted_mean[0] == 10.0 / 4
    single = preprocess2([a])
    assert single.weighted_mean[0] == 2.0
    c = preprocess1(make_table([[1.0, 5.0], [2.0, 5.0]]))
    d = preprocess1(make_table([[3.0, 5.0]], month="2010-02"))
    g = preprocess2([c, d])
    assert g.pooled_std[1] == 0.0 and 1 in g.drop_list
    assert g.kept_names == ("f_000",)


def test_preprocess2_drops_sparse_features_and_rejects_empty():
    missing = np.zeros((10, 2), bool)
    missing[:3, 1] = True  # 30% missing
    g = preprocess2([preprocess1(make_table(np.arange(20.0).reshape(10, 2), missing=missing))])
    assert g.drop_list == (1,)
    with pytest.raises(PreprocessError):
        preprocess2([preprocess1(make_table(np.ones((4, 2))))])


def test_pooled_oracle_and_scatter_gather(small_aligned):
    g = preprocess2([preprocess1(t) for t in small_aligned])
    for f in range(len(g.feature_names)):
        values = np.concatenate([t.features[~t.features_missing[:, f], f] for t in small_aligned])
        mean = np.mean(values)
        assert abs(g.weighted_mean[f] - mean) <= 1e-12 * abs(mean)
        std = np.std(values)
        assert abs(g.pooled_std[f] - std) <= 1e-9 * std


def test_stats_json_roundtrip(tmp_path, small_aligned):
    s = preprocess1(small_aligned[0])
    s.write(tmp_path)
    back = MonthStats.read(tmp_path, s.month_id)
    for k in ("sum", "sumsq", "count", "missing", "min", "max"):
        np.testing.assert_array_equal(getattr(back, k), getattr(s, k))
    g = preprocess2([s])
    g.write(tmp_path)
    g2 = GlobalStats.read(tmp_path)
    np.testing.assert_array_equal(g2.weighted_mean, g.weighted_mean)
    assert g2.drop_list == g.drop_list


# -- preprocessing III -------------------------------------------------------------

def test_sample_weight_examples():
    assert sample_weight(0.0, 0.05) == 1.0
    assert sample_weight(90.0, 0.05) == 0.05
    assert sample_weight(-90.0, 0.05) == 0.05


@given(st.floats(-90, 90), st.floats(-90, 90))
def test_sample_weight_monotone(a, b):
    if abs(a) < abs(b):
        assert sample_weight(a, 0.05) >= sample_weight(b, 0.05)


def _gstats_for(table):
    return preprocess2([preprocess1(table)])


def test_preprocess3_rules():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    missing = np.zeros_like(x, bool)
    missing[5, 1] = True
    b_missing = np.zeros((200, 3), bool)
    b_missing[7, 2] = True
    quiet = np.zeros(200)
    quiet[9] = 3.5
    base = make_table(x, missing=missing, quiet=quiet, b_missing=b_missing)
    g = _gstats_for(base)
    # a value (k+1) standard deviations above the mean trips the outlier rule
    x2 = base.features.copy()
    x2[11, 0] = g.weighted_mean[0] + 6.0 * g.pooled_std[0]
    table = make_table(x2, missing=missing, quiet=quiet, b_missing=b_missing)
    clean, excluded = preprocess3(table, g, Thresholds(), seed=3, validation_fraction=0.1)

    flags = dict(zip(excluded["epoch_s"], excluded["flags"]))
    assert flags[table.epoch_s[7]] & Flag.CRITICAL_GAP
    assert flags[table.epoch_s[9]] & Flag.NOT_QUIET
    assert flags[table.epoch_s[11]] & Flag.OUTLIER
    assert table.epoch_s[7] not in set(clean.epoch_s)
    filled = clean.flags[clean.epoch_s == table.epoch_s[5]]
    assert len(filled) == 1 and filled[0] & Flag.GAP_FILLED
    assert len(clean) + len(excluded) == len(table)
    assert np.all(excluded["flags"] & EXCLUDING_FLAGS)
    assert not np.any(clean.flags & EXCLUDING_FLAGS)
    assert np.isfinite(clean.features).all()
    assert clean.held_out.sum() == holdout_count(len(clean), 0.1)
    assert clean.held_out[-holdout_count(len(clean), 0.1):].all()


def test_preprocess3_standardizes_with_global_stats(small_aligned):
    g = preprocess2([preprocess1(t) for t in small_aligned])
    cleans = [preprocess3(t, g)[0] for t in small_aligned]
    # standardization is exact over the statistics' own population (present aligned values)
    for j, f in enumerate(g.kept):
        vals = np.concatenate([t.features[~t.features_missing[:, f], f] for t in small_aligned])
        assert abs(np.mean((vals - g.weighted_mean[f]) / g.pooled_std[f])) <= 1e-6
    # over clean rows the mean is only near zero, since filtering happens after the statistics
    x = np.vstack([c.features for c in cleans])
    assert np.abs(x.mean(axis=0)).max() < 0.2


def test_preprocess3_shuffle_is_seeded(small_aligned):
    g = preprocess2([preprocess1(t) for t in small_aligned])
    a, _ = preprocess3(small_aligned[0], g, seed=1)
    b, _ = preprocess3(small_aligned[0], g, seed=1)
    c, _ = preprocess3(small_aligned[0], g, seed=2)
    np.testing.assert_array_equal(a.epoch_s, b.epoch_s)
    assert not np.array_equal(a.epoch_s, c.epoch_s)
    np.testing.assert_array_equal(np.sort(a.epoch_s), np.sort(c.epoch_s))


def test_preprocess3_no_survivors():
    t = make_table(np.random.default_rng(1).normal(size=(5, 2)), quiet=np.full(5, 9.0))
    with pytest.raises(PreprocessError):
        preprocess3(t, _gstats_for(t))


def test_clean_and_excluded_roundtrip(tmp_path, small_aligned):
    g = preprocess2([preprocess1(t) for t in small_aligned])
    clean, excluded = preprocess3(small_aligned[1], g)
    clean.write(tmp_path)
    write_excluded(excluded, tmp_path, clean.month_id)
    back = CleanMonthTable.read(tmp_path, clean.month_id)
    for k in ("epoch_s", "features", "weight", "flags", "b_meas", "b_ref"):
        np.testing.assert_array_equal(getattr(back, k), getattr(clean, k))
    ex = read_excluded(tmp_path, clean.month_id)
    np.testing.assert_array_equal(ex["flags"].to_numpy(), excluded["flags"].to_numpy())
    assert ex["flags"].dtype.kind == "i"
