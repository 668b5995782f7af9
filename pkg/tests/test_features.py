import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import histogram as histogram_oracle
from oracles import quantile as quantile_oracle
from yieldboost.features import (
    HANDCRAFTED,
    N_BINS,
    FeatureTable,
    LeakageError,
    TableFormatError,
    build_feature_vector,
    build_table,
    cube_histograms,
    cube_triples,
    decode_feature_index,
    feature_index,
    feature_length,
    feature_names,
    handcrafted_features,
    histogramize,
    read_feature_table,
    summarize_distribution,
    write_feature_table,
)
from yieldboost.raster import BAND_NAMES, RasterCube


def single_band_cube(pixels, t=1):
    """A cube whose band 0 at step 0 holds ``pixels`` (NaN = invalid), other bands 0."""
    px = np.asarray(pixels, dtype=np.float32).ravel()
    values = np.zeros((t, 1, max(px.size, 1), len(BAND_NAMES)), np.float32)
    if px.size:
        values[0, 0, :, :] = np.where(np.isnan(px), np.nan, 0.0)[:, None]
        values[0, 0, :, 0] = px
    else:
        values[0] = np.nan
    return RasterCube("c", 2010, values)


def test_triple_examples():
    assert summarize_distribution(single_band_cube([7, 7, 7]), 0, 0) == (7.0, 7.0, 7.0)
    q = summarize_distribution(single_band_cube([5, 1, 4, 2, 3]), 0, 0)
    assert q == pytest.approx((1.8, 3.0, 4.2), abs=1e-12)
    assert all(math.isnan(v) for v in summarize_distribution(single_band_cube([np.nan]), 0, 0))


def test_triple_index_errors():
    with pytest.raises(IndexError):
        summarize_distribution(single_band_cube([1.0]), 11, 0)
    with pytest.raises(IndexError):
        histogramize(single_band_cube([1.0]), 0, 3, (0, 1))


@given(st.lists(st.floats(-1e3, 1e3, width=32), min_size=1, max_size=40), st.randoms())
def test_triples_match_oracle_and_are_permutation_invariant(pixels, rnd):
    q = summarize_distribution(single_band_cube(pixels), 0, 0)
    px = [float(v) for v in np.float32(pixels)]
    assert tuple(q) == tuple(quantile_oracle(px, p) for p in (0.2, 0.5, 0.8))
    assert q.q20 <= q.median <= q.q80
    shuffled = list(pixels)
    rnd.shuffle(shuffled)
    assert summarize_distribution(single_band_cube(shuffled), 0, 0) == q


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30), st.integers(-500, 500))
def test_triples_shift_with_constant(pixels, k):
    q = summarize_distribution(single_band_cube(pixels), 0, 0)
    s = summarize_distribution(single_band_cube([v + k for v in pixels]), 0, 0)
    for a, b in zip(q, s):
        assert b - a == pytest.approx(k, abs=1e-9)


def test_cube_triples_handles_whole_cube():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(3, 4, 5, len(BAND_NAMES))).astype(np.float32)
    values[1, :2] = np.nan
    values[2] = np.nan
    cube = RasterCube("c", 2010, values)
    tri = cube_triples(cube)
    assert tri.shape == (3, len(BAND_NAMES), 3)
    assert np.isnan(tri[2]).all()
    for t in range(2):
        for b in range(len(BAND_NAMES)):
            px = values[t, :, :, b].ravel()
            want = [quantile_oracle([float(v) for v in px], p) for p in (0.2, 0.5, 0.8)]
            assert tri[t, b].tolist() == want


def test_histogram_examples():
    lo, hi = 0.0, 32.0
    h = histogramize(single_band_cube([7.5] * 5), 0, 0, (lo, hi))
    assert h.freqs[7] == 1.0 and h.freqs.sum() == 1.0
    centers = [i + 0.5 for i in range(N_BINS)]
    h = histogramize(single_band_cube(centers), 0, 0, (lo, hi))
    assert np.all(h.freqs == 1 / 32)
    h = histogramize(single_band_cube([np.nan]), 0, 0, (lo, hi))
    assert h.valid_count == 0 and not h.freqs.any()


def test_histogram_clamps_and_includes_max():
    h = histogramize(single_band_cube([-5.0, 32.0, 99.0, 0.0]), 0, 0, (0.0, 32.0))
    assert h.freqs[0] == 0.5 and h.freqs[31] == 0.5


def test_histogram_bad_range():
    with pytest.raises(ValueError):
        histogramize(single_band_cube([1.0]), 0, 0, (1.0, 1.0))


@given(st.lists(st.floats(-10, 40, width=32) | st.just(float("nan")), min_size=1, max_size=50))
def test_histogram_matches_counting_oracle(pixels):
    h = histogramize(single_band_cube(pixels), 0, 0, (0.0, 32.0))
    want = histogram_oracle([float(v) for v in np.float32(pixels)], 0.0, 32.0)
    assert h.freqs.tolist() == pytest.approx(want, abs=1e-15)
    if h.valid_count:
        assert abs(h.freqs.sum() - 1.0) <= 1e-9


def test_cube_histograms_agree_with_histogramize():
    rng = np.random.default_rng(3)
    values = rng.uniform(-0.2, 1.2, size=(2, 3, 3, len(BAND_NAMES))).astype(np.float32)
    cube = RasterCube("c", 2010, values)
    ranges = {b: (0.0, 1.0) for b in BAND_NAMES}
    full = cube_histograms(cube, ranges)
    for t in range(2):
        for b in range(len(BAND_NAMES)):
            assert np.array_equal(full[t, b], histogramize(cube, b, t, (0.0, 1.0)).freqs)


def test_layout_bijection():
    bands = len(BAND_NAMES)
    seen = set()
    for t in range(34):
        for b in range(bands):
            for s in range(3):
                i = feature_index(t, b, s)
                assert decode_feature_index(i) == (t, b, s)
                seen.add(i)
    assert seen == set(range(3 * bands * 34))
    assert feature_length(34) == 1129 and feature_length(19) == 634
    names = feature_names(34)
    assert len(names) == 1129 and names[-7:] == list(HANDCRAFTED)


def test_two_point_history():
    hand = handcrafted_features(2020, 41.0, -90.0, {2018: 40.0, 2019: 44.0})
    lat, lon, year, since, prev, intercept, slope = hand
    assert (year, since, prev, slope) == (2020, 17, 42.0, 4.0)
    assert intercept == pytest.approx(-8032.0, abs=1e-9)


def test_prev_average_uses_last_five_years():
    hist = {y: float(y - 2000) for y in range(2003, 2012)}
    assert handcrafted_features(2012, 0, 0, hist)[4] == np.mean([7, 8, 9, 10, 11])


def test_fallbacks_without_county_history():
    pooled = [(2005, 10.0), (2006, 14.0), (2006, 12.0)]
    hand = handcrafted_features(2010, 0, 0, {}, pooled)
    assert hand[4] == 12.0
    assert hand[6] == pytest.approx(3.0)
    empty = handcrafted_features(2010, 0, 0, {}, [])
    assert empty[4:].tolist() == [0.0, 0.0, 0.0]
    one_year = handcrafted_features(2010, 0, 0, {2009: 30.0}, [(2009, 30.0), (2009, 20.0)])
    assert one_year[4] == 30.0 and one_year[5:].tolist() == [25.0, 0.0]


def test_leakage_rejected():
    with pytest.raises(LeakageError):
        handcrafted_features(2010, 0, 0, {2010: 40.0})
    with pytest.raises(LeakageError):
        handcrafted_features(2010, 0, 0, {}, [(2011, 40.0)])


def test_vector_lengths():
    values = np.ones((34, 2, 2, len(BAND_NAMES)), np.float32)
    fv = build_feature_vector(RasterCube("c", 2010, values), 40.0, -90.0, {})
    assert len(fv) == 1129 and fv.values.dtype == np.float32
    fv = build_feature_vector(RasterCube("c", 2010, values[:19]), 40.0, -90.0, {})
    assert len(fv) == 634


def test_table_round_trip_with_nan(tmp_path):
    X = np.array([[1.5, np.nan, 3e-7], [np.float32(1) / 3, -2.0, 1e30]], np.float32)
    table = FeatureTable(["01001", "01003"], [2010, 2011], X, [40.25, math.nan])
    write_feature_table(table, tmp_path / "t.csv")
    back = read_feature_table(tmp_path / "t.csv")
    assert back.county_ids.tolist() == ["01001", "01003"]
    assert back.years.tolist() == [2010, 2011]
    assert np.array_equal(back.X, X, equal_nan=True)
    assert back.labels[0] == 40.25 and math.isnan(back.labels[1])


def test_table_format_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("county_id,year,f0000\n01001,2010,1.0\n")
    with pytest.raises(TableFormatError):
        read_feature_table(bad)
    bad.write_text("county_id,year,f0000,label\n01001,2010,1.0\n")
    with pytest.raises(TableFormatError):
        read_feature_table(bad)
    bad.write_text("")
    with pytest.raises(TableFormatError):
        read_feature_table(bad)


def test_build_table_modes(small_world, small_table):
    assert small_table.X.shape == (40 * 8, 1129)
    inyear = build_table(
        list(small_world.iter_cubes())[:5], small_world.yield_table(), small_world.centroids(), mode="inyear"
    )
    assert inyear.n_features == 634
    assert np.array_equal(inyear.X, small_table.X[:5][:, np.r_[0:627, 1122:1129]], equal_nan=True)
    hist = build_table(
        list(small_world.iter_cubes())[:2], small_world.yield_table(), small_world.centroids(),
        representation="histograms",
    )
    assert hist.n_features == 32 * 11 * 34 and hist.kind == "histograms"


def test_table_history_uses_only_prior_years(small_table):
    first = small_table.years == small_table.years.min()
    # no earlier yields anywhere: fallbacks are all zero
    assert not small_table.X[first][:, -3:].any()
    later = small_table.X[small_table.years == 2005][:, -3]
    assert np.all(later > 0)
