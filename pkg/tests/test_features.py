from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from har_forge import dataset as ds
from har_forge import features as ft
from har_forge.errors import DataError, NotFitted, ShapeMismatch


def interval_oracle(values, n_bins=10):
    """Test each value against explicit bounds [lo + k*w, lo + (k+1)*w), last bin closed.

    Bounds are exact rationals, so the oracle has no rounding of its own.
    """
    vals = [Fraction(float(v)) for v in values]
    lo, hi = min(vals), max(vals)
    counts = [0] * n_bins
    if hi == lo:
        counts[0] = len(vals)
        return np.array(counts) / len(vals)
    w = (hi - lo) / n_bins
    for v in vals:
        hits = [k for k in range(n_bins)
                if lo + k * w <= v and (v < lo + (k + 1) * w or (k == n_bins - 1 and v <= hi))]
        assert len(hits) == 1
        counts[hits[0]] += 1
    return np.array(counts) / len(vals)


def test_feature_names():
    assert len(ft.FEATURE_NAMES) == 45
    assert ft.FEATURE_NAMES[:3] == ("X0", "X1", "X2")
    assert ft.FEATURE_NAMES[30:33] == ("XAVG", "YAVG", "ZAVG")
    assert ft.FEATURE_NAMES[-3:] == ("XPEAK", "YPEAK", "ZPEAK")


def test_bins_hand_values():
    v = np.arange(10.0)  # one value per bin
    np.testing.assert_array_equal(ft.binned_distribution(v), np.full(10, 0.1))
    v = np.array([0.0, 0.0, 0.0, 1.0])  # max lands in the last bin
    np.testing.assert_array_equal(ft.binned_distribution(v), [0.75] + [0] * 8 + [0.25])
    np.testing.assert_array_equal(ft.binned_distribution(np.full(5, 3.3)), [1.0] + [0] * 9)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_bins_property(values):
    b = ft.binned_distribution(values)
    assert b.shape == (10,)
    assert np.all(b >= 0)
    assert abs(b.sum() - 1.0) <= 1e-9
    np.testing.assert_array_equal(b, interval_oracle(list(values)))


def test_stats_hand_values():
    mean, std, var, mad = ft.axis_stats([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert var == 1.25  # population variance
    assert std == pytest.approx(np.sqrt(1.25), abs=1e-15)
    assert mad == 1.0


def test_peaks_hand_values():
    v = np.zeros(200)
    v[[10, 30, 50]] = 1.0
    assert ft.find_peaks(v).tolist() == [10, 30, 50]
    assert ft.time_between_peaks(v) == 1.0  # 20 samples apart at 20 Hz
    # below-threshold local maxima do not count
    v[70] = 0.4
    assert ft.find_peaks(v).tolist() == [10, 30, 50]
    # a plateau peaks at its first sample
    w = np.zeros(20)
    w[5:8] = 1.0
    assert ft.find_peaks(w).tolist() == [5]


def test_peak_sentinel():
    assert ft.time_between_peaks(np.zeros(200)) == 10.0
    v = np.zeros(200)
    v[100] = 1.0
    assert ft.time_between_peaks(v) == 10.0


def test_extract_features_layout(small_windows):
    w = small_windows[0]
    f = ft.extract_features(w)
    assert f.shape == (45,)
    for a in range(3):
        assert abs(f[10 * a : 10 * a + 10].sum() - 1.0) < 1e-9
        assert f[30 + a] == pytest.approx(w.samples[:, a].mean(), abs=1e-12)
        assert f[36 + a] == pytest.approx(w.samples[:, a].var(), abs=1e-12)
    with pytest.raises(ShapeMismatch):
        ft.extract_features(np.zeros((200, 2)))


def test_featurize_and_drop(small_windows):
    data = ft.featurize(small_windows, drop=("XPEAK", "YPEAK"))
    assert data.features.shape == (len(small_windows), 43)
    assert "XPEAK" not in data.feature_names
    with pytest.raises(DataError):
        ft.featurize(small_windows, drop=("NOPE",))


def test_features_csv_round_trip(tmp_path, small_windows):
    data = ft.featurize(small_windows)
    path = tmp_path / "watch_accel.csv"
    ft.write_features_csv(data, path)
    back = ft.read_features_csv(path)
    np.testing.assert_array_equal(back.features, data.features)
    np.testing.assert_array_equal(back.labels, data.labels)
    assert back.feature_names == data.feature_names
    assert back.activities == data.activities


def test_combine_sources(small_windows):
    accel = ft.featurize(small_windows)
    gyro_streams = ds.synthesize_dataset(1, seed=3, device_sensor=ds.WATCH_GYRO, duration_s=30)
    gyro = ft.featurize(ds.segment_windows(gyro_streams)[:-1])  # one unpaired row
    both = ft.combine_sources(accel, gyro)
    assert both.features.shape == (len(gyro), 90)
    assert both.device_sensor == "watch_both"
    assert both.feature_names[0] == "watch_accel:X0" and both.feature_names[45] == "watch_gyro:X0"


def test_scaler():
    train = np.array([[0.0, 5.0, 1.0], [10.0, 5.0, 3.0]])
    params = ft.scaler_fit(train)
    out = ft.scaler_apply(params, np.array([[5.0, 7.0, 4.0], [-1.0, 5.0, 1.0]]))
    np.testing.assert_array_equal(out, [[0.5, 0.0, 1.0], [0.0, 0.0, 0.0]])
    back = ft.ScalerParams.from_dict(params.to_dict())
    np.testing.assert_array_equal(back.minimum, params.minimum)
    np.testing.assert_array_equal(back.maximum, params.maximum)
    assert back.n_rows == 2
    with pytest.raises(NotFitted):
        ft.scaler_apply(None, train)
    with pytest.raises(ShapeMismatch):
        ft.scaler_apply(params, np.zeros((1, 4)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)), elements=st.floats(-1e6, 1e6)))
def test_scaler_range(train):
    out = ft.scaler_apply(ft.scaler_fit(train), train)
    assert np.all((out >= 0) & (out <= 1))


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.floats(1e-3, 100), st.lists(st.integers(0, 10), min_size=1, max_size=30))
def test_bins_values_on_edges(lo, span, ks):
    # values computed to sit on (or within rounding of) the bin edges
    hi = lo + span
    values = np.array([lo, hi] + [lo + k * (hi - lo) / 10 for k in ks])
    values = np.clip(values, lo, hi)
    np.testing.assert_array_equal(ft.binned_distribution(values), interval_oracle(values))
