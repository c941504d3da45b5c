import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from har_forge import evaluation as ev
from har_forge.errors import LengthMismatch, ShapeMismatch, UnknownLabel


def counting_oracle(truths, preds, k):
    """Per-class precision/recall/F1 by explicit counting loops."""
    out = []
    for c in range(k):
        tp = sum(1 for t, p in zip(truths, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(truths, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(truths, preds) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out.append((prec, rec, f1))
    return out


def test_two_class_fixture():
    # confusion [[2, 0], [1, 1]]
    r = ev.classification_report([0, 0, 1, 1], [0, 0, 0, 1], ("a", "b"))
    assert r.confusion.tolist() == [[2, 0], [1, 1]]
    assert r.f1[0] == pytest.approx(0.8, abs=1e-12)
    assert r.f1[1] == pytest.approx(2 / 3, abs=1e-12)
    assert r.macro_f1 == pytest.approx(0.7333333333333333, abs=1e-12)
    assert r.accuracy == 0.75
    assert r.flagged == []


def test_names_and_indices_agree():
    a = ev.classification_report(["a", "b", "b"], ["a", "a", "b"], ("a", "b"))
    b = ev.classification_report([0, 1, 1], [0, 0, 1], ("a", "b"))
    assert a.to_dict() == b.to_dict()


def test_undefined_ratios_are_zero_and_flagged():
    r = ev.classification_report([0, 0], [0, 0], ("a", "b", "c"))
    assert r.precision.tolist() == [1.0, 0.0, 0.0]
    assert r.flagged == ["b", "c"]


def test_errors():
    with pytest.raises(LengthMismatch):
        ev.classification_report([0], [0, 1], ("a", "b"))
    with pytest.raises(UnknownLabel):
        ev.classification_report(["z"], ["a"], ("a", "b"))
    with pytest.raises(UnknownLabel):
        ev.classification_report([5], [0], ("a", "b"))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda k: st.tuples(
    st.just(k), st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=40))))
def test_matches_counting_oracle(case):
    k, pairs = case
    t, p = zip(*pairs)
    r = ev.classification_report(list(t), list(p), tuple(f"c{i}" for i in range(k)))
    for c, (prec, rec, f1) in enumerate(counting_oracle(t, p, k)):
        assert (r.precision[c], r.recall[c], r.f1[c]) == (prec, rec, f1)
    assert r.macro_f1 == pytest.approx(np.mean([o[2] for o in counting_oracle(t, p, k)]), abs=1e-15)
    assert r.confusion.sum() == len(pairs)


def test_report_round_trip():
    r = ev.classification_report([0, 1, 2, 2], [0, 2, 2, 1], ("a", "b", "c"))
    back = ev.ClassificationReport.from_dict(r.to_dict())
    assert back.to_dict() == r.to_dict()


# --------------------------------------------------------------------------
# Forecast metrics


def test_forecast_fixture_single_value():
    m = ev.forecast_metrics([100.0], [50.0])
    assert m.mape == pytest.approx(50.0, abs=1e-9)
    assert m.smape == pytest.approx(200 / 3, abs=1e-9)
    assert m.rmse == pytest.approx(50.0, abs=1e-9)
    assert m.mse == pytest.approx(2500.0, abs=1e-9)


def test_forecast_fixture_small_actuals():
    m = ev.forecast_metrics([0.01, 10.0], [0.02, 10.0])
    assert m.mape == pytest.approx(50.0, abs=1e-9)
    assert m.smape == pytest.approx(100 / 3, abs=1e-9)


def test_mape_exclusions():
    m = ev.forecast_metrics([0.0, 2.0], [1.0, 1.0])
    assert m.mape_excluded == 1
    assert m.mape == pytest.approx(50.0)
    assert m.smape == pytest.approx(100 * (2 + 2 / 3) / 2)
    allzero = ev.forecast_metrics([0.0, 0.0], [0.0, 1.0])
    assert math.isnan(allzero.mape) and allzero.mape_excluded == 2
    assert allzero.smape == pytest.approx(100.0)  # 0/0 term counts as 0


def test_forecast_shape_errors():
    with pytest.raises(ShapeMismatch):
        ev.forecast_metrics(np.zeros((3, 3)), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        ev.forecast_metrics([], [])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=st.floats(-1e3, 1e3)))
def test_metric_invariants(a, f):
    n = min(len(a), len(f))
    m = ev.forecast_metrics(a[:n], f[:n])
    assert m.rmse ** 2 == pytest.approx(m.mse, rel=1e-9, abs=1e-9)
    assert min(m.rmse, m.mse, m.smape) >= 0
    assert m.smape <= 200 + 1e-9
    assert m.n == 3 * n


# --------------------------------------------------------------------------
# Tables


def _classifiers():
    cs = ("walking", "typing")
    return [
        ev.ClassifierResult("CNN", "watch", "accel", ev.classification_report([0, 1, 1], [0, 1, 0], cs)),
        ev.ClassifierResult("LSTM", "watch", "accel", ev.classification_report([0, 1, 1], [0, 1, 1], cs)),
        ev.ClassifierResult("CNN", "watch", "gyro", ev.classification_report([0, 1], [1, 1], cs)),
    ]


def test_tables_and_report(tmp_path):
    forecasts = [ev.ForecastResult("H", ev.forecast_metrics([1.0, 0.0], [0.5, 0.0]))]
    md, tables = ev.emit_report_tables(_classifiers(), forecasts, tmp_path)
    f1 = tables["macro_f1"]
    assert f1.header == ["Model", "Accelerometer", "Gyroscope", "Both"]
    assert f1.rows[0][0] == "watch CNN" and f1.rows[0][3] is None
    nonhand = tables["precision_nonhand"]
    assert nonhand.header == ["Activities", "CNN", "LSTM", "Mean"]
    assert nonhand.rows[0][:3] == ["Walking", 0.5, 1.0]
    assert nonhand.rows[-1][0] == "Mean"
    assert tables["forecast"].rows[0][0] == "H (eating soup)"
    assert "MAPE skipped near-zero actual values: H (1)" in md
    assert "pool width of 2" in md
    back = ev.Table.read_csv(tmp_path / "tables" / "macro_f1.csv")
    assert back.rows == f1.rows
    assert (tmp_path / "report.md").read_text() == md
