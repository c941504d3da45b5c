"""Classification and forecasting metrics, and the summary tables built from them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ACTIVITY_NAMES, CLASS_SET, HAND_CLASSES, NON_HAND_CLASSES
from .errors import LengthMismatch, ShapeMismatch, UnknownLabel

MAPE_EPS = 1e-8


@dataclass
class ClassificationReport:
    class_set: tuple
    confusion: np.ndarray  # rows: true class, columns: predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    accuracy: float
    flagged: list = field(default_factory=list)  # classes with an undefined ratio set to 0

    def per_class(self, metric):
        return dict(zip(self.class_set, getattr(self, metric).tolist()))

    def to_dict(self):
        return {
            "class_set": list(self.class_set),
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda k: np.array(d[k], dtype=np.float64)  # noqa: E731
        return cls(tuple(d["class_set"]), np.array(d["confusion"], dtype=np.int64), arr("precision"),
                   arr("recall"), arr("f1"), np.array(d["support"], dtype=np.int64), d["macro_f1"],
                   d["accuracy"], list(d["flagged"]))


def _to_indices(labels, class_set):
    lookup = {c: i for i, c in enumerate(class_set)}
    out = np.empty(len(labels), dtype=np.int64)
    for j, lab in enumerate(labels):
        if isinstance(lab, (int, np.integer)):
            if not 0 <= lab < len(class_set):
                raise UnknownLabel(f"label index {lab} outside class set")
            out[j] = lab
        elif lab in lookup:
            out[j] = lookup[lab]
        else:
            raise UnknownLabel(f"unknown label {lab!r}")
    return out


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def classification_report(truths, predictions, class_set=CLASS_SET) -> ClassificationReport:
    """Per-class precision/recall/F1 and their unweighted mean (Macro-F1).

    Labels may be class names or indices into ``class_set``. A zero
    denominator yields 0 for that ratio and the class is listed in
    ``flagged``.
    """
    if len(truths) != len(predictions):
        raise LengthMismatch(f"{len(truths)} truths vs {len(predictions)} predictions")
    class_set = tuple(class_set)
    k = len(class_set)
    t = _to_indices(list(truths), class_set)
    p = _to_indices(list(predictions), class_set)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    actual = conf.sum(axis=1).astype(np.float64)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, actual)
    f1 = _ratio(2 * precision * recall, precision + recall)
    flagged = [c for c, pr, ac in zip(class_set, predicted, actual) if pr == 0 or ac == 0]
    total = conf.sum()
    return ClassificationReport(
        class_set, conf, precision, recall, f1, actual.astype(np.int64),
        float(f1.mean()) if k else 0.0, float(tp.sum() / total) if total else 0.0, flagged,
    )


@dataclass(frozen=True)
class ForecastMetrics:
    rmse: float
    mse: float
    mape: float  # percent; NaN when every actual value is ~0
    smape: float  # percent
    mape_excluded: int = 0
    n: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def forecast_metrics(actual, predicted) -> ForecastMetrics:
    """Error metrics over every scalar (actual, predicted) pair.

    MAPE skips pairs whose actual value has magnitude <= 1e-8 and reports
    how many were skipped; sMAPE uses the mean of |a| and |f| as
    denominator and counts 0/0 terms as 0.
    """
    a = np.asarray(actual, dtype=np.float64).ravel()
    f = np.asarray(predicted, dtype=np.float64).ravel()
    if np.shape(actual) != np.shape(predicted):
        raise ShapeMismatch(f"actual {np.shape(actual)} vs predicted {np.shape(predicted)}")
    if a.size == 0:
        raise ShapeMismatch("need at least one value")
    err = a - f
    mse = float(np.mean(err * err))
    keep = np.abs(a) > MAPE_EPS
    excluded = int(a.size - keep.sum())
    mape = float(100.0 * np.mean(np.abs(err[keep]) / np.abs(a[keep]))) if keep.any() else math.nan
    den = (np.abs(a) + np.abs(f)) / 2.0
    terms = np.divide(np.abs(err), den, out=np.zeros_like(den), where=den > 0)
    return ForecastMetrics(math.sqrt(mse), mse, mape, float(100.0 * np.mean(terms)), excluded, int(a.size))


# --------------------------------------------------------------------------
# Summary tables

MODEL_ORDER = ("CNN", "BiLSTM", "ConvLSTM", "LSTM")
SOURCE_COLUMNS = {"accel": "Accelerometer", "gyro": "Gyroscope", "both": "Both"}
FORECAST_CODES = ("H", "I", "J", "K", "L")


@dataclass
class ClassifierResult:
    model: str  # display name, e.g. "CNN"
    device: str
    source: str  # accel | gyro | both
    report: ClassificationReport


@dataclass
class ForecastResult:
    activity: str  # activity code
    metrics: ForecastMetrics


@dataclass
class Table:
    name: str
    header: list
    rows: list  # first cell is a row label, the rest floats or None

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[r[0]] + [None if v == "" else float(v) for v in r[1:]] for r in reader]
        return cls(Path(path).stem, header, rows)

    def to_markdown(self, digits=3):
        def fmt(v):
            return "" if v is None else (f"{v:.{digits}f}" if isinstance(v, float) else str(v))

        lines = ["| " + " | ".join(self.header) + " |", "|" + "---|" * len(self.header)]
        lines += ["| " + " | ".join(fmt(v) for v in row) + " |" for row in self.rows]
        return "\n".join(lines)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def macro_f1_table(results):
    """Rows ``"<device> <model>"``; one column per sensor source."""
    rows = []
    for device in ("watch", "phone"):
        for model in MODEL_ORDER:
            cells = {r.source: r.report.macro_f1 for r in results if r.device == device and r.model == model}
            if cells:
                rows.append([f"{device} {model}"] + [cells.get(s) for s in SOURCE_COLUMNS])
    return Table("macro_f1", ["Model"] + list(SOURCE_COLUMNS.values()), rows)


def precision_table(results, classes, name, device="watch", source="accel"):
    chosen = {r.model: r.report for r in results if r.device == device and r.source == source}
    models = [m for m in MODEL_ORDER if m in chosen]
    rows = []
    for cls in classes:
        vals = [float(chosen[m].precision[chosen[m].class_set.index(cls)]) if cls in chosen[m].class_set else None
                for m in models]
        if any(v is not None for v in vals):
            rows.append([cls.capitalize()] + vals + [_mean(vals)])
    if rows:
        cols = list(zip(*[r[1:] for r in rows]))
        rows.append(["Mean"] + [_mean(c) for c in cols])
    return Table(name, ["Activities"] + models + ["Mean"], rows)


def forecast_label(code):
    return f"{code} ({ACTIVITY_NAMES[code]})"


def forecast_table(results):
    by_code = {r.activity: r.metrics for r in results}
    rows = []
    for code in FORECAST_CODES:
        m = by_code.get(code)
        if m is not None:
            rows.append([forecast_label(code), m.rmse, m.mse, None if math.isnan(m.mape) else m.mape, m.smape])
    if rows:
        cols = list(zip(*[r[1:] for r in rows]))
        rows.append(["Mean"] + [_mean(c) for c in cols])
    return Table("forecast", ["Activities", "RMSE", "MSE", "MAPE", "sMAPE"], rows)


def emit_report_tables(classifiers, forecasts, out_dir=None, device="watch", source="accel"):
    """Build the four summary tables and a markdown report.

    Writes ``tables/*.csv`` and ``report.md`` under ``out_dir`` when given.
    Returns ``(markdown, tables)``.
    """
    tables = {
        "macro_f1": macro_f1_table(classifiers),
        "precision_nonhand": precision_table(classifiers, NON_HAND_CLASSES, "precision_nonhand", device, source),
        "precision_hand": precision_table(classifiers, HAND_CLASSES, "precision_hand", device, source),
        "forecast": forecast_table(forecasts),
    }
    titles = {
        "macro_f1": "Macro-F1 by classifier and sensor source",
        "precision_nonhand": f"Precision, non-hand-oriented activities ({device} {source})",
        "precision_hand": f"Precision, hand-oriented activities ({device} {source})",
        "forecast": "GRU forecast of the final 30 s",
    }
    parts = ["# Activity recognition report", ""]
    for key, table in tables.items():
        parts += [f"## {titles[key]}", ""]
        parts += [table.to_markdown() if table.rows else "_no results_", ""]
    flagged = sorted({c for r in classifiers for c in r.report.flagged})
    notes = ["CNN max pooling uses a pool width of 2."]
    if flagged:
        notes.append("Classes with an undefined precision or recall (reported as 0): " + ", ".join(flagged) + ".")
    excluded = {r.activity: r.metrics.mape_excluded for r in forecasts if r.metrics.mape_excluded}
    if excluded:
        notes.append("MAPE skipped near-zero actual values: "
                     + ", ".join(f"{k} ({v})" for k, v in sorted(excluded.items())) + ".")
    parts += ["## Notes", ""] + [f"- {n}" for n in notes] + [""]
    markdown = "\n".join(parts)
    if out_dir is not None:
        out_dir = Path(out_dir)
        for key, table in tables.items():
            table.write_csv(out_dir / "tables" / f"{key}.csv")
        (out_dir / "report.md").write_text(markdown, encoding="utf-8")
    return markdown, tables
