"""Per-window feature vectors and min-max scaling.

Layout of the 45-value vector::

    X0..X9 Y0..Y9 Z0..Z9            binned distribution (fractions)
    XAVG YAVG ZAVG                   mean
    XSTANDDEV YSTANDDEV ZSTANDDEV    population standard deviation
    XVAR YVAR ZVAR                   population variance
    XABSOLDEV YABSOLDEV ZABSOLDEV    mean absolute deviation from the mean
    XPEAK YPEAK ZPEAK                mean time between peaks, seconds
"""

from __future__ import annotations

import csv
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CLASS_SET, SAMPLE_RATE_HZ, LabeledDataset, Window, class_index
from .errors import DataError, IoError, NotFitted, ShapeMismatch

N_BINS = 10
AXES = "XYZ"
BIN_NAMES = tuple(f"{a}{i}" for a in AXES for i in range(N_BINS))
STAT_NAMES = tuple(f"{a}{s}" for s in ("AVG", "STANDDEV", "VAR", "ABSOLDEV", "PEAK") for a in AXES)
FEATURE_NAMES = BIN_NAMES + STAT_NAMES
N_FEATURES = len(FEATURE_NAMES)


def binned_distribution(values, n_bins: int = N_BINS) -> np.ndarray:
    """Fraction of samples in each of ``n_bins`` equal-width bins over [min, max].

    A constant input puts all of its mass in the first bin.
    """
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        out = np.zeros(n_bins)
        out[0] = 1.0
        return out
    scaled = n_bins * (v - lo) / (hi - lo)
    idx = np.floor(scaled).astype(np.int64)
    # rounding can push a value sitting on a bin edge to the wrong side;
    # settle those few in exact rational arithmetic
    near = np.flatnonzero(np.abs(scaled - np.round(scaled)) < 1e-6)
    if len(near):
        f_lo, f_span = Fraction(lo), Fraction(hi) - Fraction(lo)
        for i in near:
            idx[i] = (n_bins * (Fraction(v[i]) - f_lo)) // f_span
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins) / len(v)


def axis_stats(values):
    """Return (mean, std, variance, mean absolute deviation), population form."""
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean()
    dev = v - mean
    var = np.mean(dev * dev)
    return float(mean), float(np.sqrt(var)), float(var), float(np.mean(np.abs(dev)))


def find_peaks(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 3:
        return np.empty(0, dtype=np.int64)
    lo, hi = v.min(), v.max()
    threshold = lo + 0.5 * (hi - lo)
    mid = v[1:-1]
    # strict on the left, non-strict on the right: a plateau peaks at its first sample
    is_peak = (mid > v[:-2]) & (mid >= v[2:]) & (mid > threshold)
    return np.flatnonzero(is_peak) + 1


def time_between_peaks(values, rate: float = SAMPLE_RATE_HZ) -> float:
    """Mean spacing of high local maxima in seconds; window length if < 2 peaks."""
    peaks = find_peaks(values)
    if len(peaks) < 2:
        return len(values) / rate
    return float(np.mean(np.diff(peaks))) / rate


def extract_features(window) -> np.ndarray:
    samples = window.samples if isinstance(window, Window) else np.asarray(window, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ShapeMismatch(f"window samples must be (n, 3), got {samples.shape}")
    bins = [binned_distribution(samples[:, a]) for a in range(3)]
    stats = np.array([axis_stats(samples[:, a]) for a in range(3)])  # (3 axes, 4 stats)
    peaks = [time_between_peaks(samples[:, a]) for a in range(3)]
    return np.concatenate(bins + [stats.T.ravel(), peaks])


def drop_columns(names: Sequence[str], drop: Sequence[str]):
    unknown = [d for d in drop if d not in names]
    if unknown:
        raise DataError(f"unknown feature name(s) to drop: {unknown}")
    return [i for i, n in enumerate(names) if n not in set(drop)]


def featurize(windows: Sequence[Window], drop: Sequence[str] = (), provenance: str = "real") -> LabeledDataset:
    keep = drop_columns(FEATURE_NAMES, drop)
    if windows:
        matrix = np.stack([extract_features(w) for w in windows])[:, keep]
        tag = windows[0].device_sensor.tag
    else:
        matrix = np.empty((0, len(keep)))
        tag = "watch_accel"
    return LabeledDataset(
        features=matrix,
        labels=np.array([class_index(w.activity) for w in windows], dtype=np.int64),
        feature_names=tuple(FEATURE_NAMES[i] for i in keep),
        provenance=provenance,
        device_sensor=tag,
        subjects=np.array([w.subject_id for w in windows], dtype=np.int64),
        activities=tuple(w.activity for w in windows),
        window_index=np.array([w.index for w in windows], dtype=np.int64),
    )


def combine_sources(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    """Concatenate two sensors' feature rows for the same window position.

    Rows are paired on (subject, activity, window index); unpaired rows are
    dropped. Feature names are prefixed with each source's sensor tag.
    """
    if first.subjects is None or second.subjects is None:
        raise DataError("combining sources needs window metadata on both datasets")
    key2 = {
        (int(s), a, int(w)): i
        for i, (s, a, w) in enumerate(zip(second.subjects, second.activities, second.window_index))
    }
    rows1, rows2 = [], []
    for i, (s, a, w) in enumerate(zip(first.subjects, first.activities, first.window_index)):
        j = key2.get((int(s), a, int(w)))
        if j is not None:
            rows1.append(i)
            rows2.append(j)
    ds1, ds2 = first.subset(rows1), second.subset(rows2)
    names = tuple(f"{first.device_sensor}:{n}" for n in first.feature_names) + tuple(
        f"{second.device_sensor}:{n}" for n in second.feature_names
    )
    device = first.device_sensor.split("_")[0]
    return LabeledDataset(
        features=np.hstack([ds1.features, ds2.features]),
        labels=ds1.labels.copy(),
        feature_names=names,
        class_set=first.class_set,
        provenance=first.provenance,
        device_sensor=f"{device}_both",
        subjects=ds1.subjects.copy(),
        activities=ds1.activities,
        window_index=ds1.window_index.copy(),
    )


# --------------------------------------------------------------------------
# Feature matrix CSV

_META = ("subject", "activity", "window_index")


def write_features_csv(ds: LabeledDataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(_META) + list(ds.feature_names) + ["class"])
        for i in range(len(ds)):
            meta = [
                "" if ds.subjects is None else int(ds.subjects[i]),
                "" if ds.activities is None else ds.activities[i],
                "" if ds.window_index is None else int(ds.window_index[i]),
            ]
            w.writerow(meta + [repr(float(v)) for v in ds.features[i]] + [ds.class_set[ds.labels[i]]])


def read_features_csv(path, provenance: str = "real", device_sensor: str | None = None) -> LabeledDataset:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "class":
            raise DataError(f"{path}: not a feature matrix CSV (last column must be 'class')")
        n_meta = len(_META) if tuple(header[: len(_META)]) == _META else 0
        names = tuple(header[n_meta:-1])
        rows = list(reader)
    feats = np.array([[float(v) for v in r[n_meta:-1]] for r in rows], dtype=np.float64).reshape(len(rows), len(names))
    try:
        labels = np.array([CLASS_SET.index(r[-1]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    meta = {}
    if n_meta:
        meta = dict(
            subjects=np.array([int(r[0]) for r in rows], dtype=np.int64),
            activities=tuple(r[1] for r in rows),
            window_index=np.array([int(r[2]) for r in rows], dtype=np.int64),
        )
    if device_sensor is None:
        stem = Path(path).stem
        device_sensor = stem if stem.count("_") == 1 else "watch_accel"
    return LabeledDataset(feats, labels, names, CLASS_SET, provenance, device_sensor, **meta)


# --------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray
    n_rows: int

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist(), "n_rows": self.n_rows}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64), int(d["n_rows"]))


def scaler_fit(train_rows) -> ScalerParams:
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ShapeMismatch("scaler needs a non-empty (n, F) matrix")
    return ScalerParams(x.min(axis=0), x.max(axis=0), len(x))


def scaler_apply(params: ScalerParams | None, rows) -> np.ndarray:
    """Map rows into [0, 1] with the fitted ranges, clamping outliers."""
    if params is None:
        raise NotFitted("scaler has not been fitted")
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != len(params.minimum):
        raise ShapeMismatch(f"expected {len(params.minimum)} features, got {x.shape[-1]}")
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - params.minimum) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)
