"""Raw WISDM record ingestion, windowing, label merging and dataset splits.

WISDM raw files hold one reading per line::

    subject,activity,timestamp,x,y,z;

Readings are grouped into streams (one subject performing one activity on
one device sensor), cut into non-overlapping 200-sample windows, and the
four eating activities are folded into a single ``eating`` class.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyClass, IoError, MalformedRecord, UnknownActivity

log = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 20
WINDOW_LEN = 200
NS_PER_SAMPLE = 1_000_000_000 // SAMPLE_RATE_HZ

# WISDM activity codes; N is unused by the dataset.
ACTIVITY_NAMES = {
    "A": "walking",
    "B": "jogging",
    "C": "stairs",
    "D": "sitting",
    "E": "standing",
    "F": "typing",
    "G": "brushing teeth",
    "H": "eating soup",
    "I": "eating chips",
    "J": "eating pasta",
    "K": "drinking from cup",
    "L": "eating sandwich",
    "M": "kicking",
    "O": "playing catch",
    "P": "dribbling",
    "Q": "writing",
    "R": "clapping",
    "S": "folding clothes",
}
ACTIVITY_CODES = tuple(ACTIVITY_NAMES)
EATING_CODES = frozenset("HIJL")

_CLASS_OF_CODE = {
    "A": "walking",
    "B": "jogging",
    "C": "stairs",
    "D": "sitting",
    "E": "standing",
    "F": "typing",
    "G": "brushing",
    "H": "eating",
    "I": "eating",
    "J": "eating",
    "K": "drinking",
    "L": "eating",
    "M": "kicking",
    "O": "catch",
    "P": "dribbling",
    "Q": "writing",
    "R": "clapping",
    "S": "folding",
}
CLASS_SET = tuple(dict.fromkeys(_CLASS_OF_CODE.values()))
NON_HAND_CLASSES = ("walking", "jogging", "stairs", "sitting", "standing", "kicking")
HAND_CLASSES = (
    "typing",
    "brushing",
    "drinking",
    "eating",
    "catch",
    "dribbling",
    "writing",
    "clapping",
    "folding",
)

DEVICES = ("phone", "watch")
SENSORS = ("accel", "gyro")


@dataclass(frozen=True, order=True)
class DeviceSensor:
    device: str
    sensor: str

    def __post_init__(self):
        if self.device not in DEVICES:
            raise ValueError(f"unknown device {self.device!r}")
        if self.sensor not in SENSORS:
            raise ValueError(f"unknown sensor {self.sensor!r}")

    @property
    def tag(self):
        return f"{self.device}_{self.sensor}"

    @classmethod
    def parse(cls, text):
        device, _, sensor = text.partition("_")
        return cls(device, sensor)


PHONE_ACCEL = DeviceSensor("phone", "accel")
PHONE_GYRO = DeviceSensor("phone", "gyro")
WATCH_ACCEL = DeviceSensor("watch", "accel")
WATCH_GYRO = DeviceSensor("watch", "gyro")


@dataclass(frozen=True)
class SensorReading:
    subject_id: int
    activity: str
    timestamp: int
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.activity not in ACTIVITY_NAMES:
            raise UnknownActivity(f"unknown activity code {self.activity!r}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("sensor values must be finite")


def parse_raw_line(line: str, line_no: int | None = None) -> SensorReading:
    """Parse one ``subject,activity,timestamp,x,y,z;`` record."""
    text = line.strip()
    if text.endswith(";"):
        text = text[:-1].rstrip()
    if not text:
        raise MalformedRecord("empty record", line_no, line)
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6:
        raise MalformedRecord(f"expected 6 fields, got {len(parts)}", line_no, line)
    subject, activity, ts, *axes = parts
    if activity not in ACTIVITY_NAMES:
        raise MalformedRecord(f"unknown activity code {activity!r}", line_no, line)
    try:
        subject_id = int(subject)
        timestamp = int(ts)
        x, y, z = (float(v) for v in axes)
    except ValueError as exc:
        raise MalformedRecord(f"unparsable number ({exc})", line_no, line) from None
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise MalformedRecord("non-finite sensor value", line_no, line)
    return SensorReading(subject_id, activity, timestamp, x, y, z)


def format_raw_line(reading: SensorReading) -> str:
    r = reading
    return f"{r.subject_id},{r.activity},{r.timestamp},{r.x!r},{r.y!r},{r.z!r};"


@dataclass
class LoadResult:
    readings: list
    skipped: int = 0
    errors: list = field(default_factory=list)


def load_stream(path, device_sensor: DeviceSensor | None = None, skip_policy: str = "skip") -> LoadResult:
    """Read every record of a raw WISDM text file, in file order.

    With ``skip_policy="skip"`` malformed lines are counted and dropped;
    with ``"abort"`` the first one raises :class:`MalformedRecord`.
    Blank lines are ignored under both policies.
    """
    if skip_policy not in ("skip", "abort"):
        raise ValueError(f"skip_policy must be 'skip' or 'abort', not {skip_policy!r}")
    result = LoadResult([])
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                result.readings.append(parse_raw_line(line, line_no))
            except MalformedRecord as exc:
                if skip_policy == "abort":
                    raise
                result.skipped += 1
                result.errors.append(exc)
    if result.skipped:
        log.warning("%s: skipped %d malformed line(s)", path, result.skipped)
    return result


@dataclass(frozen=True)
class Stream:
    """All readings of one subject/activity/device-sensor, as arrays."""

    subject_id: int
    activity: str
    device_sensor: DeviceSensor
    timestamps: np.ndarray
    values: np.ndarray  # (n, 3)

    def __len__(self):
        return len(self.timestamps)

    def readings(self):
        return [
            SensorReading(self.subject_id, self.activity, int(t), float(x), float(y), float(z))
            for t, (x, y, z) in zip(self.timestamps, self.values)
        ]


def group_streams(readings: Iterable[SensorReading], device_sensor: DeviceSensor) -> list[Stream]:
    """Group readings by (subject, activity), preserving first-seen order."""
    buckets = defaultdict(list)
    for r in readings:
        buckets[(r.subject_id, r.activity)].append(r)
    streams = []
    for (subject, activity), rows in buckets.items():
        ts = np.array([r.timestamp for r in rows], dtype=np.int64)
        vals = np.array([(r.x, r.y, r.z) for r in rows], dtype=np.float64).reshape(-1, 3)
        streams.append(Stream(subject, activity, device_sensor, ts, vals))
    return streams


@dataclass(frozen=True)
class Window:
    subject_id: int
    activity: str
    device_sensor: DeviceSensor
    samples: np.ndarray  # (200, 3)
    start_timestamp: int
    index: int  # position of the window within its stream


def _gap_audit(stream: Stream):
    if len(stream) < 2:
        return
    max_gap = int(np.max(np.diff(stream.timestamps)))
    if max_gap > 2 * NS_PER_SAMPLE:
        log.warning(
            "subject %s activity %s (%s): max inter-sample gap %.3f s",
            stream.subject_id, stream.activity, stream.device_sensor.tag, max_gap / 1e9,
        )


def segment_stream(stream: Stream, window_len: int = WINDOW_LEN) -> list[Window]:
    _gap_audit(stream)
    out = []
    for k in range(len(stream) // window_len):
        lo = k * window_len
        samples = stream.values[lo : lo + window_len].copy()
        samples.flags.writeable = False
        out.append(
            Window(stream.subject_id, stream.activity, stream.device_sensor, samples,
                   int(stream.timestamps[lo]), k)
        )
    return out


def segment_windows(readings, device_sensor: DeviceSensor | None = None,
                    window_len: int = WINDOW_LEN) -> list[Window]:
    """Cut streams into consecutive non-overlapping windows.

    ``readings`` is either a sequence of :class:`Stream` or of
    :class:`SensorReading` (then ``device_sensor`` tags the result).
    Any trailing remainder shorter than ``window_len`` is discarded.
    """
    readings = list(readings)
    if not readings:
        return []
    if isinstance(readings[0], Stream):
        streams = readings
    else:
        if device_sensor is None:
            raise ValueError("device_sensor is required when segmenting raw readings")
        streams = group_streams(readings, device_sensor)
    windows = []
    for s in streams:
        windows.extend(segment_stream(s, window_len))
    return windows


def merge_eating_label(activity: str) -> str:
    """Map an activity code (or an already merged class name) to its class."""
    if activity in _CLASS_OF_CODE:
        return _CLASS_OF_CODE[activity]
    if activity in CLASS_SET:
        return activity
    raise UnknownActivity(f"unknown activity {activity!r}")


def class_index(activity: str) -> int:
    return CLASS_SET.index(merge_eating_label(activity))


# --------------------------------------------------------------------------
# Windows on disk


def _window_header():
    return (["subject", "activity", "device", "sensor", "start_timestamp", "window_index"]
            + [f"{a}{i}" for a in "xyz" for i in range(WINDOW_LEN)])


def write_windows_csv(windows: Sequence[Window], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_window_header())
        for win in windows:
            ds = win.device_sensor
            w.writerow([win.subject_id, win.activity, ds.device, ds.sensor, win.start_timestamp, win.index]
                       + [repr(float(v)) for v in win.samples.T.ravel()])


def read_windows_csv(path) -> list[Window]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    windows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if header[:6] != _window_header()[:6]:
            raise DataError(f"{path}: not a windows CSV")
        n = (len(header) - 6) // 3
        for row in reader:
            vals = np.array([float(v) for v in row[6:]], dtype=np.float64).reshape(3, n).T.copy()
            vals.flags.writeable = False
            windows.append(
                Window(int(row[0]), row[1], DeviceSensor(row[2], row[3]), vals, int(row[4]), int(row[5]))
            )
    return windows


def window_manifest(windows: Sequence[Window], skipped: int = 0) -> dict:
    per_class = Counter(merge_eating_label(w.activity) for w in windows)
    per_activity = Counter(w.activity for w in windows)
    per_ds = Counter(w.device_sensor.tag for w in windows)
    return {
        "windows": len(windows),
        "skipped_lines": skipped,
        "per_class": {c: per_class.get(c, 0) for c in CLASS_SET},
        "per_activity": dict(sorted(per_activity.items())),
        "per_device_sensor": dict(sorted(per_ds.items())),
    }


def write_manifest(manifest: dict, path):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def find_raw_files(root, device_sensor: DeviceSensor) -> list[Path]:
    """Locate raw files for one device sensor under ``root``.

    Understands the WISDM release layout (``raw/<device>/<sensor>/*.txt``)
    as well as a flat directory of ``data_<subject>_<sensor>_<device>.txt``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"raw data directory {root} does not exist")
    for base in (root / device_sensor.device / device_sensor.sensor,
                 root / "raw" / device_sensor.device / device_sensor.sensor):
        if base.is_dir():
            return sorted(base.glob("*.txt"))
    suffix = f"_{device_sensor.sensor}_{device_sensor.device}.txt"
    return sorted(p for p in root.rglob("*.txt") if p.name.endswith(suffix))


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class ClassSignature:
    name: str
    frequency_hz: float
    amplitude: tuple  # per axis, accelerometer units
    phase: tuple  # per-axis phase offset, radians
    noise: float  # noise std as a fraction of the mean amplitude
    direction: tuple  # unit vector for the static (gravity) component


def _fibonacci_direction(k, n):
    z = 1.0 - (2.0 * k + 1.0) / n
    r = math.sqrt(1.0 - z * z)
    theta = k * math.pi * (3.0 - math.sqrt(5.0))
    return (round(r * math.cos(theta), 4), round(r * math.sin(theta), 4), round(z, 4))


_SIGNATURE_ROWS = [
    # name, Hz, amplitude (x, y, z)
    ("walking", 1.8, (3.0, 4.0, 2.0)),
    ("jogging", 2.8, (6.0, 8.0, 4.0)),
    ("stairs", 1.4, (3.0, 3.0, 2.5)),
    ("sitting", 0.5, (0.2, 0.15, 0.2)),
    ("standing", 0.6, (0.3, 0.2, 0.3)),
    ("typing", 3.6, (0.6, 0.4, 0.3)),
    ("brushing", 4.4, (2.5, 1.5, 1.0)),
    ("eating", 1.0, (1.2, 1.5, 0.8)),
    ("drinking", 0.7, (1.0, 2.0, 1.0)),
    ("kicking", 1.2, (4.0, 3.0, 5.0)),
    ("catch", 0.9, (3.0, 4.0, 3.0)),
    ("dribbling", 2.2, (5.0, 3.0, 3.0)),
    ("writing", 3.0, (0.8, 0.6, 0.4)),
    ("clapping", 2.5, (4.0, 2.0, 2.0)),
    ("folding", 0.8, (1.5, 1.5, 2.0)),
]

SIGNATURES = {
    name: ClassSignature(
        name=name,
        frequency_hz=hz,
        amplitude=amp,
        phase=(0.0, round((0.7 + 0.4 * k) % (2 * math.pi), 4), round((1.9 + 0.9 * k) % (2 * math.pi), 4)),
        noise=round(0.02 + 0.002 * k, 4),
        direction=_fibonacci_direction(k, len(_SIGNATURE_ROWS)),
    )
    for k, (name, hz, amp) in enumerate(_SIGNATURE_ROWS)
}

GRAVITY = 9.81
# Device-level distortion: (amplitude factor, additive bias per axis).
_DEVICE_PROFILE = {
    "phone": (1.0, (0.0, 0.0, 0.0)),
    "watch": (1.5, (1.0, -1.5, 0.5)),
}
# Sensor scale: (static magnitude, amplitude factor).
_SENSOR_PROFILE = {
    "accel": (GRAVITY, 1.0),
    "gyro": (0.05, 0.25),
}


def _class_code(name, replica):
    if name == "eating":
        return "HIJL"[replica % 4]
    return next(c for c, n in _CLASS_OF_CODE.items() if n == name)


def synthesize_stream(signature: ClassSignature, activity: str, subject_id: int,
                      device_sensor: DeviceSensor, rng: np.random.Generator,
                      duration_s: float = 180.0, jitter: bool = True) -> Stream:
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    t = np.arange(n) / SAMPLE_RATE_HZ
    dev_amp, dev_bias = _DEVICE_PROFILE[device_sensor.device]
    static, sens_amp = _SENSOR_PROFILE[device_sensor.sensor]
    bias_scale = 1.0 if device_sensor.sensor == "accel" else 0.01

    amp = np.array(signature.amplitude) * dev_amp * sens_amp
    offset = static * np.array(signature.direction) + bias_scale * np.array(dev_bias)
    freq = signature.frequency_hz
    phase0 = 0.0
    if jitter:
        amp = amp * rng.uniform(0.9, 1.1, size=3)
        offset = offset + rng.normal(0.0, 0.25 * static / GRAVITY, size=3)
        freq = freq * rng.uniform(0.97, 1.03)
        phase0 = rng.uniform(0.0, 2 * math.pi)
    sigma = signature.noise * float(np.mean(amp))
    phases = phase0 + np.array(signature.phase)
    values = offset + amp * np.sin(2 * math.pi * freq * t[:, None] + phases)
    values = values + rng.normal(0.0, sigma, size=values.shape)
    start = int(rng.integers(0, 10**12)) if jitter else 0
    timestamps = start + np.arange(n, dtype=np.int64) * NS_PER_SAMPLE
    values.flags.writeable = False
    return Stream(subject_id, activity, device_sensor, timestamps, values)


def synthesize_dataset(n_per_class: int, seed: int, device_sensor: DeviceSensor = WATCH_ACCEL,
                       duration_s: float = 180.0, classes: Sequence[str] = CLASS_SET) -> list[Stream]:
    """Generate ``n_per_class`` synthetic 20 Hz streams for every class.

    Each class follows its entry in :data:`SIGNATURES` (static orientation,
    sinusoid frequency/amplitude/phase, noise), with per-stream jitter
    standing in for subject variation. Eating streams rotate over the
    four eating activity codes. Output depends only on the arguments.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    ss = np.random.SeedSequence([seed, DEVICES.index(device_sensor.device), SENSORS.index(device_sensor.sensor)])
    rng = np.random.default_rng(ss)
    streams = []
    for replica in range(n_per_class):
        subject = 1600 + replica
        for name in classes:
            code = _class_code(name, replica)
            streams.append(synthesize_stream(SIGNATURES[name], code, subject, device_sensor, rng, duration_s))
    return streams


def write_raw_streams(streams: Sequence[Stream], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in streams:
            for r in s.readings():
                fh.write(format_raw_line(r) + "\n")


# --------------------------------------------------------------------------
# Labeled datasets and splits


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with class indices into ``class_set``."""

    features: np.ndarray  # (n, F)
    labels: np.ndarray  # (n,) int
    feature_names: tuple
    class_set: tuple = CLASS_SET
    provenance: str = "real"
    device_sensor: str = "watch_accel"
    subjects: np.ndarray | None = None
    activities: tuple | None = None
    window_index: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DataError("features must be (n, F) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_set)):
            raise DataError("label outside class_set")
        for arr in (self.features, self.labels, self.subjects, self.window_index):
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.features[idx].copy(),
            self.labels[idx].copy(),
            self.feature_names,
            self.class_set,
            self.provenance,
            self.device_sensor,
            None if self.subjects is None else self.subjects[idx].copy(),
            None if self.activities is None else tuple(self.activities[i] for i in idx),
            None if self.window_index is None else self.window_index[idx].copy(),
        )


def _largest_remainder(quotas, total):
    base = np.floor(quotas).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        frac = quotas - base
        # stable: ties resolved by class order
        order = np.argsort(-frac, kind="stable")
        base[order[:short]] += 1
    return base


def split_indices(labels, ratios=(0.8, 0.1, 0.1), seed=0):
    """Stratified shuffled split of row indices into (train, val, test).

    Validation and test totals are ``floor(n * ratio)``; every class gets
    its proportional share (largest-remainder apportionment) and the
    remainders land in train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    labels = np.asarray(labels)
    n = len(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if n == 0:
        raise EmptyClass("cannot split an empty dataset")
    small = [c for c, k in zip(classes, counts) if k < 3]
    if small:
        raise EmptyClass(f"classes with fewer than 3 rows: {small}")

    # floor() after scaling by a ratio like 0.1 can land just under an integer
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    val_per = _largest_remainder(counts * ratios[1], n_val)
    test_per = _largest_remainder(counts * ratios[2], n_test)

    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c, k_val, k_test in zip(classes, val_per, test_per):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        val.extend(idx[:k_val])
        test.extend(idx[k_val : k_val + k_test])
        train.extend(idx[k_val + k_test :])
    return tuple(np.sort(np.array(part, dtype=np.int64)) for part in (train, val, test))


def split_dataset(dataset: LabeledDataset, ratios=(0.8, 0.1, 0.1), seed=0):
    tr, va, te = split_indices(dataset.labels, ratios, seed)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)
