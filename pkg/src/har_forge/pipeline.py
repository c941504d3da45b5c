"""Pipeline stages and the content-hash cache that lets reruns skip them.

Each stage reads its predecessor's files and writes its own, so any stage
can be run alone from the command line. ``run_pipeline`` strings them
together for one configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import features as ft
from . import models as md
from . import plots
from .errors import ConfigError, DataError
from .stats import device_difference_report

log = logging.getLogger(__name__)


def derive_seed(root: int, *names) -> int:
    """Expand the root seed into an independent per-stage seed."""
    key = [int(root)] + [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


class StageCache:
    """Skip a stage when its inputs, parameters and outputs are unchanged."""

    def __init__(self, work_dir):
        self.work = Path(work_dir)
        self.dir = self.work / "stamps"

    def _rel(self, path):
        # stamps stay valid when the work directory is moved or copied
        path = Path(path)
        try:
            return str(path.relative_to(self.work))
        except ValueError:
            return str(path)

    def run(self, name, inputs, params, outputs, fn):
        key_src = {
            "stage": name,
            "params": params,
            "inputs": [[Path(p).name, file_hash(p)] for p in inputs],
        }
        key = hashlib.sha256(json.dumps(key_src, sort_keys=True, default=str).encode()).hexdigest()
        stamp = self.dir / f"{name}.json"
        if stamp.exists() and all(Path(o).exists() for o in outputs):
            old = read_json(stamp)
            if old.get("key") == key and all(old["outputs"].get(self._rel(o)) == file_hash(o) for o in outputs):
                log.info("stage %s up to date", name)
                return False
        fn()
        write_json({"key": key, "outputs": {self._rel(o): file_hash(o) for o in outputs}}, stamp)
        return True


# --------------------------------------------------------------------------
# Stages


def manifest_path(windows_csv):
    p = Path(windows_csv)
    return p.with_name(p.stem + ".manifest.json")


def ingest(in_dir, device_sensor: ds.DeviceSensor, out_csv, skip_policy="skip"):
    files = ds.find_raw_files(in_dir, device_sensor)
    if not files:
        raise DataError(f"no raw {device_sensor.tag} files under {in_dir}")
    windows, skipped = [], 0
    for path in files:
        loaded = ds.load_stream(path, device_sensor, skip_policy)
        skipped += loaded.skipped
        windows.extend(ds.segment_windows(loaded.readings, device_sensor))
    ds.write_windows_csv(windows, out_csv)
    manifest = ds.window_manifest(windows, skipped)
    manifest["files"] = len(files)
    ds.write_manifest(manifest, manifest_path(out_csv))
    return manifest


def featurize(window_csvs, out_csv, drop=(), provenance="real"):
    parts = [ft.featurize(ds.read_windows_csv(p), drop, provenance) for p in window_csvs]
    if not parts:
        raise ConfigError("featurize needs at least one windows file")
    data = parts[0]
    for other in parts[1:]:
        data = ft.combine_sources(data, other)
    ft.write_features_csv(data, out_csv)
    return data


def _load_xyz(path, device_sensor):
    path = Path(path)
    if path.suffix == ".csv":
        wins = ds.read_windows_csv(path)
        return np.concatenate([w.samples for w in wins]) if wins else np.empty((0, 3))
    readings = ds.load_stream(path, device_sensor).readings
    return np.array([(r.x, r.y, r.z) for r in readings], dtype=np.float64).reshape(-1, 3)


def mancova(phone_file, watch_file, sensor, out_json=None):
    phone = _load_xyz(phone_file, ds.DeviceSensor("phone", sensor))
    watch = _load_xyz(watch_file, ds.DeviceSensor("watch", sensor))
    result, text = device_difference_report(phone, watch, sensor)
    payload = {**result.to_dict(), "sensor": sensor, "verdict": text,
               "reject": bool(result.p_value < 0.05)}
    if out_json is not None:
        write_json(payload, out_json)
    return payload


def load_features(path):
    data = ft.read_features_csv(path)
    if len(data) == 0:
        raise DataError(f"{path} has no rows")
    return data


def train_model(arch, data_csv, out_stem, seed, device="watch", source="accel", epochs=None,
                ratios=(0.8, 0.1, 0.1), split_seed=None):
    if arch not in md.BUILDERS:
        raise ConfigError(f"unknown architecture {arch!r}")
    data = load_features(data_csv)
    split_seed = seed if split_seed is None else split_seed
    tr, va, _ = ds.split_dataset(data, ratios, split_seed)
    scaler = ft.scaler_fit(tr.features)
    spec = md.build_spec(arch, n_features=data.features.shape[1], max_epochs=epochs)
    start = time.perf_counter()
    model, history = md.train(
        spec, (ft.scaler_apply(scaler, tr.features), tr.labels), (ft.scaler_apply(scaler, va.features), va.labels),
        seed,
    )
    elapsed = time.perf_counter() - start
    model.scaler = scaler
    model.meta = {
        "arch": arch, "device": device, "source": source, "ratios": list(ratios), "split_seed": split_seed,
        "feature_names": list(data.feature_names),
    }
    md.save_trained(model, out_stem)
    return model, elapsed


def evaluate_model(ckpt, data_csv, out_json=None, split="test"):
    model = md.load_trained(ckpt)
    data = load_features(data_csv)
    if list(data.feature_names) != model.meta.get("feature_names", list(data.feature_names)):
        raise DataError(f"{data_csv} does not have the features the model was trained on")
    parts = dict(zip(("train", "val", "test"),
                     ds.split_dataset(data, model.meta.get("ratios", (0.8, 0.1, 0.1)), model.meta.get("split_seed", 0))))
    subset = parts[split]
    pred = md.classify(model, ft.scaler_apply(model.scaler, subset.features))
    report = ev.classification_report(subset.labels, pred, model.class_set)
    payload = {
        "arch": model.meta.get("arch"),
        "model": model.spec.name,
        "device": model.meta.get("device"),
        "source": model.meta.get("source"),
        "split": split,
        "n_rows": len(subset),
        "history": model.history.to_dict(),
        "report": report.to_dict(),
    }
    if out_json is not None:
        write_json(payload, out_json)
    return payload


def _activity_series(data_file, activity, device_sensor, subject=None):
    path = Path(data_file)
    if path.suffix == ".csv":
        wins = [w for w in ds.read_windows_csv(path) if w.activity == activity]
        subjects = sorted({w.subject_id for w in wins})
        if not subjects:
            raise DataError(f"no {activity} windows in {path}")
        subject = subjects[0] if subject is None else subject
        picked = sorted((w for w in wins if w.subject_id == subject), key=lambda w: w.index)
        return subject, np.concatenate([w.samples for w in picked])
    streams = [s for s in ds.group_streams(ds.load_stream(path, device_sensor).readings, device_sensor)
               if s.activity == activity]
    if subject is not None:
        streams = [s for s in streams if s.subject_id == subject]
    if not streams:
        raise DataError(f"no activity {activity} stream in {path}")
    stream = min(streams, key=lambda s: s.subject_id)
    return stream.subject_id, np.asarray(stream.values)


def forecast_activity(activity, data_file, out_csv, seed, device_sensor=ds.WATCH_ACCEL, epochs=40,
                      context=md.FORECAST_CONTEXT, stride=1, subject=None):
    if activity not in ev.FORECAST_CODES:
        raise ConfigError(f"forecasting covers activities {', '.join(ev.FORECAST_CODES)}, not {activity!r}")
    subject, series = _activity_series(data_file, activity, device_sensor, subject)
    run = md.forecast_series(series, seed=seed, context=context, max_epochs=epochs, stride=stride)
    metrics = ev.forecast_metrics(run.actual, run.predicted)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([np.arange(len(run.actual)), run.actual, run.predicted])
    header = "step,actual_x,actual_y,actual_z,pred_x,pred_y,pred_z"
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(f"{int(r[0])}," + ",".join(repr(float(v)) for v in r[1:]) + "\n")
    payload = {"activity": activity, "subject": subject, "device_sensor": device_sensor.tag,
               "history_samples": run.history_len, "horizon": len(run.actual), "series_csv": out_csv.name,
               "metrics": metrics.to_dict()}
    write_json(payload, out_csv.with_suffix(".json"))
    return payload


def report(eval_jsons, forecast_jsons, out_dir, figures=True, device="watch", source="accel"):
    out_dir = Path(out_dir)
    evals = [read_json(p) for p in sorted(eval_jsons)]
    fcs = [(Path(p), read_json(p)) for p in sorted(forecast_jsons)]
    classifiers = [
        ev.ClassifierResult(e["model"], e["device"], e["source"], ev.ClassificationReport.from_dict(e["report"]))
        for e in evals
    ]
    forecasts = [ev.ForecastResult(f["activity"], ev.ForecastMetrics(**f["metrics"])) for _, f in fcs]
    markdown, tables = ev.emit_report_tables(classifiers, forecasts, out_dir, device, source)
    written = [out_dir / "tables" / f"{k}.csv" for k in tables] + [out_dir / "report.md"]
    if figures:
        fig_dir = out_dir / "figures"
        if classifiers:
            written.append(plots.plot_macro_f1(classifiers, fig_dir / "macro_f1.png"))
        for e, c in zip(evals, classifiers):
            tag = f"{e['arch']}_{e['device']}_{e['source']}"
            written.append(plots.plot_confusion(c.report, f"{c.model} ({c.device} {c.source})",
                                                fig_dir / f"confusion_{tag}.png"))
            written.append(plots.plot_history(md.TrainHistory.from_dict(e["history"]), c.model,
                                              fig_dir / f"history_{tag}.png"))
        for path, f in fcs:
            series = np.loadtxt(path.with_name(f["series_csv"]), delimiter=",", skiprows=1)
            written.append(plots.plot_forecast(series[:, 1:4], series[:, 4:7], ev.forecast_label(f["activity"]),
                                               fig_dir / f"forecast_{f['activity']}.png"))
    return markdown, written


# --------------------------------------------------------------------------
# Whole pipeline


@dataclass
class RunConfig:
    work_dir: Path = Path("har-work")
    raw_dir: Path | None = None
    synthetic: bool = False
    device: str = "watch"
    sources: tuple = ("accel",)
    archs: tuple = md.ARCHITECTURES
    drop_features: tuple = ()
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 7
    epochs: int | None = None
    n_per_class: int = 4
    mancova_sensors: tuple = ("accel",)
    forecast_activities: tuple = ev.FORECAST_CODES
    forecast_epochs: int = 40
    forecast_context: int = md.FORECAST_CONTEXT
    forecast_stride: int = 1
    skip_policy: str = "skip"
    figures: bool = True

    def validate(self):
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed must be an explicit integer")
        if self.device not in ds.DEVICES:
            raise ConfigError(f"unknown device {self.device!r}")
        for s in self.sources:
            if s not in ("accel", "gyro", "both"):
                raise ConfigError(f"unknown sensor source {s!r}")
        for a in self.archs:
            if a not in md.BUILDERS:
                raise ConfigError(f"unknown architecture {a!r}")
        for s in self.mancova_sensors:
            if s not in ds.SENSORS:
                raise ConfigError(f"unknown sensor {s!r}")
        for code in self.forecast_activities:
            if code not in ev.FORECAST_CODES:
                raise ConfigError(f"cannot forecast activity {code!r}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.synthetic:
            if self.raw_dir is None or not Path(self.raw_dir).is_dir():
                raise DataError(
                    f"raw data directory {self.raw_dir} not found; point --raw-dir at the WISDM "
                    "'raw' folder or pass --synthetic to generate data"
                )

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class RunSummary:
    work_dir: Path
    artifacts: dict = field(default_factory=dict)  # relative path -> sha256
    timings: dict = field(default_factory=dict)
    ran: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    evaluations: dict = field(default_factory=dict)
    mancova: dict = field(default_factory=dict)
    forecasts: dict = field(default_factory=dict)


def _write_synthetic(raw_dir, device_sensor, n_per_class, seed):
    streams = ds.synthesize_dataset(n_per_class, seed, device_sensor)
    ds.write_raw_streams(streams, raw_dir / device_sensor.device / device_sensor.sensor / "synthetic.txt")


def synthesize_forecast_streams(seed, device_sensor=ds.WATCH_ACCEL, duration_s=240.0, subject_id=1600):
    """One 240 s synthetic stream for each forecast activity code."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    out = []
    for code in ev.FORECAST_CODES:
        sig = ds.SIGNATURES[ds.merge_eating_label(code)]
        out.append(ds.synthesize_stream(sig, code, subject_id, device_sensor, rng, duration_s))
    return out


def run_pipeline(cfg: RunConfig) -> RunSummary:
    """Run every stage for ``cfg`` and return what was produced.

    Stages whose inputs and parameters are unchanged since the last run
    in the same work directory are skipped.
    """
    cfg.validate()
    work = Path(cfg.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    cache = StageCache(work)
    summary = RunSummary(work)

    def stage(name, inputs, params, outputs, fn):
        start = time.perf_counter()
        ran = cache.run(name, inputs, params, outputs, fn)
        (summary.ran if ran else summary.skipped).append(name)
        if ran:
            summary.timings[name] = time.perf_counter() - start

    needed = {ds.DeviceSensor(cfg.device, "accel" if s == "both" else s) for s in cfg.sources}
    if "both" in cfg.sources:
        needed.add(ds.DeviceSensor(cfg.device, "gyro"))
    for sensor in cfg.mancova_sensors:
        needed.update({ds.DeviceSensor("phone", sensor), ds.DeviceSensor("watch", sensor)})
    needed = sorted(needed)

    raw_dir = Path(cfg.raw_dir) if cfg.raw_dir is not None else work / "raw"
    forecast_raw = None
    if cfg.synthetic:
        raw_dir = work / "raw"
        for dsn in needed:
            seed = derive_seed(cfg.seed, "synthesize", dsn.tag)
            out = raw_dir / dsn.device / dsn.sensor / "synthetic.txt"
            stage(f"synthesize-{dsn.tag}", [], {"n_per_class": cfg.n_per_class, "seed": seed}, [out],
                  lambda dsn=dsn, seed=seed: _write_synthetic(raw_dir, dsn, cfg.n_per_class, seed))
        if cfg.forecast_activities:
            forecast_raw = raw_dir / "forecast" / f"{cfg.device}_accel.txt"
            seed = derive_seed(cfg.seed, "synthesize", "forecast")
            fds = ds.DeviceSensor(cfg.device, "accel")
            stage("synthesize-forecast", [], {"seed": seed, "device": cfg.device}, [forecast_raw],
                  lambda: ds.write_raw_streams(synthesize_forecast_streams(seed, fds), forecast_raw))
    provenance = "synthetic" if cfg.synthetic else "real"

    windows = {}
    for dsn in needed:
        out = work / "windows" / f"{dsn.tag}.csv"
        files = ds.find_raw_files(raw_dir, dsn)
        if not files:
            raise DataError(f"no raw {dsn.tag} files under {raw_dir}")
        stage(f"ingest-{dsn.tag}", files, {"skip_policy": cfg.skip_policy}, [out, manifest_path(out)],
              lambda dsn=dsn, out=out: ingest(raw_dir, dsn, out, cfg.skip_policy))
        windows[dsn.tag] = out

    feature_files = {}
    for source in cfg.sources:
        out = work / "features" / f"{cfg.device}_{source}.csv"
        if source == "both":
            inputs = [windows[f"{cfg.device}_accel"], windows[f"{cfg.device}_gyro"]]
        else:
            inputs = [windows[f"{cfg.device}_{source}"]]
        stage(f"featurize-{cfg.device}_{source}", inputs, {"drop": list(cfg.drop_features), "prov": provenance},
              [out], lambda inputs=inputs, out=out: featurize(inputs, out, cfg.drop_features, provenance))
        feature_files[source] = out

    for sensor in cfg.mancova_sensors:
        out = work / "mancova" / f"{sensor}.json"
        inputs = [windows[f"phone_{sensor}"], windows[f"watch_{sensor}"]]
        stage(f"mancova-{sensor}", inputs, {}, [out],
              lambda inputs=inputs, sensor=sensor, out=out: mancova(inputs[0], inputs[1], sensor, out))
        summary.mancova[sensor] = read_json(out)

    split_seed = derive_seed(cfg.seed, "split")
    eval_files = []
    for source, feats in feature_files.items():
        for arch in cfg.archs:
            tag = f"{arch}_{cfg.device}_{source}"
            stem = work / "models" / tag
            json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
            seed = derive_seed(cfg.seed, "train", arch, source)
            params = {"arch": arch, "seed": seed, "epochs": cfg.epochs, "ratios": list(cfg.ratios),
                      "split_seed": split_seed, "device": cfg.device, "source": source}

            def do_train(arch=arch, feats=feats, stem=stem, seed=seed, source=source, tag=tag):
                _, elapsed = train_model(arch, feats, stem, seed, cfg.device, source, cfg.epochs, cfg.ratios,
                                         split_seed)
                summary.timings[f"fit-{tag}"] = elapsed

            stage(f"train-{tag}", [feats], params, [json_path, bin_path], do_train)
            out = work / "eval" / f"{tag}.json"
            stage(f"evaluate-{tag}", [feats, json_path, bin_path], {"split": "test"}, [out],
                  lambda stem=stem, feats=feats, out=out: evaluate_model(stem, feats, out))
            eval_files.append(out)
            summary.evaluations[tag] = read_json(out)

    forecast_files = []
    if cfg.forecast_activities:
        fds = ds.DeviceSensor(cfg.device, "accel")
        source_file = forecast_raw if forecast_raw is not None else ds.find_raw_files(raw_dir, fds)
        sources = [source_file] if isinstance(source_file, Path) else list(source_file)
        for code in cfg.forecast_activities:
            out = work / "forecast" / f"{code}.csv"
            seed = derive_seed(cfg.seed, "forecast", code)
            params = {"seed": seed, "epochs": cfg.forecast_epochs, "context": cfg.forecast_context,
                      "stride": cfg.forecast_stride}

            def do_forecast(code=code, out=out, seed=seed):
                for src in sources:
                    try:
                        return forecast_activity(code, src, out, seed, fds, cfg.forecast_epochs,
                                                 cfg.forecast_context, cfg.forecast_stride)
                    except DataError:
                        continue
                raise DataError(f"no stream for activity {code} in the {fds.tag} data")

            stage(f"forecast-{code}", sources, params, [out, out.with_suffix(".json")], do_forecast)
            forecast_files.append(out.with_suffix(".json"))
            summary.forecasts[code] = read_json(out.with_suffix(".json"))

    report_dir = work / "report"
    report_outputs = [report_dir / "tables" / f"{k}.csv" for k in
                      ("macro_f1", "precision_nonhand", "precision_hand", "forecast")] + [report_dir / "report.md"]
    written = []

    def do_report():
        written.extend(report(eval_files, forecast_files, report_dir, cfg.figures, cfg.device,
                              "accel" if "accel" in cfg.sources else cfg.sources[0]))

    stage("report", eval_files + forecast_files, {"figures": cfg.figures}, report_outputs, do_report)

    artifacts = {}
    for sub in ("raw", "windows", "features", "mancova", "models", "eval", "forecast", "report"):
        base = work / sub
        if base.is_dir():
            for p in sorted(base.rglob("*")):
                if p.is_file():
                    artifacts[str(p.relative_to(work))] = file_hash(p)
    summary.artifacts = artifacts
    (work / "artifacts.sha256").write_text(
        "".join(f"{h}  {p}\n" for p, h in sorted(artifacts.items())), encoding="utf-8"
    )
    write_json({k: round(v, 3) for k, v in summary.timings.items()}, work / "logs" / "timings.json")
    return summary
