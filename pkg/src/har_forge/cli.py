"""Command-line entry point: ``har-forge <subcommand> ...``.

Every subcommand accepts ``--config FILE``, a plain ``key = value`` file
whose keys are the long option names (dashes or underscores). Values on
the command line override the file.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import dataset as ds
from . import evaluation as ev
from . import models as md
from . import pipeline as pl
from .errors import ConfigError, HarForgeError, IoError

log = logging.getLogger("har_forge")

LIST_KEYS = {"sources", "archs", "drop_feature", "inputs", "activities", "mancova_sensors"}
BOOL_KEYS = {"synthetic", "no_figures", "verbose"}


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in LIST_KEYS:
            values[key] = [v.strip() for v in value.split(",") if v.strip()]
        elif key in BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{path}:{n}: {key} must be true or false")
            values[key] = value.lower() in ("true", "1", "yes")
        else:
            values[key] = value
    return values


def _device_sensor(text):
    try:
        return ds.DeviceSensor.parse(text)
    except (ValueError, HarForgeError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ratios(text):
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated values")
    return parts


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with option defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="har-forge", description="Smartphone and smartwatch activity recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse raw sensor files into 10 s windows")
    p.add_argument("--in", dest="in_dir", required=True, help="raw data directory")
    p.add_argument("--device-sensor", type=_device_sensor, required=True, help="e.g. watch_accel")
    p.add_argument("--out", required=True, help="windows CSV to write")
    p.add_argument("--skip-policy", choices=("skip", "abort"), default="skip")

    p = sub.add_parser("featurize", parents=[common], help="compute the 45 window features")
    p.add_argument("--in", dest="inputs", action="append", required=True,
                   help="windows CSV; give it twice (accel then gyro) for combined features")
    p.add_argument("--out", required=True)
    p.add_argument("--drop-feature", action="append", default=[], help="feature column to leave out")
    p.add_argument("--provenance", choices=("real", "synthetic"), default="real")

    p = sub.add_parser("mancova", parents=[common], help="test whether phone and watch readings differ")
    p.add_argument("--phone", required=True, help="phone raw file or windows CSV")
    p.add_argument("--watch", required=True, help="watch raw file or windows CSV")
    p.add_argument("--sensor", choices=ds.SENSORS, default="accel")
    p.add_argument("--out", help="JSON result file")

    p = sub.add_parser("train", parents=[common], help="train one classifier")
    p.add_argument("--arch", choices=md.ARCHITECTURES, required=True)
    p.add_argument("--data", required=True, help="features CSV")
    p.add_argument("--out", required=True, help="checkpoint stem (writes .json and .bin)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, help="epoch budget (default: the architecture's own)")
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1), help="train,val,test fractions")
    p.add_argument("--split-seed", type=int, help="defaults to --seed")
    p.add_argument("--device", choices=ds.DEVICES, default="watch")
    p.add_argument("--sensor", "--source", dest="source", choices=tuple(ev.SOURCE_COLUMNS), default="accel",
                   help="sensor source the features came from (recorded in the checkpoint)")

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on its held-out split")
    p.add_argument("--model", required=True, help="checkpoint stem")
    p.add_argument("--data", required=True, help="features CSV used for training")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="JSON result file")

    p = sub.add_parser("forecast", parents=[common], help="forecast the last 30 s of an activity stream")
    p.add_argument("--activity", choices=ev.FORECAST_CODES, required=True)
    p.add_argument("--data", required=True, help="raw file or windows CSV")
    p.add_argument("--out", required=True, help="CSV of actual and forecast values")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--device-sensor", type=_device_sensor, default=ds.WATCH_ACCEL)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--context", type=int, default=md.FORECAST_CONTEXT)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--subject", type=int)

    p = sub.add_parser("report", parents=[common], help="build tables and figures from result files")
    p.add_argument("--eval", dest="eval_glob", default="", help="glob of evaluate JSON files")
    p.add_argument("--forecast", dest="forecast_glob", default="", help="glob of forecast JSON files")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--device", choices=ds.DEVICES, default="watch")
    p.add_argument("--source", choices=tuple(ev.SOURCE_COLUMNS), default="accel")
    p.add_argument("--no-figures", action="store_true")

    for name, helptext in (("run", "run the whole pipeline"),
                           ("demo", "run the whole pipeline on synthetic data")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--work", dest="work_dir", default="har-work", help="working directory")
        p.add_argument("--seed", type=int, default=7 if name == "demo" else None, required=name == "run")
        p.add_argument("--device", choices=ds.DEVICES, default="watch")
        p.add_argument("--sources", nargs="+", choices=tuple(ev.SOURCE_COLUMNS), default=["accel"])
        p.add_argument("--archs", nargs="+", choices=md.ARCHITECTURES, default=list(md.ARCHITECTURES))
        p.add_argument("--drop-feature", action="append", default=[])
        p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
        p.add_argument("--epochs", type=int, default=15 if name == "demo" else None)
        p.add_argument("--activities", nargs="*", choices=ev.FORECAST_CODES, default=list(ev.FORECAST_CODES))
        p.add_argument("--mancova-sensors", nargs="*", choices=ds.SENSORS, default=["accel"])
        p.add_argument("--forecast-epochs", type=int, default=8 if name == "demo" else 40)
        p.add_argument("--forecast-stride", type=int, default=4 if name == "demo" else 1)
        p.add_argument("--no-figures", action="store_true")
        p.add_argument("--skip-policy", choices=("skip", "abort"), default="skip")
        if name == "run":
            p.add_argument("--raw-dir", help="WISDM raw directory")
            p.add_argument("--synthetic", action="store_true", help="generate synthetic data instead")
            p.add_argument("--n-per-class", type=int, default=4)
        else:
            p.add_argument("--n-per-class", type=int, default=4, help="synthetic streams per class")
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = load_config_file(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in subparsers.choices), None)
    if command is None:
        return
    sp = subparsers.choices[command]
    dests = {a.dest for a in sp._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    for action in sp._actions:
        if action.dest in values:
            action.required = False  # the file supplies it
    sp.set_defaults(**values)


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _run_config(args, synthetic):
    return pl.RunConfig(
        work_dir=Path(args.work_dir),
        raw_dir=Path(args.raw_dir) if getattr(args, "raw_dir", None) else None,
        synthetic=synthetic,
        device=args.device,
        sources=tuple(args.sources),
        archs=tuple(args.archs),
        drop_features=tuple(args.drop_feature),
        ratios=tuple(args.ratios),
        seed=int(args.seed),
        epochs=None if args.epochs is None else int(args.epochs),
        n_per_class=int(args.n_per_class),
        mancova_sensors=tuple(args.mancova_sensors),
        forecast_activities=tuple(args.activities),
        forecast_epochs=int(args.forecast_epochs),
        forecast_stride=int(args.forecast_stride),
        skip_policy=args.skip_policy,
        figures=not args.no_figures,
    )


def dispatch(args):
    cmd = args.command
    if cmd == "ingest":
        manifest = pl.ingest(args.in_dir, args.device_sensor, args.out, args.skip_policy)
        _print_json(manifest)
    elif cmd == "featurize":
        data = pl.featurize(args.inputs, args.out, tuple(args.drop_feature), args.provenance)
        print(f"wrote {len(data)} rows x {len(data.feature_names)} features to {args.out}")
    elif cmd == "mancova":
        payload = pl.mancova(args.phone, args.watch, args.sensor, args.out)
        print(payload["verdict"])
    elif cmd == "train":
        model, elapsed = pl.train_model(args.arch, args.data, args.out, args.seed, args.device, args.source,
                                        args.epochs, args.ratios, args.split_seed)
        h = model.history
        print(f"{model.spec.name}: stopped at epoch {h.stop_epoch} ({h.stop_reason}) in {elapsed:.1f}s")
    elif cmd == "evaluate":
        payload = pl.evaluate_model(args.model, args.data, args.out, args.split)
        r = payload["report"]
        print(f"{payload['model']} on {payload['split']} ({payload['n_rows']} rows): "
              f"macro-F1 {r['macro_f1']:.4f}, accuracy {r['accuracy']:.4f}")
    elif cmd == "forecast":
        payload = pl.forecast_activity(args.activity, args.data, args.out, args.seed, args.device_sensor,
                                       args.epochs, args.context, args.stride, args.subject)
        m = payload["metrics"]
        print(f"{ev.forecast_label(args.activity)}: RMSE {m['rmse']:.4f} MSE {m['mse']:.4f} "
              f"MAPE {m['mape']:.2f} sMAPE {m['smape']:.2f}")
    elif cmd == "report":
        evals = sorted(glob.glob(args.eval_glob)) if args.eval_glob else []
        fcs = sorted(glob.glob(args.forecast_glob)) if args.forecast_glob else []
        markdown, _ = pl.report(evals, fcs, args.out, not args.no_figures, args.device, args.source)
        print(markdown)
    elif cmd in ("run", "demo"):
        synthetic = cmd == "demo" or args.synthetic
        summary = pl.run_pipeline(_run_config(args, synthetic))
        print((summary.work_dir / "report" / "report.md").read_text(encoding="utf-8"))
        print(f"ran {len(summary.ran)} stages, {len(summary.skipped)} up to date; "
              f"artifacts listed in {summary.work_dir / 'artifacts.sha256'}")
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return dispatch(args)
    except HarForgeError as exc:
        print(f"har-forge: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"har-forge: error: {exc}", file=sys.stderr)
        return IoError.exit_code


if __name__ == "__main__":
    sys.exit(main())
