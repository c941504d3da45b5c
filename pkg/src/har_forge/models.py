"""Classifier architectures, the GRU forecaster, and the training loop.

All four classifiers read the scaled feature vector as a sequence with
one channel per step (``(n_features, 1)``). "ConvLSTM" here is a Conv1D
layer feeding an ordinary LSTM, not a convolutional-gate LSTM cell.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import CLASS_SET, SAMPLE_RATE_HZ, LabeledDataset
from .errors import NonFiniteLoss, ShapeMismatch
from .features import ScalerParams, scaler_apply
from .nncore import AdamState, LayerSpec, Sequential, adam_step, load_checkpoint, one_hot, save_checkpoint

log = logging.getLogger(__name__)

N_CLASSES = len(CLASS_SET)
N_FEATURES = 45
BATCH_SIZE = 32
STOP_TOLERANCE = 0.01
STOP_WARMUP = 5
FORECAST_HORIZON = 30 * SAMPLE_RATE_HZ
FORECAST_HISTORY = 210 * SAMPLE_RATE_HZ
FORECAST_CONTEXT = 40

ARCHITECTURES = ("lstm", "bilstm", "convlstm", "cnn")
DISPLAY_NAMES = {"lstm": "LSTM", "bilstm": "BiLSTM", "convlstm": "ConvLSTM", "cnn": "CNN", "gru": "GRU-Forecaster"}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    input_shape: tuple
    max_epochs: int
    batch_size: int = BATCH_SIZE
    loss: str = "cce"
    stop_tolerance: float | None = STOP_TOLERANCE

    def build(self, seed=0) -> Sequential:
        return Sequential(self.layers, self.input_shape, self.loss, seed)

    def shape_chain(self):
        """Per-layer output shapes; raises ShapeMismatch if the stack does not chain."""
        return self.build(0).shapes

    def n_params(self):
        return self.build(0).n_params()

    def replace(self, **changes):
        d = {**self.__dict__, **changes}
        return ModelSpec(**d)

    def to_dict(self):
        return {
            "name": self.name,
            "layers": [s.to_dict() for s in self.layers],
            "input_shape": list(self.input_shape),
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "loss": self.loss,
            "stop_tolerance": self.stop_tolerance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"], tuple(LayerSpec.from_dict(s) for s in d["layers"]), tuple(d["input_shape"]),
            d["max_epochs"], d["batch_size"], d["loss"], d["stop_tolerance"],
        )


def _dense_relu(units):
    return [LayerSpec("Dense", units=units), LayerSpec("ReLU")]


def _head(n_classes):
    return [LayerSpec("Dense", units=n_classes), LayerSpec("Softmax")]


def build_lstm(n_features=N_FEATURES, n_classes=N_CLASSES, units=128, dense=(64, 64, 32), max_epochs=226):
    d1, d2, d3 = dense
    layers = (
        [LayerSpec("LSTM", units=units), LayerSpec("Dropout", rate=0.3)]
        + _dense_relu(d1) + [LayerSpec("Dropout", rate=0.2)]
        + _dense_relu(d2) + _dense_relu(d3) + _head(n_classes)
    )
    return ModelSpec("LSTM", tuple(layers), (n_features, 1), max_epochs)


def build_bilstm(n_features=N_FEATURES, n_classes=N_CLASSES, units=128, dense=(64, 64, 32), max_epochs=226):
    spec = build_lstm(n_features, n_classes, units, dense, max_epochs)
    layers = (LayerSpec("BiLSTM", units=units),) + spec.layers[1:]
    return spec.replace(name="BiLSTM", layers=layers)


def build_convlstm(n_features=N_FEATURES, n_classes=N_CLASSES, filters=128, kernel_size=4, units=128,
                   dense=(100, 64, 32), max_epochs=95):
    d1, d2, d3 = dense
    layers = (
        [LayerSpec("Conv1D", filters=filters, kernel_size=kernel_size), LayerSpec("ReLU"),
         LayerSpec("Dropout", rate=0.4), LayerSpec("LSTM", units=units)]
        + _dense_relu(d1) + _dense_relu(d2) + [LayerSpec("Dropout", rate=0.2)]
        + _dense_relu(d3) + _head(n_classes)
    )
    return ModelSpec("ConvLSTM", tuple(layers), (n_features, 1), max_epochs)


def build_cnn(n_features=N_FEATURES, n_classes=N_CLASSES, filters=128, kernel_size=10, dense=64,
              pool_size=2, max_epochs=148):
    # pooling needs an integer width; 2 is the smallest that downsamples
    layers = (
        [LayerSpec("Conv1D", filters=filters, kernel_size=kernel_size), LayerSpec("ReLU"),
         LayerSpec("Dropout", rate=0.4),
         LayerSpec("Conv1D", filters=filters, kernel_size=kernel_size), LayerSpec("ReLU"),
         LayerSpec("Dropout", rate=0.2),
         LayerSpec("MaxPool1D", pool_size=pool_size), LayerSpec("Flatten")]
        + _dense_relu(dense) + _head(n_classes)
    )
    return ModelSpec("CNN", tuple(layers), (n_features, 1), max_epochs)


def build_gru_forecaster(context=FORECAST_CONTEXT, channels=3, units=64, max_epochs=40):
    """GRU over a sliding context of raw samples, predicting the next sample."""
    layers = (LayerSpec("GRU", units=units), LayerSpec("Dense", units=channels))
    return ModelSpec("GRU-Forecaster", layers, (context, channels), max_epochs, loss="mse", stop_tolerance=None)


BUILDERS = {"lstm": build_lstm, "bilstm": build_bilstm, "convlstm": build_convlstm, "cnn": build_cnn}


def build_spec(arch, n_features=N_FEATURES, max_epochs=None):
    spec = BUILDERS[arch](n_features=n_features)
    return spec if max_epochs is None else spec.replace(max_epochs=max_epochs)


# --------------------------------------------------------------------------
# Training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float | None
    val_acc: float | None


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = "max_epochs"

    def to_dict(self):
        return {"epochs": [asdict(e) for e in self.epochs], "stop_epoch": self.stop_epoch,
                "stop_reason": self.stop_reason}

    @classmethod
    def from_dict(cls, d):
        return cls([EpochRecord(**e) for e in d["epochs"]], d["stop_epoch"], d["stop_reason"])


@dataclass
class TrainedModel:
    spec: ModelSpec
    network: Sequential
    history: TrainHistory
    seed: int
    scaler: ScalerParams | None = None
    class_set: tuple = CLASS_SET
    meta: dict = field(default_factory=dict)

    def predict_raw(self, features):
        """Scale raw feature rows with the stored scaler, then predict."""
        return predict(self, scaler_apply(self.scaler, features))


def _xy(data, loss, n_classes):
    if isinstance(data, LabeledDataset):
        x, y = data.features, data.labels
    else:
        x, y = data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if loss == "cce" and y.ndim == 1:
        return x, one_hot(y, n_classes), y.astype(np.int64)
    y = y.astype(np.float64)
    return x, y, (y.argmax(axis=1) if loss == "cce" else None)


def _accuracy(network, x, labels):
    if labels is None:
        return None
    return float(np.mean(network.predict(x).argmax(axis=1) == labels))


def train(spec: ModelSpec, train_data, val_data, seed: int = 0, max_epochs: int | None = None,
          network: Sequential | None = None):
    """Mini-batch Adam with per-epoch seeded shuffling.

    The epoch's training loss is the running mean of the mini-batch losses
    (training mode, dropout active); the validation loss is computed in
    inference mode after the epoch. Training stops at the first epoch past
    the warm-up where the two differ by less than ``spec.stop_tolerance``,
    otherwise at ``max_epochs``. Returns ``(TrainedModel, TrainHistory)``.
    """
    spec.shape_chain()
    max_epochs = spec.max_epochs if max_epochs is None else max_epochs
    network = spec.build(seed) if network is None else network
    n_out = network.output_shape[-1]
    x_tr, y_tr, lab_tr = _xy(train_data, spec.loss, n_out)
    x_va, y_va, lab_va = _xy(val_data, spec.loss, n_out)
    if len(x_tr) == 0:
        raise ShapeMismatch("empty training set")
    state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    history = TrainHistory()
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(x_tr))
        loss_sum, hits = 0.0, 0
        for lo in range(0, len(order), spec.batch_size):
            idx = order[lo : lo + spec.batch_size]
            loss, out = network.loss_and_grad(x_tr[idx], y_tr[idx], train=True, rng=rng)
            if not math.isfinite(loss):
                history.stop_epoch = epoch
                history.stop_reason = "diverged"
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}", history)
            adam_step(network.parameters(), network.gradients(), state)
            loss_sum += loss * len(idx)
            if lab_tr is not None:
                hits += int(np.sum(out.argmax(axis=1) == lab_tr[idx]))
        tr_loss = loss_sum / len(x_tr)
        va_loss = network.evaluate_loss(x_va, y_va) if len(x_va) else float("nan")
        if len(x_va) and not math.isfinite(va_loss):
            history.stop_epoch = epoch
            history.stop_reason = "diverged"
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}", history)
        rec = EpochRecord(
            epoch, tr_loss, va_loss,
            None if lab_tr is None else hits / len(x_tr),
            _accuracy(network, x_va, lab_va) if len(x_va) else None,
        )
        history.epochs.append(rec)
        history.stop_epoch = epoch
        log.info("%s epoch %d: train %.4f val %.4f", spec.name, epoch, tr_loss, va_loss)
        if (spec.stop_tolerance is not None and epoch > STOP_WARMUP and len(x_va)
                and abs(tr_loss - va_loss) < spec.stop_tolerance):
            history.stop_reason = "converged_rule"
            break
    return TrainedModel(spec, network, history, seed), history


def predict(model, features):
    """Class distributions for already-scaled feature rows."""
    network = model.network if isinstance(model, TrainedModel) else model
    return network.predict(features)


def classify(model, features):
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return predict(model, features).argmax(axis=1)


def save_trained(model: TrainedModel, stem):
    meta = {
        "spec": model.spec.to_dict(),
        "history": model.history.to_dict(),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "class_set": list(model.class_set),
        "train_seed": model.seed,
        **model.meta,
    }
    return save_checkpoint(model.network, stem, epoch=model.history.stop_epoch, meta=meta)


def load_trained(stem) -> TrainedModel:
    network, manifest = load_checkpoint(stem)
    meta = dict(manifest["meta"])
    spec = ModelSpec.from_dict(meta.pop("spec"))
    history = TrainHistory.from_dict(meta.pop("history"))
    scaler = meta.pop("scaler")
    class_set = tuple(meta.pop("class_set"))
    seed = meta.pop("train_seed")
    return TrainedModel(spec, network, history, seed,
                        None if scaler is None else ScalerParams.from_dict(scaler), class_set, meta)


# --------------------------------------------------------------------------
# Forecasting


@dataclass
class Forecaster:
    model: TrainedModel
    mean: np.ndarray
    std: np.ndarray

    @property
    def context(self):
        return self.model.spec.input_shape[0]

    def normalize(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values):
        return np.asarray(values) * self.std + self.mean


def context_pairs(series, context, stride=1):
    """Teacher-forcing pairs: each ``context``-long slice and the sample after it."""
    series = np.asarray(series, dtype=np.float64)
    starts = np.arange(0, len(series) - context, stride)
    x = np.stack([series[s : s + context] for s in starts]) if len(starts) else np.empty((0, context, series.shape[1]))
    return x, series[starts + context]


def fit_forecaster(history, seed=0, context=FORECAST_CONTEXT, units=64, max_epochs=40, stride=1,
                   val_fraction=0.1) -> Forecaster:
    """Train a next-sample GRU on a (n, channels) history.

    The series is standardized per channel with the history's statistics.
    The last ``val_fraction`` of the pairs (chronologically) is held out
    for validation loss reporting.
    """
    history = np.asarray(history, dtype=np.float64)
    mean = history.mean(axis=0)
    std = history.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    norm = (history - mean) / std
    x, y = context_pairs(norm, context, stride)
    if len(x) < 2:
        raise ShapeMismatch(f"history of {len(history)} samples is too short for context {context}")
    n_val = int(len(x) * val_fraction)
    spec = build_gru_forecaster(context, history.shape[1], units, max_epochs)
    cut = len(x) - n_val
    trained, _ = train(spec, (x[:cut], y[:cut]), (x[cut:], y[cut:]), seed)
    return Forecaster(trained, mean, std)


def untrained_forecaster(history, seed=0, context=FORECAST_CONTEXT, units=64) -> Forecaster:
    history = np.asarray(history, dtype=np.float64)
    std = history.std(axis=0)
    spec = build_gru_forecaster(context, history.shape[1], units, 0)
    net = spec.build(seed)
    return Forecaster(TrainedModel(spec, net, TrainHistory(), seed), history.mean(axis=0), np.where(std > 0, std, 1.0))


def rollout(forecaster: Forecaster, context_values, steps=FORECAST_HORIZON):
    """Free-running forecast: each prediction is fed back as the newest input."""
    net = forecaster.model.network
    c = forecaster.context
    buf = forecaster.normalize(context_values)[-c:]
    if len(buf) < c:
        raise ShapeMismatch(f"rollout needs {c} context samples, got {len(buf)}")
    window = np.concatenate([buf, np.zeros((steps, buf.shape[1]))])
    for k in range(steps):
        window[c + k] = net.forward(window[None, k : c + k])[0]
    return forecaster.denormalize(window[c:])


@dataclass
class ForecastRun:
    actual: np.ndarray
    predicted: np.ndarray
    forecaster: Forecaster
    history_len: int


def forecast_series(series, seed=0, horizon=FORECAST_HORIZON, history_len=FORECAST_HISTORY,
                    context=FORECAST_CONTEXT, max_epochs=40, stride=1, units=64) -> ForecastRun:
    """Train on the history portion of ``series`` and roll out ``horizon`` steps.

    The last ``horizon`` samples are held out as ground truth; the history
    is the ``history_len`` samples before them (fewer if the series is short).
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) < horizon + context + 2:
        raise ShapeMismatch(f"series of {len(series)} samples is too short to forecast {horizon} steps")
    hist_end = len(series) - horizon
    hist = series[max(0, hist_end - history_len) : hist_end]
    fc = fit_forecaster(hist, seed, context, units, max_epochs, stride)
    pred = rollout(fc, hist, horizon)
    return ForecastRun(series[hist_end:], pred, fc, len(hist))
