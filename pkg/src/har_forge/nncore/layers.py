"""Layers with hand-written forward and backward passes.

Every layer works on float64 batches. Sequences are laid out as
``(batch, time, channels)``. ``forward`` caches what ``backward`` needs, so
a backward call always refers to the most recent forward call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch

LAYER_KINDS = (
    "Dense", "ReLU", "Softmax", "Dropout", "Conv1D", "MaxPool1D", "Flatten", "LSTM", "BiLSTM", "GRU",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None
    filters: int | None = None
    kernel_size: int | None = None
    rate: float | None = None
    pool_size: int | None = None
    return_sequences: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        need = {
            "Dense": ("units",), "LSTM": ("units",), "BiLSTM": ("units",), "GRU": ("units",),
            "Conv1D": ("filters", "kernel_size"), "Dropout": ("rate",),
        }.get(self.kind, ())
        for name in need:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} needs {name}")
        for name in ("units", "filters", "kernel_size", "pool_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{self.kind}.{name} must be >= 1")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None and v is not False}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    param_names: tuple = ()

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params = {}
        self.grads = {}
        self.input_shape = None
        self.output_shape = None
        self._cache = None

    def build(self, input_shape, rng):
        self.input_shape = tuple(input_shape)
        self.output_shape = self._build(self.input_shape, rng)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        return self.output_shape

    def _build(self, input_shape, rng):
        return input_shape

    def _check(self, x):
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"{self.spec.kind} expects (*, {self.input_shape}), got {x.shape}")

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def n_params(self):
        return sum(v.size for v in self.params.values())


class Dense(Layer):
    param_names = ("W", "b")

    def _build(self, input_shape, rng):
        if len(input_shape) != 1:
            raise ShapeMismatch(f"Dense expects flat input, got {input_shape}")
        d, u = input_shape[0], self.spec.units
        self.params = {"W": glorot_uniform(rng, (d, u), d, u), "b": np.zeros(u)}
        return (u,)

    def forward(self, x, train=False, rng=None):
        self._check(x)
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._cache
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return np.where(self._cache, dy, 0.0)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    def forward(self, x, train=False, rng=None):
        s = softmax(x)
        self._cache = s
        return s

    def backward(self, dy):
        s = self._cache
        return s * (dy - np.sum(dy * s, axis=-1, keepdims=True))


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def forward(self, x, train=False, rng=None):
        rate = self.spec.rate
        if not train or rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ValueError("Dropout in training mode needs an rng")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy if self._cache is None else dy * self._cache


class Conv1D(Layer):
    """Valid-padding, stride-1 convolution over the time axis."""

    param_names = ("W", "b")

    def _build(self, input_shape, rng):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"Conv1D expects (time, channels), got {input_shape}")
        t, c = input_shape
        k, f = self.spec.kernel_size, self.spec.filters
        if k > t:
            raise ShapeMismatch(f"kernel {k} longer than input length {t}")
        self.params = {"W": glorot_uniform(rng, (k, c, f), k * c, k * f), "b": np.zeros(f)}
        return (t - k + 1, f)

    def forward(self, x, train=False, rng=None):
        self._check(x)
        k, c, f = self.params["W"].shape
        # (B, L, C, k) -> (B, L, k, C) so columns match W's (k, C) order
        cols = np.lib.stride_tricks.sliding_window_view(x, k, axis=1).transpose(0, 1, 3, 2)
        b, l = cols.shape[:2]
        cols = cols.reshape(b * l, k * c)
        self._cache = (x.shape, cols)
        return (cols @ self.params["W"].reshape(k * c, f)).reshape(b, l, f) + self.params["b"]

    def backward(self, dy):
        (b, t, c), cols = self._cache
        k, _, f = self.params["W"].shape
        l = t - k + 1
        dy2 = dy.reshape(b * l, f)
        self.grads["W"] = (cols.T @ dy2).reshape(k, c, f)
        self.grads["b"] = dy2.sum(axis=0)
        dcols = (dy2 @ self.params["W"].reshape(k * c, f).T).reshape(b, l, k, c)
        dx = np.zeros((b, t, c))
        for j in range(k):
            dx[:, j : j + l, :] += dcols[:, :, j, :]
        return dx


class MaxPool1D(Layer):
    """Non-overlapping max pooling; a trailing partial pool is dropped."""

    def _build(self, input_shape, rng):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"MaxPool1D expects (time, channels), got {input_shape}")
        p = self.spec.pool_size or 2
        if input_shape[0] < p:
            raise ShapeMismatch(f"pool {p} longer than input length {input_shape[0]}")
        return (input_shape[0] // p, input_shape[1])

    def forward(self, x, train=False, rng=None):
        self._check(x)
        p = self.spec.pool_size or 2
        b, t, c = x.shape
        tp = t // p
        blocks = x[:, : tp * p].reshape(b, tp, p, c)
        arg = blocks.argmax(axis=2)  # first maximum wins ties
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dy):
        (b, t, c), arg = self._cache
        p = self.spec.pool_size or 2
        tp = t // p
        dblocks = np.zeros((b, tp, p, c))
        np.put_along_axis(dblocks, arg[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros((b, t, c))
        dx[:, : tp * p] = dblocks.reshape(b, tp * p, c)
        return dx


class Flatten(Layer):
    def _build(self, input_shape, rng):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


class LSTM(Layer):
    """LSTM with gate order (input, forget, candidate, output).

    Starts from zero hidden and cell state. Returns the last hidden state,
    or every hidden state when ``return_sequences`` is set.
    """

    param_names = ("W", "U", "b")

    def _build(self, input_shape, rng):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"LSTM expects (time, channels), got {input_shape}")
        t, d = input_shape
        h = self.spec.units
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        self.params = {
            "W": glorot_uniform(rng, (d, 4 * h), d, 4 * h),
            "U": glorot_uniform(rng, (h, 4 * h), h, 4 * h),
            "b": b,
        }
        return (t, h) if self.spec.return_sequences else (h,)

    def forward(self, x, train=False, rng=None):
        self._check(x)
        W, U, bias = self.params["W"], self.params["U"], self.params["b"]
        bsz, T, _ = x.shape
        H = U.shape[0]
        xw = x @ W + bias
        hs = np.zeros((bsz, T + 1, H))
        cs = np.zeros((bsz, T + 1, H))
        gates = np.empty((bsz, T, 4 * H))
        tcs = np.empty((bsz, T, H))
        for t in range(T):
            z = xw[:, t] + hs[:, t] @ U
            a = gates[:, t]
            a[:] = sigmoid(z)
            a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            c = f * cs[:, t] + i * g
            tc = np.tanh(c)
            cs[:, t + 1] = c
            tcs[:, t] = tc
            hs[:, t + 1] = o * tc
        self._cache = (x, hs, cs, gates, tcs)
        return hs[:, 1:].copy() if self.spec.return_sequences else hs[:, -1].copy()

    def backward(self, dy):
        x, hs, cs, gates, tcs = self._cache
        W, U = self.params["W"], self.params["U"]
        bsz, T, D = x.shape
        H = U.shape[0]
        if self.spec.return_sequences:
            dhs = dy
        else:
            dhs = np.zeros((bsz, T, H))
            dhs[:, -1] = dy
        dz_all = np.empty((bsz, T, 4 * H))
        dU = np.zeros_like(U)
        dh_next = np.zeros((bsz, H))
        dc_next = np.zeros((bsz, H))
        for t in range(T - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tcs[:, t]
            dh = dhs[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
            dU += hs[:, t].T @ dz
            dh_next = dz @ U.T
            dc_next = dc * f
        self.grads["W"] = x.reshape(-1, D).T @ dz_all.reshape(-1, 4 * H)
        self.grads["U"] = dU
        self.grads["b"] = dz_all.sum(axis=(0, 1))
        return dz_all @ W.T


class GRU(Layer):
    """GRU with gate order (update, reset, candidate); reset applied before
    the recurrent product of the candidate."""

    param_names = ("W", "U", "b")

    def _build(self, input_shape, rng):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"GRU expects (time, channels), got {input_shape}")
        t, d = input_shape
        h = self.spec.units
        self.params = {
            "W": glorot_uniform(rng, (d, 3 * h), d, 3 * h),
            "U": glorot_uniform(rng, (h, 3 * h), h, 3 * h),
            "b": np.zeros(3 * h),
        }
        return (t, h) if self.spec.return_sequences else (h,)

    def forward(self, x, train=False, rng=None):
        self._check(x)
        W, U, bias = self.params["W"], self.params["U"], self.params["b"]
        bsz, T, _ = x.shape
        H = U.shape[0]
        xw = x @ W + bias
        hs = np.zeros((bsz, T + 1, H))
        zs = np.empty((bsz, T, H))
        rs = np.empty((bsz, T, H))
        ns = np.empty((bsz, T, H))
        for t in range(T):
            h = hs[:, t]
            zr = sigmoid(xw[:, t, : 2 * H] + h @ U[:, : 2 * H])
            z, r = zr[:, :H], zr[:, H:]
            n = np.tanh(xw[:, t, 2 * H :] + (r * h) @ U[:, 2 * H :])
            hs[:, t + 1] = z * h + (1.0 - z) * n
            zs[:, t], rs[:, t], ns[:, t] = z, r, n
        self._cache = (x, hs, zs, rs, ns)
        return hs[:, 1:].copy() if self.spec.return_sequences else hs[:, -1].copy()

    def backward(self, dy):
        x, hs, zs, rs, ns = self._cache
        W, U = self.params["W"], self.params["U"]
        bsz, T, D = x.shape
        H = U.shape[0]
        if self.spec.return_sequences:
            dhs = dy
        else:
            dhs = np.zeros((bsz, T, H))
            dhs[:, -1] = dy
        Uzr, Un = U[:, : 2 * H], U[:, 2 * H :]
        da_all = np.empty((bsz, T, 3 * H))
        dU = np.zeros_like(U)
        dh_next = np.zeros((bsz, H))
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t]
            z, r, n = zs[:, t], rs[:, t], ns[:, t]
            dh = dhs[:, t] + dh_next
            dan = dh * (1.0 - z) * (1.0 - n * n)
            drh = dan @ Un.T
            da = da_all[:, t]
            da[:, :H] = dh * (h_prev - n) * z * (1.0 - z)
            da[:, H : 2 * H] = drh * h_prev * r * (1.0 - r)
            da[:, 2 * H :] = dan
            dU[:, : 2 * H] += h_prev.T @ da[:, : 2 * H]
            dU[:, 2 * H :] += (r * h_prev).T @ dan
            dh_next = dh * z + drh * r + da[:, : 2 * H] @ Uzr.T
        self.grads["W"] = x.reshape(-1, D).T @ da_all.reshape(-1, 3 * H)
        self.grads["U"] = dU
        self.grads["b"] = da_all.sum(axis=(0, 1))
        return da_all @ W.T


class BiLSTM(Layer):
    """Two independent LSTMs, one reading time reversed; outputs concatenated."""

    param_names = ("fwd.W", "fwd.U", "fwd.b", "bwd.W", "bwd.U", "bwd.b")

    def _build(self, input_shape, rng):
        sub = LayerSpec("LSTM", units=self.spec.units, return_sequences=self.spec.return_sequences)
        self.fwd, self.bwd = LSTM(sub), LSTM(sub)
        out = self.fwd.build(input_shape, rng)
        self.bwd.build(input_shape, rng)
        self.params = {f"fwd.{k}": v for k, v in self.fwd.params.items()}
        self.params.update({f"bwd.{k}": v for k, v in self.bwd.params.items()})
        return out[:-1] + (2 * out[-1],)

    def forward(self, x, train=False, rng=None):
        self._check(x)
        self._sync()
        hf = self.fwd.forward(x)
        hb = self.bwd.forward(x[:, ::-1])
        if self.spec.return_sequences:
            hb = hb[:, ::-1]
        return np.concatenate([hf, hb], axis=-1)

    def backward(self, dy):
        H = self.spec.units
        dyf, dyb = dy[..., :H], dy[..., H:]
        if self.spec.return_sequences:
            dyb = dyb[:, ::-1]
        dx = self.fwd.backward(dyf) + self.bwd.backward(dyb)[:, ::-1]
        self.grads = {f"fwd.{k}": v for k, v in self.fwd.grads.items()}
        self.grads.update({f"bwd.{k}": v for k, v in self.bwd.grads.items()})
        return dx

    def _sync(self):
        # params may have been swapped for new arrays (checkpoint load)
        for k in ("W", "U", "b"):
            self.fwd.params[k] = self.params[f"fwd.{k}"]
            self.bwd.params[k] = self.params[f"bwd.{k}"]


_LAYER_CLASSES = {
    "Dense": Dense, "ReLU": ReLU, "Softmax": Softmax, "Dropout": Dropout, "Conv1D": Conv1D,
    "MaxPool1D": MaxPool1D, "Flatten": Flatten, "LSTM": LSTM, "BiLSTM": BiLSTM, "GRU": GRU,
}


def make_layer(spec: LayerSpec) -> Layer:
    return _LAYER_CLASSES[spec.kind](spec)
