"""Sequential container tying layers, losses and parameters together."""

from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeMismatch
from .layers import LayerSpec, make_layer, softmax
from .losses import categorical_cross_entropy, mean_squared_error

PREDICT_CHUNK = 32


class Sequential:
    """A stack of layers applied in order.

    ``loss`` is ``"cce"`` (the stack must end in Softmax; the gradient is
    taken through the fused softmax/cross-entropy) or ``"mse"``.
    Parameters are exposed as ``"<layer index>.<name>"`` in layer order,
    which is also the checkpoint order.
    """

    def __init__(self, layer_specs, input_shape, loss="cce", seed=0, debug=None):
        self.layer_specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in layer_specs]
        self.input_shape = tuple(input_shape)
        self.loss = loss
        self.seed = seed
        self.debug = bool(os.environ.get("HAR_FORGE_DEBUG")) if debug is None else debug
        if loss not in ("cce", "mse"):
            raise ValueError(f"unknown loss {loss!r}")
        if loss == "cce" and (not self.layer_specs or self.layer_specs[-1].kind != "Softmax"):
            raise ValueError("a cross-entropy model must end with a Softmax layer")
        rng = np.random.default_rng(seed)
        self.layers = [make_layer(s) for s in self.layer_specs]
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.build(shape, rng)
            self.shapes.append(shape)
        self.output_shape = shape

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict:
        return {f"{i}.{k}": layer.params[k] for i, layer in enumerate(self.layers) for k in layer.param_names}

    def gradients(self) -> dict:
        return {f"{i}.{k}": layer.grads[k] for i, layer in enumerate(self.layers) for k in layer.param_names}

    def set_parameters(self, values: dict):
        for name, arr in values.items():
            i, k = name.split(".", 1)
            target = self.layers[int(i)].params[k]
            if target.shape != arr.shape:
                raise ShapeMismatch(f"{name}: expected {target.shape}, got {arr.shape}")
            target[...] = arr

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)

    # -- passes ---------------------------------------------------------------

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        try:
            return x.reshape((x.shape[0],) + self.input_shape)
        except ValueError:
            raise ShapeMismatch(f"input {x.shape} incompatible with {self.input_shape}") from None

    def _run(self, x, layers, train, rng):
        for layer in layers:
            x = layer.forward(x, train=train, rng=rng)
            if self.debug and not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite output from {layer.spec.kind}")
        return x

    def forward(self, x, train=False, rng=None):
        return self._run(self._prepare(x), self.layers, train, rng)

    def loss_and_grad(self, x, targets, train=True, rng=None):
        """Forward, loss and backward; parameter gradients land in ``gradients()``.

        Returns ``(loss, output)`` where output is probabilities for
        cross-entropy models and raw predictions otherwise.
        """
        x = self._prepare(x)
        if self.loss == "cce":
            body = self.layers[:-1]
            out = softmax(self._run(x, body, train, rng))
            loss, grad = categorical_cross_entropy(out, targets)
        else:
            body = self.layers
            out = self._run(x, body, train, rng)
            loss, grad = mean_squared_error(out, targets)
        for layer in reversed(body):
            grad = layer.backward(grad)
        return loss, out

    def evaluate_loss(self, x, targets, chunk=256):
        """Inference-mode loss over a whole set, computed in chunks."""
        x = self._prepare(x)
        targets = np.asarray(targets, dtype=np.float64)
        total = 0.0
        for lo in range(0, len(x), chunk):
            out = self.forward(x[lo : lo + chunk])
            if self.loss == "cce":
                loss, _ = categorical_cross_entropy(out, targets[lo : lo + chunk])
            else:
                loss, _ = mean_squared_error(out, targets[lo : lo + chunk])
            total += loss * len(out)
        return total / max(len(x), 1)

    def predict(self, x):
        """Inference-mode outputs, evaluated in zero-padded fixed-size chunks.

        Fixed chunk shapes keep each row's result independent of how many
        rows are passed together (BLAS kernels vary with matrix shape).
        """
        x = self._prepare(x)
        n = len(x)
        outs = []
        for lo in range(0, n, PREDICT_CHUNK):
            block = x[lo : lo + PREDICT_CHUNK]
            k = len(block)
            if k < PREDICT_CHUNK:
                block = np.concatenate([block, np.zeros((PREDICT_CHUNK - k,) + block.shape[1:])])
            outs.append(self.forward(block)[:k])
        if not outs:
            return np.empty((0,) + tuple(self.output_shape))
        return np.concatenate(outs)
