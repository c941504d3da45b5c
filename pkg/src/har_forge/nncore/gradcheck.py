"""Central finite-difference checks of the analytic backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_H = 1e-5
# denominators below this are treated as this, so gradients that are zero
# up to rounding compare on absolute error
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    per_param: dict = field(default_factory=dict)
    per_layer: dict = field(default_factory=dict)
    worst: list = field(default_factory=list)  # (name, index, analytic, numeric, rel)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    @property
    def failing_layers(self):
        return sorted(i for i, e in self.per_layer.items() if e >= self.tolerance)


def numeric_gradient(f, arr, h=DEFAULT_H):
    """Central differences of scalar ``f()`` with respect to ``arr`` (in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(model, x, targets, tolerance=1e-4, h=DEFAULT_H, seed=0, n_worst=5):
    """Compare every parameter gradient of ``model`` with central differences.

    The loss is evaluated in training mode with a freshly seeded rng each
    time, so dropout masks are identical across evaluations.
    """

    def loss():
        return model.loss_and_grad(x, targets, train=True, rng=np.random.default_rng(seed))[0]

    loss()
    analytic = {k: v.copy() for k, v in model.gradients().items()}
    report = GradCheckReport(tolerance)
    rows = []
    for name, p in model.parameters().items():
        numeric = numeric_gradient(loss, p, h)
        rel = relative_error(analytic[name], numeric)
        worst = float(rel.max()) if rel.size else 0.0
        report.per_param[name] = worst
        layer = int(name.split(".", 1)[0])
        report.per_layer[layer] = max(report.per_layer.get(layer, 0.0), worst)
        if rel.size:
            j = int(rel.argmax())
            rows.append((name, j, float(analytic[name].ravel()[j]), float(numeric.ravel()[j]), worst))
    report.max_rel_error = max(report.per_param.values(), default=0.0)
    report.worst = sorted(rows, key=lambda r: -r[4])[:n_worst]
    return report


def check_layer(layer, x, seed=0, h=DEFAULT_H, train=False):
    """Gradient check of a single built layer under a random linear readout.

    Returns the max relative error over the input and every parameter.
    """
    rng = np.random.default_rng(seed)
    y = layer.forward(x, train=train, rng=np.random.default_rng(seed))
    proj = rng.standard_normal(y.shape)

    def f():
        return float(np.sum(layer.forward(x, train=train, rng=np.random.default_rng(seed)) * proj))

    f()
    dx = layer.backward(proj)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    errs = {"input": float(relative_error(dx, numeric_gradient(f, x, h)).max())}
    for k, p in layer.params.items():
        errs[k] = float(relative_error(analytic[k], numeric_gradient(f, p, h)).max())
    return errs
