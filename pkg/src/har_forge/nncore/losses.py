"""Loss functions returning (loss, gradient)."""

import numpy as np

from ..errors import ShapeMismatch
from .layers import softmax

PROB_FLOOR = 1e-12


def categorical_cross_entropy(probs, one_hot):
    """Mean negative log-likelihood of the target classes.

    The returned gradient is with respect to the *logits* feeding the
    softmax that produced ``probs`` (the fused softmax/cross-entropy form).
    """
    probs = np.asarray(probs, dtype=np.float64)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if probs.shape != one_hot.shape or probs.ndim != 2:
        raise ShapeMismatch(f"probs {probs.shape} and targets {one_hot.shape} must match and be 2-D")
    n = probs.shape[0]
    picked = np.sum(np.clip(probs, PROB_FLOOR, 1.0) * one_hot, axis=1)
    loss = float(-np.mean(np.log(picked)))
    return loss, (probs - one_hot) / n


def cross_entropy_from_logits(logits, one_hot):
    return categorical_cross_entropy(softmax(logits), one_hot)


def mean_squared_error(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
