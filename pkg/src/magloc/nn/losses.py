"""Loss functions returning (scalar value, gradient wrt predictions).

Regression losses reduce by mean over all elements; classification by
mean over the batch. Cross entropy takes raw logits and integer class
targets and folds the softmax into the backward pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError

LOSSES = ("cross_entropy", "mse", "mae", "huber")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects (B, K) logits, got {logits.shape}")
    targets = np.asarray(targets)
    b, k = logits.shape
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.min() < 0 or targets.max() >= k:
        raise ShapeError(f"class target outside [0, {k})")
    p = softmax(logits)
    loss = float(-np.log(np.maximum(p[np.arange(b), targets], 1e-300)).mean())
    grad = p.copy()
    grad[np.arange(b), targets] -= 1.0
    return loss, grad / b


def _check_same(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")


def mse(pred: np.ndarray, target: np.ndarray):
    _check_same(pred, target)
    err = pred - target
    return float((err * err).mean()), 2.0 * err / err.size


def mae(pred: np.ndarray, target: np.ndarray):
    _check_same(pred, target)
    err = pred - target
    return float(np.abs(err).mean()), np.sign(err) / err.size


def huber(pred: np.ndarray, target: np.ndarray, delta: float = 1.0):
    _check_same(pred, target)
    err = pred - target
    a = np.abs(err)
    quad = a <= delta
    val = np.where(quad, 0.5 * err * err, delta * (a - 0.5 * delta))
    return float(val.mean()), np.clip(err, -delta, delta) / err.size


def loss_fn(name: str, delta: float = 1.0):
    """Resolve a loss by name to a (pred, target) -> (value, grad) callable."""
    if name == "cross_entropy":
        return cross_entropy
    if name == "mse":
        return mse
    if name == "mae":
        return mae
    if name == "huber":
        return lambda pred, target: huber(pred, target, delta)
    raise ConfigError(f"unknown loss {name!r}, expected one of {LOSSES}")
