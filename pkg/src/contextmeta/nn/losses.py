"""Batch-mean losses returning their gradient w.r.t. the network output."""

from __future__ import annotations

import numpy as np

from contextmeta.errors import InputError


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


class Loss:
    kind = "loss"

    def value_and_grad(self, output, targets):
        raise NotImplementedError

    def __call__(self, output, targets):
        return self.value_and_grad(output, targets)[0]

    def __repr__(self):
        return f"{type(self).__name__}()"


class CrossEntropy(Loss):
    """Softmax cross-entropy over integer class targets."""

    kind = "cross-entropy"

    def value_and_grad(self, logits, targets):
        logits = np.asarray(logits)
        targets = np.asarray(targets)
        if logits.ndim != 2:
            raise InputError("cross-entropy expects 2-d logits")
        if targets.shape != (logits.shape[0],) or not np.issubdtype(targets.dtype, np.integer):
            raise InputError("cross-entropy expects one integer class index per row")
        n, c = logits.shape
        if n and (targets.min() < 0 or targets.max() >= c):
            bad = targets[(targets < 0) | (targets >= c)][0]
            raise InputError(f"label index {int(bad)} out of range for {c} classes")
        lsm = log_softmax(logits)
        rows = np.arange(n)
        value = -lsm[rows, targets].mean()
        grad = np.exp(lsm)
        grad[rows, targets] -= 1
        return float(value), grad / n


class MSE(Loss):
    """Mean of squared errors over every output element."""

    kind = "mse"

    def value_and_grad(self, pred, targets):
        pred = np.asarray(pred)
        targets = np.asarray(targets, dtype=pred.dtype)
        if targets.shape != pred.shape:
            if targets.size == pred.size:
                targets = targets.reshape(pred.shape)
            else:
                raise InputError(f"MSE target shape {targets.shape} does not match prediction {pred.shape}")
        diff = pred - targets
        return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


CROSS_ENTROPY = CrossEntropy()
MSE_LOSS = MSE()


def get_loss(kind: str) -> Loss:
    if kind in ("cross-entropy", "ce"):
        return CROSS_ENTROPY
    if kind == "mse":
        return MSE_LOSS
    raise InputError(f"unknown loss kind {kind!r}")
