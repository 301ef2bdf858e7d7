"""Central finite differences, used as the independent gradient oracle."""

from __future__ import annotations

import numpy as np

from contextmeta.nn.params import ParameterVector


def finite_difference_grad(f, params: ParameterVector, h: float = 1e-5) -> ParameterVector:
    """Numerical gradient of scalar ``f(params)`` by central differences.

    Works on a float64 copy regardless of the dtype of ``params``.
    """
    base = params.values.astype(np.float64)
    grad = np.empty_like(base)
    for i in range(base.size):
        old = base[i]
        base[i] = old + h
        fp = f(ParameterVector(base.copy(), params.layout))
        base[i] = old - h
        fm = f(ParameterVector(base.copy(), params.layout))
        base[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return ParameterVector(grad, params.layout)


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))
