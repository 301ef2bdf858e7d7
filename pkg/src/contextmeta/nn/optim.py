"""SGD and Adam over :class:`ParameterVector` objects."""

from __future__ import annotations

import numpy as np

from contextmeta.errors import InputError, LayoutError
from contextmeta.nn.params import ParameterVector


class Optimizer:
    kind = "optimizer"

    def __init__(self, lr: float):
        if lr < 0:
            raise InputError("learning rate must be non-negative")
        self.lr = float(lr)
        self.t = 0
        self._layout = None

    def _check(self, params, grad):
        if not isinstance(params, ParameterVector) or not isinstance(grad, ParameterVector):
            raise LayoutError("optimizer expects ParameterVector params and grad")
        params.check_layout(grad)
        if self._layout is not None and params.layout != self._layout:
            raise LayoutError("optimizer state was built for a different layout")
        self._layout = params.layout

    def step(self, params: ParameterVector, grad: ParameterVector) -> ParameterVector:
        raise NotImplementedError

    def state_arrays(self):
        return {}

    def load_state(self, t, arrays, layout):
        self.t = int(t)
        self._layout = layout


class SGD(Optimizer):
    kind = "sgd"

    def step(self, params, grad):
        self._check(params, grad)
        self.t += 1
        lr = params.dtype.type(self.lr)
        return ParameterVector(params.values - lr * grad.values, params.layout)


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = None
        self.v = None

    def step(self, params, grad):
        self._check(params, grad)
        if self.m is None:
            self.m = np.zeros_like(params.values)
            self.v = np.zeros_like(params.values)
        self.t += 1
        dt = params.dtype.type
        g = grad.values
        self.m = dt(self.beta1) * self.m + dt(1 - self.beta1) * g
        self.v = dt(self.beta2) * self.v + dt(1 - self.beta2) * (g * g)
        m_hat = self.m / dt(1 - self.beta1 ** self.t)
        v_hat = self.v / dt(1 - self.beta2 ** self.t)
        update = dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
        return ParameterVector(params.values - update, params.layout)

    def state_arrays(self):
        if self.m is None:
            return {}
        return {"m": self.m, "v": self.v}

    def load_state(self, t, arrays, layout):
        super().load_state(t, arrays, layout)
        self.m = arrays.get("m")
        self.v = arrays.get("v")


def make_optimizer(kind: str, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise InputError(f"unknown optimizer kind {kind!r}")


def optimizer_step(opt: Optimizer, params: ParameterVector, grad: ParameterVector) -> ParameterVector:
    return opt.step(params, grad)
