"""Layers with hand-derived backward passes.

Every layer works on a leading batch axis. Shapes passed to ``param_shapes``
and ``output_shape`` exclude that axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from contextmeta.errors import InputError


def fan_uniform(rng, shape, fan_in, fan_out, dtype):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def param_shapes(self, in_shape):
        return []

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, rng, in_shape, dtype):
        return {}

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, dy):
        """Return (gradient w.r.t. input, dict of parameter gradients)."""
        raise NotImplementedError

    def spec(self):
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        self.in_features = int(in_features)
        self.out_features = int(out_features)

    def param_shapes(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise InputError(f"dense layer expects input shape ({self.in_features},), got {tuple(in_shape)}")
        return [("W", (self.in_features, self.out_features)), ("b", (self.out_features,))]

    def output_shape(self, in_shape):
        return (self.out_features,)

    def init_params(self, rng, in_shape, dtype):
        return {
            "W": fan_uniform(rng, (self.in_features, self.out_features), self.in_features, self.out_features, dtype),
            "b": np.zeros(self.out_features, dtype=dtype),
        }

    def forward(self, params, x):
        return x @ params["W"] + params["b"], x

    def backward(self, params, cache, dy):
        x = cache
        return dy @ params["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}

    def spec(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}


class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy):
        return dy * cache, {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy):
        return dy.reshape(cache), {}


class Conv2d(Layer):
    """Valid (unpadded) 2-d convolution on ``(batch, channels, height, width)``.

    A 3-d batch ``(batch, height, width)`` is read as a single channel.
    """

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)

    def _chw(self, in_shape):
        in_shape = tuple(in_shape)
        if len(in_shape) == 2:
            in_shape = (1,) + in_shape
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise InputError(f"conv2d expects {self.in_channels} input channels, got shape {in_shape}")
        return in_shape

    def param_shapes(self, in_shape):
        self._chw(in_shape)
        k = self.kernel
        return [("W", (self.out_channels, self.in_channels, k, k)), ("b", (self.out_channels,))]

    def output_shape(self, in_shape):
        c, h, w = self._chw(in_shape)
        ho = (h - self.kernel) // self.stride + 1
        wo = (w - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise InputError(f"kernel {self.kernel} larger than input {h}x{w}")
        return (self.out_channels, ho, wo)

    def init_params(self, rng, in_shape, dtype):
        k = self.kernel
        return {
            "W": fan_uniform(
                rng, (self.out_channels, self.in_channels, k, k),
                self.in_channels * k * k, self.out_channels * k * k, dtype,
            ),
            "b": np.zeros(self.out_channels, dtype=dtype),
        }

    def forward(self, params, x):
        squeeze = x.ndim == 3
        if squeeze:
            x = x[:, None]
        s, k = self.stride, self.kernel
        cols = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.einsum("nchwij,ocij->nohw", cols, params["W"], optimize=True)
        out += params["b"][None, :, None, None]
        return out, (x, cols, squeeze)

    def backward(self, params, cache, dy):
        x, cols, squeeze = cache
        s, k = self.stride, self.kernel
        ho, wo = dy.shape[2], dy.shape[3]
        dW = np.einsum("nchwij,nohw->ocij", cols, dy, optimize=True)
        db = dy.sum(axis=(0, 2, 3))
        dcols = np.einsum("nohw,ocij->nchwij", dy, params["W"], optimize=True)
        dx = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j]
        if squeeze:
            dx = dx[:, 0]
        return dx, {"W": dW, "b": db}

    def spec(self):
        return {
            "kind": self.kind, "in": self.in_channels, "out": self.out_channels,
            "kernel": self.kernel, "stride": self.stride,
        }


LAYER_KINDS = {"dense": Dense, "relu": ReLU, "flatten": Flatten, "conv2d": Conv2d}


def layer_from_spec(spec):
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"])
    if kind == "conv2d":
        return Conv2d(spec["in"], spec["out"], spec["kernel"], spec.get("stride", 1))
    if kind in LAYER_KINDS:
        return LAYER_KINDS[kind]()
    raise InputError(f"unknown layer kind {kind!r}")
