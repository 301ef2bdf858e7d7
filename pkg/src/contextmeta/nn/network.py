"""Sequential networks over a flat parameter vector."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from contextmeta.errors import InputError, LayoutError
from contextmeta.nn.layers import Dense, Flatten, Layer, ReLU, layer_from_spec
from contextmeta.nn.losses import Loss
from contextmeta.nn.params import Layout, ParameterVector


class Network:
    """A stack of layers whose weights live in one :class:`ParameterVector`.

    The network object describes the architecture; the weights it trains with
    can be swapped per call through the ``params`` argument, which is how the
    meta-learner evaluates several weight copies against one architecture.

    The *feature tap* is the activation entering the final layer. Its width is
    ``feature_dim``.
    """

    def __init__(self, layers: Sequence[Layer], input_shape, seed=None, dtype=np.float32, params=None):
        if not layers:
            raise InputError("network needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)

        named = []
        self._slots = []
        shape = self.input_shape
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            pshapes = layer.param_shapes(shape)
            self._slots.append([(n, f"{i}.{layer.kind}.{n}") for n, _ in pshapes])
            named.extend((f"{i}.{layer.kind}.{n}", s) for n, s in pshapes)
            shape = layer.output_shape(shape)
            shapes.append(shape)
        self.layout = Layout.from_shapes(named)
        self._spans = [
            [(local, self.layout[full].offset, self.layout[full].offset + self.layout[full].size,
              self.layout[full].shape) for local, full in slots]
            for slots in self._slots
        ]
        self._shapes = shapes
        self.output_shape = shape
        self.feature_shape = shapes[-2]

        if params is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            params = self.init_params(rng)
        self.params = self._coerce(params)

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self.feature_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.output_shape))

    def init_params(self, rng) -> ParameterVector:
        vec = ParameterVector.zeros(self.layout, self.dtype)
        for i, layer in enumerate(self.layers):
            init = layer.init_params(rng, self._shapes[i], self.dtype)
            for local, full in self._slots[i]:
                vec.view(full)[...] = init[local]
        return vec

    def _coerce(self, params) -> ParameterVector:
        if not isinstance(params, ParameterVector):
            raise InputError("params must be a ParameterVector")
        if params.layout != self.layout:
            raise LayoutError("parameter layout does not match this architecture")
        return params

    def _layer_params(self, params: ParameterVector, i: int):
        v = params.values
        return {local: v[a:b].reshape(shape) for local, a, b, shape in self._spans[i]}

    def with_params(self, params: ParameterVector) -> "Network":
        """Same architecture, different weights (no re-initialisation)."""
        return Network(self.layers, self.input_shape, dtype=self.dtype, params=params)

    def _check_batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise InputError(f"batch feature shape {x.shape[1:]} does not match network input {self.input_shape}")
        return x

    def forward_cache(self, x, params: Optional[ParameterVector] = None):
        params = self.params if params is None else self._coerce(params)
        h = self._check_batch(x)
        caches = []
        features = None
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if i == last:
                features = h
            h, c = layer.forward(self._layer_params(params, i), h)
            caches.append(c)
        return h, features, (params, caches)

    def forward(self, x, params: Optional[ParameterVector] = None):
        """Return ``(output, penultimate features)`` from a single pass."""
        out, feats, _ = self.forward_cache(x, params)
        return out, feats

    def predict(self, x, params: Optional[ParameterVector] = None):
        return self.forward(x, params)[0]

    def backward(self, cache, d_out=None, d_features=None, return_input_grad=False):
        """Backpropagate upstream gradients to a parameter gradient.

        ``d_out`` enters at the network output and ``d_features`` is added at
        the feature tap; either may be ``None``.
        """
        params, caches = cache
        grad = ParameterVector.zeros(self.layout, params.dtype)
        last = len(self.layers) - 1
        dh = d_out
        for i in range(last, -1, -1):
            layer = self.layers[i]
            lp = self._layer_params(params, i)
            if dh is None:
                dh_in = None
            else:
                dh_in, pg = layer.backward(lp, caches[i], np.asarray(dh, dtype=params.dtype))
                for local, a, b, _ in self._spans[i]:
                    grad.values[a:b] = pg[local].reshape(-1)
            if i == last and d_features is not None:
                d_features = np.asarray(d_features, dtype=params.dtype)
                dh_in = d_features if dh_in is None else dh_in + d_features
            dh = dh_in
        if return_input_grad:
            return grad, dh
        return grad

    def loss_and_grad(self, x, targets, loss: Loss, params: Optional[ParameterVector] = None):
        out, _, cache = self.forward_cache(x, params)
        value, d_out = loss.value_and_grad(out, targets)
        return value, self.backward(cache, d_out)

    def spec(self):
        return {
            "input_shape": list(self.input_shape),
            "dtype": self.dtype.name,
            "layers": [layer.spec() for layer in self.layers],
        }

    @classmethod
    def from_spec(cls, spec, params=None, seed=None) -> "Network":
        layers = [layer_from_spec(s) for s in spec["layers"]]
        return cls(layers, spec["input_shape"], seed=seed, dtype=spec.get("dtype", "float32"), params=params)


def forward(net: Network, batch, params=None):
    return net.forward(batch, params)


def backward(net: Network, batch, targets, loss: Loss, params=None):
    """Batch-mean loss and its gradient w.r.t. every parameter of ``net``."""
    return net.loss_and_grad(batch, targets, loss, params)


def mlp(input_shape, hidden: Sequence[int], n_out: int, seed=None, dtype=np.float32) -> Network:
    """flatten -> (dense -> relu)* -> dense head."""
    input_shape = tuple(input_shape) if np.ndim(input_shape) else (int(input_shape),)
    layers = [Flatten()]
    width = int(np.prod(input_shape))
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers.append(Dense(width, n_out))
    return Network(layers, input_shape, seed=seed, dtype=dtype)


def default_backbone(input_shape, n_out: int, seed=None, dtype=np.float32) -> Network:
    return mlp(input_shape, (256, 64), n_out, seed=seed, dtype=dtype)
