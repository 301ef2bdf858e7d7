"""Bit-exact save/resume of a :class:`MetaState`."""

from __future__ import annotations

import numpy as np

from contextmeta import blob
from contextmeta.errors import DataError
from contextmeta.meta.engine import AdversarialHead, MetaState
from contextmeta.nn.network import Network
from contextmeta.nn.optim import Adam, make_optimizer
from contextmeta.nn.params import Layout, ParameterVector


def _state_payload(state: MetaState):
    arrays = {"primary": state.primary.values}
    meta = {
        "kind": "meta-state",
        "seed": state.seed,
        "outer_iter": state.outer_iter,
        "net": state.net.spec(),
        "layout": state.primary.layout.to_json(),
        "streams": {name: g.bit_generator.state for name, g in state.streams.items()},
        "head": None,
    }
    head = state.adv_head
    if head is not None:
        arrays["head"] = head.params.values
        opt = head.optimizer
        arrays.update({f"head_opt_{k}": v for k, v in opt.state_arrays().items()})
        meta["head"] = {
            "n_contexts": head.n_contexts,
            "feature_dim": head.net.input_shape[0],
            "layout": head.params.layout.to_json(),
            "optimizer": {
                "kind": opt.kind, "lr": opt.lr, "t": opt.t,
                **({"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps} if isinstance(opt, Adam) else {}),
            },
        }
    return arrays, meta


def state_digest(state: MetaState) -> str:
    return blob.digest(*_state_payload(state))


def save_state(path, state: MetaState) -> str:
    """Write the checkpoint, returning the sha256 of its bytes."""
    if state.primary.dtype != np.float32:
        raise DataError("checkpoints store float32 weights; state is " + str(state.primary.dtype), str(path))
    return blob.save(path, *_state_payload(state))


def load_state(path) -> MetaState:
    arrays, meta = blob.load(path)
    if meta.get("kind") != "meta-state":
        raise DataError("blob is not a meta-state checkpoint", str(path))
    net = Network.from_spec(meta["net"], params=None, seed=0)
    primary = ParameterVector(arrays["primary"].copy(), Layout.from_json(meta["layout"]))
    net = net.with_params(primary)
    streams = {}
    for name, st in meta["streams"].items():
        bg = np.random.PCG64()
        bg.state = st
        streams[name] = np.random.Generator(bg)
    head = None
    h = meta["head"]
    if h is not None:
        o = h["optimizer"]
        if o["kind"] == "adam":
            opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"])
        else:
            opt = make_optimizer(o["kind"], o["lr"])
        head = AdversarialHead(h["feature_dim"], h["n_contexts"], optimizer=opt, seed=0, dtype=np.float32)
        layout = Layout.from_json(h["layout"])
        head.params = ParameterVector(arrays["head"].copy(), layout)
        opt_arrays = {k[len("head_opt_"):]: v.copy() for k, v in arrays.items() if k.startswith("head_opt_")}
        opt.load_state(o["t"], opt_arrays, layout)
    return MetaState(net=net, primary=primary, adv_head=head, seed=meta["seed"],
                     streams=streams, outer_iter=meta["outer_iter"])
