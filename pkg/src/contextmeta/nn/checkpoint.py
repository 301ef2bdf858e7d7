"""Parameter checkpoints on top of :mod:`contextmeta.blob`.

A parameter checkpoint stores one array named ``params`` holding the flat
float32 vector, and the layout descriptor under ``meta["layout"]``.
"""

from __future__ import annotations

import numpy as np

from contextmeta import blob
from contextmeta.errors import DataError
from contextmeta.nn.params import Layout, ParameterVector


def params_to_arrays(params: ParameterVector, prefix="params"):
    return {prefix: params.values.astype(np.float32)}


def save_params(path, params: ParameterVector, meta=None) -> str:
    header = dict(meta or {})
    header["layout"] = params.layout.to_json()
    return blob.save(path, params_to_arrays(params), header)


def load_params(path):
    arrays, meta = blob.load(path)
    if "params" not in arrays or "layout" not in meta:
        raise DataError("blob is not a parameter checkpoint", str(path))
    layout = Layout.from_json(meta["layout"])
    return ParameterVector(arrays["params"].copy(), layout), meta


def params_digest(params: ParameterVector) -> str:
    return blob.digest(params_to_arrays(params), {"layout": params.layout.to_json()})
