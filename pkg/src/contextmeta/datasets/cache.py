"""Binary dataset cache (see :mod:`contextmeta.blob` for the byte layout)."""

from __future__ import annotations

import numpy as np

from contextmeta import blob
from contextmeta.datasets.glyphs import GlyphDataset
from contextmeta.datasets.sinusoid import SinusoidFamily
from contextmeta.errors import DataError
from contextmeta.samples import SampleSet


def save_dataset(dataset, path, spec=None) -> str:
    meta = {"spec": spec.to_dict() if hasattr(spec, "to_dict") else spec}
    if isinstance(dataset, GlyphDataset):
        meta.update(kind="glyphs", context_names=dataset.context_names, class_names=dataset.class_names)
        s = dataset.samples
        arrays = {"X": s.X, "y": s.y, "contexts": s.contexts}
    elif isinstance(dataset, SinusoidFamily):
        meta.update(kind="sinusoid", x_range=list(dataset.x_range), noise=dataset.noise)
        arrays = {"offsets": dataset.offsets, "codes": dataset.codes}
    else:
        raise DataError(f"cannot cache object of type {type(dataset).__name__}")
    return blob.save(path, arrays, meta)


def load_dataset(path):
    arrays, meta = blob.load(path)
    kind = meta.get("kind")
    if kind == "glyphs":
        samples = SampleSet(arrays["X"], arrays["y"].astype(np.int64), arrays["contexts"].astype(np.int64))
        return GlyphDataset(samples, list(meta["context_names"]), list(meta["class_names"]))
    if kind == "sinusoid":
        return SinusoidFamily(arrays["offsets"].astype(np.float64), arrays["codes"].astype(np.float64),
                              tuple(meta["x_range"]), float(meta["noise"]))
    raise DataError("blob is not a dataset cache", str(path))
