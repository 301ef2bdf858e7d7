"""Sinusoid regression tasks with a per-context offset and a visible context cue.

A task is ``y = A * sin(x + b) + offset[ctx]``. The network input is
``[x, code[ctx] + jitter]``: the context code is a fixed random vector per
context, so context is decodable from inputs (as a person is from video)
while also shifting the target, which is what makes it a distractor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from contextmeta.datasets.glyphs import SyntheticSpec
from contextmeta.episodes import EpisodicTask
from contextmeta.errors import InputError
from contextmeta.nn.losses import MSE_LOSS
from contextmeta.samples import SampleSet

AMPLITUDE = (0.1, 5.0)
PHASE = (0.0, np.pi)
CODE_JITTER = 0.1


@dataclass
class SinusoidFamily:
    offsets: np.ndarray
    codes: np.ndarray
    x_range: tuple
    noise: float

    @property
    def n_contexts(self) -> int:
        return int(len(self.offsets))

    @property
    def input_dim(self) -> int:
        return 1 + self.codes.shape[1]

    def context_ids(self):
        return np.arange(self.n_contexts)

    def inputs(self, x, ctx, rng):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        ctx = np.asarray(ctx, dtype=np.int64).reshape(-1)
        code = self.codes[ctx] + rng.normal(0, CODE_JITTER, size=(len(x), self.codes.shape[1]))
        return np.column_stack([x, code]).astype(np.float32)

    def targets(self, x, amplitude, phase, ctx, rng=None):
        y = amplitude * np.sin(np.asarray(x, dtype=np.float64) + phase) + self.offsets[ctx]
        if self.noise > 0 and rng is not None:
            y = y + rng.normal(0, self.noise, size=np.shape(y))
        return y

    def sample_points(self, amplitude, phase, ctx, n, rng) -> SampleSet:
        x = rng.uniform(self.x_range[0], self.x_range[1], size=n)
        X = self.inputs(x, np.full(n, ctx), rng)
        y = self.targets(x, amplitude, phase, ctx, rng).astype(np.float32).reshape(n, 1)
        return SampleSet(X, y, np.full(n, ctx, dtype=np.int64))

    def sample_task(self, contexts: Sequence[int], shot: int, query: int, rng) -> EpisodicTask:
        ctx = int(rng.choice(np.asarray(contexts)))
        amp = rng.uniform(*AMPLITUDE)
        phase = rng.uniform(*PHASE)
        pts = self.sample_points(amp, phase, ctx, shot + query, rng)
        return EpisodicTask(way=1, shot=shot, support=pts.take(np.arange(shot)),
                            query=pts.take(np.arange(shot, shot + query)))

    def task_source(self, contexts, shot: int = 10, query: int = 10) -> "SinusoidTaskSource":
        return SinusoidTaskSource(self, contexts, shot, query)


def gen_context_sinusoid(spec: SyntheticSpec) -> SinusoidFamily:
    if spec.n_contexts < 2:
        raise InputError("context sinusoid needs n_contexts >= 2")
    if spec.nuisance_dim < 1:
        raise InputError("nuisance_dim must be >= 1")
    rng = np.random.default_rng(spec.seed)
    offsets = rng.permutation(np.linspace(-spec.offset_scale, spec.offset_scale, spec.n_contexts))
    codes = rng.normal(0, 1, size=(spec.n_contexts, spec.nuisance_dim))
    # rounded through float32 so a cached family reloads exactly
    offsets = offsets.astype(np.float32).astype(np.float64)
    codes = codes.astype(np.float32).astype(np.float64)
    return SinusoidFamily(offsets, codes, tuple(spec.x_range), float(spec.noise))


class SinusoidTaskSource:
    """Regression task distribution restricted to a set of contexts."""

    loss = MSE_LOSS

    def __init__(self, family: SinusoidFamily, contexts, shot: int = 10, query: int = 10):
        self.family = family
        self.contexts = np.asarray(sorted(int(c) for c in contexts))
        if len(self.contexts) == 0:
            raise InputError("task source needs at least one context")
        self.shot = int(shot)
        self.query = int(query)

    @property
    def n_contexts(self) -> int:
        return int(len(self.contexts))

    @property
    def n_outputs(self) -> int:
        return 1

    @property
    def input_shape(self):
        return (self.family.input_dim,)

    @property
    def batch_size(self) -> int:
        return self.shot

    def sample_task(self, rng) -> EpisodicTask:
        return self.family.sample_task(self.contexts, self.shot, self.query, rng)

    def sample_context_batch(self, rng, size: int):
        dense = rng.integers(0, len(self.contexts), size=size)
        x = rng.uniform(self.family.x_range[0], self.family.x_range[1], size=size)
        return self.family.inputs(x, self.contexts[dense], rng), dense
