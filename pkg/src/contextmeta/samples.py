"""Labelled sample containers shared by datasets, episodes and the meta-learner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from contextmeta.errors import InputError


class Sample(NamedTuple):
    features: np.ndarray
    task_label: object
    context_label: int


@dataclass
class SampleSet:
    """Parallel arrays: features ``X``, task labels ``y`` and context labels.

    ``y`` holds integer class ids for classification or real targets for
    regression. ``contexts`` is always integer.
    """

    X: np.ndarray
    y: np.ndarray
    contexts: np.ndarray
    _by_class: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y)
        self.contexts = np.asarray(self.contexts, dtype=np.int64)
        n = self.X.shape[0]
        if self.y.shape[0] != n or self.contexts.shape != (n,):
            raise InputError("features, task labels and context labels must have the same length")

    def __len__(self):
        return int(self.X.shape[0])

    def __iter__(self):
        for i in range(len(self)):
            yield Sample(self.X[i], self.y[i], int(self.contexts[i]))

    def take(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.X[idx], self.y[idx], self.contexts[idx])

    def class_ids(self):
        return np.unique(self.y)

    def context_ids(self):
        return np.unique(self.contexts)

    def where_contexts(self, ids) -> "SampleSet":
        return self.take(np.flatnonzero(np.isin(self.contexts, list(ids))))

    def where_classes(self, ids) -> "SampleSet":
        return self.take(np.flatnonzero(np.isin(self.y, list(ids))))

    def indices_by_class(self):
        if self._by_class is None:
            order = np.argsort(self.y, kind="stable")
            classes, starts = np.unique(self.y[order], return_index=True)
            bounds = list(starts[1:]) + [len(order)]
            self._by_class = {c.item(): order[s:e] for c, s, e in zip(classes, starts, bounds)}
        return self._by_class

    def class_context(self):
        """Map class id -> context id (the first context that class is seen with)."""
        out = {}
        for c, idx in self.indices_by_class().items():
            out[c] = int(self.contexts[idx[0]])
        return out

    @staticmethod
    def concat(parts) -> "SampleSet":
        parts = list(parts)
        return SampleSet(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.contexts for p in parts]),
        )
