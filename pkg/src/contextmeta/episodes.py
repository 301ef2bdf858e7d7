"""N-way K-shot episode sampling and train/target partitioning."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from contextmeta.errors import DataError, InputError
from contextmeta.nn.losses import CROSS_ENTROPY
from contextmeta.samples import SampleSet


def as_samples(dataset) -> SampleSet:
    if isinstance(dataset, SampleSet):
        return dataset
    samples = getattr(dataset, "samples", None)
    if isinstance(samples, SampleSet):
        return samples
    raise InputError(f"expected a SampleSet or dataset with .samples, got {type(dataset).__name__}")


@dataclass
class EpisodicTask:
    """One few-shot task.

    Support and query labels are episode-local (``0..way-1``) for
    classification; ``class_map[local] = global class id``. Regression tasks
    carry real targets and an empty ``class_map``.
    """

    way: int
    shot: int
    support: SampleSet
    query: SampleSet
    class_map: Dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ContextSplit:
    train_contexts: Tuple[int, ...]
    target_contexts: Tuple[int, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        overlap = set(self.train_contexts) & set(self.target_contexts)
        if overlap:
            raise InputError(f"train and target contexts overlap: {sorted(overlap)}")
        if not self.train_contexts or not self.target_contexts:
            raise InputError("both sides of a context split need at least one context")

    policy = "context"

    def to_manifest(self):
        return {
            "policy": "context",
            "seed": self.seed,
            "train_contexts": [int(c) for c in self.train_contexts],
            "target_contexts": [int(c) for c in self.target_contexts],
        }

    def apply(self, dataset):
        s = as_samples(dataset)
        return s.where_contexts(self.train_contexts), s.where_contexts(self.target_contexts)


@dataclass(frozen=True)
class ClassSplit:
    train_classes: Tuple[int, ...]
    target_classes: Tuple[int, ...]
    seed: Optional[int] = None

    policy = "class"

    def __post_init__(self):
        if set(self.train_classes) & set(self.target_classes):
            raise InputError("train and target classes overlap")

    def to_manifest(self):
        return {
            "policy": "class",
            "seed": self.seed,
            "train_classes": [int(c) for c in self.train_classes],
            "target_classes": [int(c) for c in self.target_classes],
        }

    def apply(self, dataset):
        s = as_samples(dataset)
        return s.where_classes(self.train_classes), s.where_classes(self.target_classes)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def make_context_split(dataset, n_contexts_used: Optional[int] = None, rng=None, seed=None) -> ContextSplit:
    """Pick ``n_contexts_used`` contexts; the first drawn becomes the single target context.

    ``rng`` may be a Generator or a seed; passing an int also records it in the split.
    """
    if seed is None and isinstance(rng, (int, np.integer)):
        seed = int(rng)
    rng = _rng(rng)
    if hasattr(dataset, "context_ids"):
        available = np.asarray(dataset.context_ids())
    else:
        available = as_samples(dataset).context_ids()
    if len(available) < 2:
        raise InputError("a context split needs a dataset with at least 2 contexts")
    n = len(available) if n_contexts_used is None else int(n_contexts_used)
    if n < 2:
        raise InputError("n_contexts_used must be at least 2")
    if n > len(available):
        raise InputError(f"n_contexts_used={n} exceeds the {len(available)} available contexts")
    chosen = rng.choice(available, size=n, replace=False)
    return ContextSplit(
        train_contexts=tuple(sorted(int(c) for c in chosen[1:])),
        target_contexts=(int(chosen[0]),),
        seed=seed,
    )


def split_contexts(train_contexts, target_contexts, seed=None) -> ContextSplit:
    """Explicit context-disjoint split, e.g. distinct superclasses per side."""
    return ContextSplit(tuple(sorted(int(c) for c in train_contexts)),
                        tuple(sorted(int(c) for c in target_contexts)), seed)


def make_class_split(dataset, fraction: float, rng=None, seed=None) -> ClassSplit:
    """Partition task classes, ignoring context. ``fraction`` is the train share."""
    if seed is None and isinstance(rng, (int, np.integer)):
        seed = int(rng)
    rng = _rng(rng)
    classes = as_samples(dataset).class_ids()
    if len(classes) < 2:
        raise InputError("a class split needs at least 2 task classes")
    if not 0.0 < fraction < 1.0:
        raise InputError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    n_train = min(max(int(round(fraction * len(classes))), 1), len(classes) - 1)
    perm = rng.permutation(classes)
    return ClassSplit(
        tuple(sorted(int(c) for c in perm[:n_train])),
        tuple(sorted(int(c) for c in perm[n_train:])),
        seed,
    )


def save_manifest(split, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(split.to_manifest(), indent=2, sort_keys=True) + "\n")


def load_manifest(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split manifest ({exc})", str(path)) from exc
    if d.get("policy") == "context":
        return ContextSplit(tuple(d["train_contexts"]), tuple(d["target_contexts"]), d.get("seed"))
    if d.get("policy") == "class":
        return ClassSplit(tuple(d["train_classes"]), tuple(d["target_classes"]), d.get("seed"))
    raise DataError("unknown split policy in manifest", str(path))


def sample_episode(pool, way: int, shot: int, query_per_class: int, rng) -> EpisodicTask:
    """Draw ``way`` classes uniformly without replacement, then disjoint support/query per class."""
    pool = as_samples(pool)
    if way < 1 or shot < 1 or query_per_class < 0:
        raise InputError("way and shot must be >= 1 and query_per_class >= 0")
    by_class = pool.indices_by_class()
    need = shot + query_per_class
    eligible = [c for c, idx in by_class.items() if len(idx) >= need]
    if len(eligible) < len(by_class):
        short = next(c for c, idx in by_class.items() if len(idx) < need)
        raise InputError(
            f"class {short} has {len(by_class[short])} samples; need shot+query = {need}"
        )
    if len(eligible) < way:
        raise InputError(f"pool has {len(eligible)} classes, episode needs way={way}")
    classes = np.asarray(sorted(by_class))
    chosen = rng.choice(classes, size=way, replace=False)
    sup, qry = [], []
    for c in chosen:
        idx = rng.choice(by_class[c.item()], size=need, replace=False)
        sup.append(idx[:shot])
        qry.append(idx[shot:])
    sup_idx = np.concatenate(sup)
    qry_idx = np.concatenate(qry) if query_per_class else np.zeros(0, dtype=np.int64)
    support = pool.take(sup_idx)
    query = pool.take(qry_idx)
    local_sup = np.repeat(np.arange(way), shot)
    local_qry = np.repeat(np.arange(way), query_per_class)
    return EpisodicTask(
        way=way,
        shot=shot,
        support=SampleSet(support.X, local_sup, support.contexts),
        query=SampleSet(query.X, local_qry, query.contexts),
        class_map={i: int(c) for i, c in enumerate(chosen)},
    )


class EpisodeSource:
    """Classification task distribution over a training pool.

    Supplies random episodes for the specialisation loop and uniform batches
    over the whole pool, with dense context ids, for the adversarial loop.
    """

    loss = CROSS_ENTROPY

    def __init__(self, pool, way: int, shot: int, query_per_class: int = 1):
        self.pool = as_samples(pool)
        if len(self.pool) == 0:
            raise InputError("empty task pool")
        self.way = int(way)
        self.shot = int(shot)
        self.query_per_class = int(query_per_class)
        self.context_values, dense = np.unique(self.pool.contexts, return_inverse=True)
        self.dense_contexts = dense.astype(np.int64)

    @property
    def n_contexts(self) -> int:
        return int(len(self.context_values))

    @property
    def n_outputs(self) -> int:
        return self.way

    @property
    def input_shape(self):
        return self.pool.X.shape[1:]

    @property
    def batch_size(self) -> int:
        return self.way * self.shot

    def sample_task(self, rng) -> EpisodicTask:
        return sample_episode(self.pool, self.way, self.shot, self.query_per_class, rng)

    def sample_context_batch(self, rng, size: int):
        idx = rng.integers(0, len(self.pool), size=size)
        return self.pool.X[idx], self.dense_contexts[idx]
