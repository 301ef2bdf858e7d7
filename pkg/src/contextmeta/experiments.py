"""Experiment harness: plan cells, paired runs, sweeps and metric files."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from contextmeta.datasets import GlyphDataset, SinusoidFamily, SyntheticSpec, generate, load_dataset, load_glyph_tree
from contextmeta.episodes import EpisodeSource, make_class_split, make_context_split, sample_episode
from contextmeta.errors import InputError
from contextmeta.meta import MetaConfig, evaluate_task, init_state, meta_train, save_state, state_digest
from contextmeta.nn import mlp, params_digest

log = logging.getLogger(__name__)

# Seed-sequence keys; fixed so that pairing holds across methods.
SPLIT_KEY = 101
EVAL_KEY = 202
TRAIN_EVAL_KEY = 303

CSV_COLUMNS = (
    "cell_id", "seed", "method", "lambda", "k", "l", "way", "shot", "split_policy",
    "metric_mean", "metric_std", "n_episodes", "wall_ms",
    "n_contexts_used", "metric_name", "train_metric_mean", "train_metric_std",
    "checkpoint_hash", "params_hash", "status", "error",
)


@dataclass(frozen=True)
class TreeSource:
    path: str
    side: int = 28


@dataclass(frozen=True)
class CacheSource:
    path: str


@lru_cache(maxsize=8)
def get_dataset(source):
    if isinstance(source, SyntheticSpec):
        return generate(source)
    if isinstance(source, TreeSource):
        return load_glyph_tree(source.path, source.side)
    if isinstance(source, CacheSource):
        return load_dataset(source.path)
    raise InputError(f"unknown dataset source {source!r}")


@dataclass(frozen=True)
class PlanCell:
    """One fully specified, deterministic run."""

    dataset: object
    cfg: MetaConfig
    seed: int
    split_policy: str = "context"
    n_contexts_used: Optional[int] = None
    train_fraction: Optional[float] = None
    way: int = 5
    shot: int = 1
    query_per_class: int = 15
    train_query_per_class: int = 1
    n_outer: int = 1000
    hidden: Tuple[int, ...] = (256, 64)
    finetune_steps: int = 50
    finetune_lr: Optional[float] = None
    n_episodes: int = 1000
    n_train_episodes: int = 0
    record_timing: bool = True
    curve_every: int = 0
    curve_episodes: int = 50
    checkpoint_dir: Optional[str] = None

    @property
    def cell_id(self) -> str:
        n_ctx = "all" if self.n_contexts_used is None else self.n_contexts_used
        return (f"{self.cfg.method}_lam{self.cfg.lam:g}_{self.split_policy}{n_ctx}"
                f"_{self.way}w{self.shot}s_seed{self.seed}")

    def __hash__(self):
        return hash(self.cell_id)


@dataclass
class RunRecord:
    cell_id: str
    seed: int
    method: str
    lam: float
    k: int
    l: int
    way: int
    shot: int
    split_policy: str
    metric_mean: float
    metric_std: float
    n_episodes: int
    wall_ms: int
    n_contexts_used: Optional[int] = None
    metric_name: str = "accuracy"
    train_metric_mean: float = float("nan")
    train_metric_std: float = float("nan")
    checkpoint_hash: str = ""
    params_hash: str = ""
    status: str = "ok"
    error: str = ""
    curves: list = field(default_factory=list)

    def csv_row(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d.pop("curves")
        return [_fmt(d[c]) for c in CSV_COLUMNS]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- running


def _split(cell: PlanCell, dataset):
    rng = np.random.default_rng(np.random.SeedSequence([cell.seed, SPLIT_KEY]))
    csplit = make_context_split(dataset, cell.n_contexts_used, rng, seed=cell.seed)
    if cell.split_policy == "context":
        return csplit
    if cell.split_policy == "class":
        if not hasattr(dataset, "samples"):
            raise InputError("regression tasks support the context split policy only")
        used = csplit.train_contexts + csplit.target_contexts
        fraction = cell.train_fraction
        if fraction is None:
            fraction = len(csplit.train_contexts) / len(used)
        return make_class_split(dataset.samples.where_contexts(used), fraction, rng, seed=cell.seed)
    raise InputError(f"unknown split policy {cell.split_policy!r}")


def build_sources(cell: PlanCell, dataset=None):
    """Training task source plus a ``sample(rng)`` callable for target and train-side episodes."""
    dataset = get_dataset(cell.dataset) if dataset is None else dataset
    split = _split(cell, dataset)
    if isinstance(dataset, SinusoidFamily):
        train = dataset.task_source(split.train_contexts, cell.shot, cell.train_query_per_class)
        target = dataset.task_source(split.target_contexts, cell.shot, cell.query_per_class)
        train_eval = dataset.task_source(split.train_contexts, cell.shot, cell.query_per_class)
        return split, train, target.sample_task, train_eval.sample_task
    if not isinstance(dataset, GlyphDataset):
        raise InputError(f"unsupported dataset type {type(dataset).__name__}")
    train_pool, target_pool = split.apply(dataset)
    train = EpisodeSource(train_pool, cell.way, cell.shot, cell.train_query_per_class)

    def target_task(rng):
        return sample_episode(target_pool, cell.way, cell.shot, cell.query_per_class, rng)

    def train_task(rng):
        return sample_episode(train_pool, cell.way, cell.shot, cell.query_per_class, rng)

    return split, train, target_task, train_task


def evaluate_params(net, params, sample_task, n_episodes, steps, lr, loss, rng):
    scores = np.empty(n_episodes)
    for i in range(n_episodes):
        scores[i] = evaluate_task(params, sample_task(rng), steps, lr, net, loss)
    return scores


def _eval_rng(seed, key, tag=0):
    return np.random.default_rng(np.random.SeedSequence([seed, key, tag]))


def _new_record(cell: PlanCell) -> RunRecord:
    cfg = cell.cfg
    return RunRecord(
        cell_id=cell.cell_id, seed=cell.seed, method=cfg.method, lam=float(cfg.lam), k=cfg.k, l=cfg.l,
        way=cell.way, shot=cell.shot, split_policy=cell.split_policy, metric_mean=float("nan"),
        metric_std=float("nan"), n_episodes=cell.n_episodes, wall_ms=0, n_contexts_used=cell.n_contexts_used,
    )


def run_cell(cell: PlanCell, state=None, keep_state: bool = False) -> RunRecord:
    """Meta-train, then fine-tune and score on target episodes. Failures are recorded, not raised.

    ``state`` continues a previous run (e.g. a loaded checkpoint) up to
    ``cell.n_outer`` total iterations. With ``keep_state`` the final
    :class:`MetaState` is attached to the record as ``record.state``.
    """
    t0 = time.perf_counter()
    record = _new_record(cell)
    try:
        final = _run(cell, record, state)
        if keep_state:
            record.state = final
    except Exception as exc:  # a failed cell becomes a record
        log.warning("cell %s failed: %s", cell.cell_id, exc)
        log.debug("traceback", exc_info=True)
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
    if cell.record_timing:
        record.wall_ms = int(round((time.perf_counter() - t0) * 1000))
    return record


def _run(cell: PlanCell, record: RunRecord, state=None):
    cfg = cell.cfg
    _, source, target_task, train_task = build_sources(cell)
    loss = source.loss
    record.metric_name = "accuracy" if loss.kind == "cross-entropy" else "mse"
    lr = cfg.inner_lr_task if cell.finetune_lr is None else cell.finetune_lr
    if state is None:
        net = mlp(source.input_shape, cell.hidden, source.n_outputs)
        state = init_state(net, source, cfg, cell.seed)
    elif state.outer_iter > cell.n_outer:
        raise InputError(f"checkpoint is at iteration {state.outer_iter}, beyond n_outer={cell.n_outer}")

    def evaluate(sample_task, n, key, tag=0):
        return evaluate_params(state.net, state.primary, sample_task, n, cell.finetune_steps, lr, loss,
                               _eval_rng(cell.seed, key, tag))

    if cell.curve_every:
        while state.outer_iter < cell.n_outer:
            step = min(cell.curve_every, cell.n_outer - state.outer_iter)
            inner = []
            meta_train(state, source, cfg, step, callback=lambda info: inner.append(info.train_metric))
            done = state.outer_iter
            record.curves.append({
                "outer_iter": done,
                "inner_train_metric": float(np.nanmean(inner)),
                "train_metric": float(evaluate(train_task, cell.curve_episodes, TRAIN_EVAL_KEY, done).mean()),
                "target_metric": float(evaluate(target_task, cell.curve_episodes, EVAL_KEY, done).mean()),
            })
    else:
        meta_train(state, source, cfg, cell.n_outer - state.outer_iter)

    scores = evaluate(target_task, cell.n_episodes, EVAL_KEY)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("training diverged: non-finite target metric")
    record.metric_mean = float(scores.mean())
    record.metric_std = float(scores.std())
    if cell.n_train_episodes:
        tr = evaluate(train_task, cell.n_train_episodes, TRAIN_EVAL_KEY)
        record.train_metric_mean = float(tr.mean())
        record.train_metric_std = float(tr.std())
    record.params_hash = params_digest(state.primary)
    record.checkpoint_hash = state_digest(state)
    if cell.checkpoint_dir:
        path = Path(cell.checkpoint_dir) / f"{cell.cell_id}.ckpt"
        save_state(path, state)
    return state


def run_cells(cells: Sequence[PlanCell], workers: int = 1) -> List[RunRecord]:
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, cells))


# ---------------------------------------------------------------- plans


@dataclass
class ExperimentPlan:
    """A grid of cells: methods x split policies x seeds, sharing everything else."""

    dataset: object = field(default_factory=SyntheticSpec)
    meta: MetaConfig = field(default_factory=MetaConfig)
    methods: Tuple[str, ...] = ("reptile", "ca-reptile")
    split_policies: Tuple[str, ...] = ("context",)
    n_contexts_used: Optional[int] = None
    train_fraction: Optional[float] = None
    way: int = 5
    shot: int = 1
    query_per_class: int = 15
    train_query_per_class: int = 1
    n_outer: int = 1000
    seeds: Tuple[int, ...] = (0,)
    hidden: Tuple[int, ...] = (256, 64)
    finetune_steps: int = 50
    finetune_lr: Optional[float] = None
    n_episodes: int = 1000
    n_train_episodes: int = 0
    record_timing: bool = True
    curve_every: int = 0
    curve_episodes: int = 50
    checkpoint_dir: Optional[str] = None
    workers: int = 1

    def cell(self, method=None, seed=None, split_policy=None, **overrides) -> PlanCell:
        cell_fields = {f.name for f in fields(PlanCell)}
        base = {k: v for k, v in asdict(self).items() if k in cell_fields}
        base["dataset"] = self.dataset
        base["cfg"] = self.meta.replace(method=method or self.meta.method, **overrides.pop("cfg", {}))
        base["seed"] = self.seeds[0] if seed is None else seed
        base["split_policy"] = split_policy or self.split_policies[0]
        base["hidden"] = tuple(self.hidden)
        base.update(overrides)
        return PlanCell(**base)

    def cells(self) -> List[PlanCell]:
        return [self.cell(m, s, p) for m in self.methods for p in self.split_policies for s in self.seeds]


def run_plan(plan: ExperimentPlan) -> List[RunRecord]:
    return run_cells(plan.cells(), plan.workers)


def _ca_method(method: str) -> str:
    return method if method.startswith("ca-") else "ca-" + method


def sweep_lambda(plan: ExperimentPlan, lambdas: Sequence[float]) -> List[RunRecord]:
    """One context-agnostic cell per (lambda, seed); records carry train/target curves if enabled."""
    lambdas = list(lambdas)
    if not lambdas:
        raise InputError("lambda sweep needs at least one value")
    if not plan.meta.context_agnostic:
        raise InputError("lambda sweep requires a context-agnostic method")
    cells = [
        plan.cell(plan.meta.method, s, cfg={"lam": float(lam)})
        for lam in lambdas for s in plan.seeds
    ]
    return run_cells(cells, plan.workers)


def available_contexts(dataset_source) -> int:
    return len(get_dataset(dataset_source).context_ids())


def sweep_context_count(plan: ExperimentPlan, counts: Sequence[int]) -> List[RunRecord]:
    """Paired (base, context-agnostic) runs per context count and seed."""
    counts = [int(c) for c in counts]
    n_avail = available_contexts(plan.dataset)
    for c in counts:
        if c < 2:
            raise InputError(f"context count {c} < 2")
        if c > n_avail:
            raise InputError(f"context count {c} exceeds the {n_avail} available contexts")
    base = plan.meta.base
    cells = [
        plan.cell(m, s, n_contexts_used=c)
        for c in counts for s in plan.seeds for m in (base, _ca_method(base))
    ]
    return run_cells(cells, plan.workers)


def context_count_deltas(records: Sequence[RunRecord]):
    """Mean (context-agnostic - base) metric per context count, over paired seeds."""
    by = {}
    for r in records:
        arm = "ca" if r.method.startswith("ca-") else "base"
        by.setdefault(r.n_contexts_used, {}).setdefault(arm, {})[r.seed] = r.metric_mean
    out = {}
    for count, arms in sorted(by.items(), key=lambda kv: (kv[0] is None, kv[0])):
        seeds = sorted(set(arms.get("ca", {})) & set(arms.get("base", {})))
        out[count] = float(np.mean([arms["ca"][s] - arms["base"][s] for s in seeds])) if seeds else float("nan")
    return out


# ---------------------------------------------------------------- metrics files


def emit_metrics(records: Sequence[RunRecord], path) -> Tuple[Path, Path]:
    """Write ``<path>`` as CSV (one row per record) and ``<path>`` with ``.json`` suffix as a mirror."""
    records = list(records)
    if not records:
        raise InputError("no records to emit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())
    json_path = path.with_suffix(".json")
    rows = [_strict_json(asdict(r)) for r in records]
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path, json_path


def _strict_json(value):
    """NaN and infinities become null so the mirror is standard JSON."""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _strict_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_strict_json(v) for v in value]
    return value


_INT = {"seed", "k", "l", "way", "shot", "n_episodes", "wall_ms", "n_contexts_used"}
_FLOAT = {"lambda", "metric_mean", "metric_std", "train_metric_mean", "train_metric_std"}


def read_metrics_csv(path) -> List[RunRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = {}
            for k, v in row.items():
                if k in _INT:
                    d[k] = int(v) if v != "" else None
                elif k in _FLOAT:
                    d[k] = float(v)
                else:
                    d[k] = v
            d["lam"] = d.pop("lambda")
            out.append(RunRecord(**d))
    return out


def mean_metric(records, method=None, **match):
    sel = [r for r in records if (method is None or r.method == method)
           and all(getattr(r, k) == v for k, v in match.items())]
    return float(np.mean([r.metric_mean for r in sel])) if sel else float("nan")


__all__ = [
    "CSV_COLUMNS", "CacheSource", "ExperimentPlan", "PlanCell", "RunRecord", "TreeSource", "available_contexts",
    "build_sources", "context_count_deltas", "emit_metrics", "evaluate_params", "get_dataset", "mean_metric",
    "read_metrics_csv", "run_cell", "run_cells", "run_plan", "sweep_context_count", "sweep_lambda",
]
