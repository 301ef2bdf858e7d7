"""Command-line entry point: ``contextmeta <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 runtime failure (including any failed run). Generated datasets are cached
under ``$CONTEXTMETA_CACHE`` (default ``~/.cache/contextmeta``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from contextmeta.config import parse_config
from contextmeta.datasets import SyntheticSpec, generate, save_dataset
from contextmeta.episodes import make_class_split, make_context_split, save_manifest
from contextmeta.errors import ConfigError, ContextMetaError, DataError
from contextmeta.experiments import (
    CacheSource,
    context_count_deltas,
    emit_metrics,
    get_dataset,
    run_cell,
    run_cells,
    sweep_context_count,
    sweep_lambda,
)

log = logging.getLogger("contextmeta")

CACHE_ENV = "CONTEXTMETA_CACHE"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "contextmeta")


def spec_key(spec: SyntheticSpec) -> str:
    text = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def cached_source(spec):
    """Swap a synthetic spec for its cache file, generating it on first use."""
    if not isinstance(spec, SyntheticSpec):
        return spec
    path = cache_dir() / f"{spec.kind}-{spec_key(spec)}.blob"
    if not path.exists():
        save_dataset(generate(spec), path, spec)
    return CacheSource(str(path))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or inline JSON object")
    common.add_argument("--seed", type=int, help="base seed; run seeds become seed, seed+1, ...")
    common.add_argument("--out", help="output path (directory for runs, file for data and splits)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="contextmeta", description="Context-agnostic meta-learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="meta-train, evaluate and checkpoint")
    p.add_argument("--resume", help="checkpoint to continue from (single seed)")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint on target tasks")
    p.add_argument("--checkpoint", required=True)
    sub.add_parser("sweep-lambda", parents=[common], help="context-agnostic runs over experiment.lambdas")
    sub.add_parser("sweep-contexts", parents=[common],
                   help="paired base / context-agnostic runs over experiment.context_counts")
    sub.add_parser("gen-data", parents=[common], help="generate and cache a synthetic dataset")
    p = sub.add_parser("make-splits", parents=[common], help="write a train/target split manifest")
    p.add_argument("--contexts", type=int, help="number of contexts to draw (one becomes the target)")
    return parser


def _load_config(args):
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        n = len(cfg["experiment"]["seeds"])
        overrides["experiment"] = {"seeds": [args.seed + i for i in range(n)]}
    if args.workers is not None:
        overrides.setdefault("experiment", {})["workers"] = args.workers
    if args.out is not None and args.command in ("train", "evaluate", "sweep-lambda", "sweep-contexts"):
        overrides["output"] = {"dir": args.out}
    return cfg.with_overrides(**overrides) if overrides else cfg


def _plan(cfg):
    plan = cfg.plan()
    plan.dataset = cached_source(plan.dataset)
    get_dataset(plan.dataset)  # surface data errors before any run starts
    out = Path(cfg["output"]["dir"])
    if cfg["output"]["save_checkpoints"]:
        plan.checkpoint_dir = str(out / "checkpoints")
    return plan, out


def _finish(records, out: Path, name="metrics.csv"):
    csv_path, _ = emit_metrics(records, out / name)
    failed = [r for r in records if r.status != "ok"]
    for r in records:
        print(f"{r.cell_id}\t{r.metric_name}={r.metric_mean:.4f}\tcheckpoint={r.checkpoint_hash[:12]}")
    print(f"wrote {csv_path}")
    for r in failed:
        print(f"run {r.cell_id} failed: {r.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_train(args, cfg):
    from contextmeta.meta import load_state

    plan, out = _plan(cfg)
    cfg.write_echo(out)
    cells = plan.cells()
    if args.resume:
        if len(cells) != 1:
            raise ConfigError("--resume needs exactly one seed", "experiment.seeds")
        state = load_state(args.resume)
        if state.seed != cells[0].seed:
            raise ConfigError(f"checkpoint seed {state.seed} differs from run seed {cells[0].seed}", "seed")
        records = [run_cell(cells[0], state=state)]
    else:
        records = run_cells(cells, plan.workers)
    return _finish(records, out)


def cmd_evaluate(args, cfg):
    from contextmeta.meta import load_state

    plan, out = _plan(cfg)
    plan.checkpoint_dir = None
    cfg.write_echo(out)
    state = load_state(args.checkpoint)
    cell = plan.cell(seed=state.seed, n_outer=state.outer_iter)
    record = run_cell(cell, state=state)
    return _finish([record], out, "evaluation.csv")


def cmd_sweep_lambda(args, cfg):
    plan, out = _plan(cfg)
    cfg.write_echo(out)
    records = sweep_lambda(plan, cfg["experiment"]["lambdas"])
    return _finish(records, out, "sweep_lambda.csv")


def cmd_sweep_contexts(args, cfg):
    plan, out = _plan(cfg)
    cfg.write_echo(out)
    records = sweep_context_count(plan, cfg["experiment"]["context_counts"])
    code = _finish(records, out, "sweep_contexts.csv")
    deltas = context_count_deltas(records)
    (out / "sweep_contexts_deltas.json").write_text(
        json.dumps({str(k): v for k, v in deltas.items()}, indent=2, sort_keys=True) + "\n")
    for count, delta in deltas.items():
        print(f"contexts_used={count}\tmean(ca - base)={delta:+.4f}")
    return code


def cmd_gen_data(args, cfg):
    spec = cfg.dataset_source()
    if not isinstance(spec, SyntheticSpec):
        raise ConfigError("gen-data needs a synthetic dataset kind", "dataset.kind")
    if args.seed is not None:
        spec = SyntheticSpec(**{**spec.to_dict(), "x_range": spec.x_range, "seed": args.seed})
    path = Path(args.out) if args.out else cache_dir() / f"{spec.kind}-{spec_key(spec)}.blob"
    digest = save_dataset(generate(spec), path, spec)
    print(f"wrote {path} sha256={digest}")
    return EXIT_OK


def cmd_make_splits(args, cfg):
    source = cfg.dataset_source()
    dataset = get_dataset(cached_source(source))
    seed = cfg["experiment"]["seeds"][0]
    n_used = args.contexts if args.contexts is not None else cfg["split"]["n_contexts_used"]
    split = make_context_split(dataset, n_used, rng=seed, seed=seed)
    if cfg["split"]["policy"] == "class":
        if not hasattr(dataset, "samples"):
            raise ConfigError("class splits need a classification dataset", "split.policy")
        used = split.train_contexts + split.target_contexts
        fraction = cfg["split"]["train_fraction"] or len(split.train_contexts) / len(used)
        split = make_class_split(dataset.samples.where_contexts(used), fraction, rng=seed, seed=seed)
    path = Path(args.out) if args.out else Path(cfg["output"]["dir"]) / "split.json"
    save_manifest(split, path)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-contexts": cmd_sweep_contexts,
    "gen-data": cmd_gen_data,
    "make-splits": cmd_make_splits,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContextMetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
