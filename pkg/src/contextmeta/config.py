"""Strict JSON run configuration.

A config has five optional sections::

    {"dataset": {...}, "split": {...}, "method": {...},
     "experiment": {...}, "output": {...}}

Every key is typed; unknown keys are errors. Missing keys take the
defaults below, and :meth:`RunConfig.to_dict` echoes the fully resolved
config, which parses back to an identical :class:`RunConfig`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from contextmeta.datasets import SyntheticSpec
from contextmeta.errors import ConfigError, InputError
from contextmeta.meta import METHODS, MetaConfig

_NUM = (int, float)

# key -> (expected types, default, description). ``None`` in types allows null.
SCHEMA = {
    "dataset": {
        "kind": (str, "proc-glyphs", "proc-glyphs | context-sinusoid | glyph-tree | cache"),
        "path": ((str, None), None, "directory (glyph-tree) or cache file (cache)"),
        "side": (int, 16, "image side in pixels"),
        "n_contexts": (int, 4, "procedural contexts"),
        "n_classes_per_context": (int, 50, "procedural glyph classes per context"),
        "samples_per_class": (int, 20, "procedural samples per class"),
        "noise": (_NUM, 0.1, "pixel noise std (glyphs) or target noise std (sinusoid)"),
        "distortion": (_NUM, 0.5, "per-sample handwriting distortion scale"),
        "x_range": (list, [-5.0, 5.0], "sinusoid input range"),
        "nuisance_dim": (int, 4, "sinusoid context-code width"),
        "offset_scale": (_NUM, 2.0, "sinusoid per-context offsets span [-s, s]"),
        "seed": (int, 0, "generator seed"),
    },
    "split": {
        "policy": (str, "context", "context | class"),
        "n_contexts_used": ((int, None), None, "contexts drawn for the split; null uses all"),
        "train_fraction": ((float, None), None, "class policy train share; null matches the context split"),
    },
    "method": {
        "method": (str, "ca-reptile", " | ".join(METHODS)),
        "k": (int, 5, "inner specialisation steps"),
        "l": (int, 3, "inner adversarial steps"),
        "lambda": (_NUM, 1.0, "adversarial weight in the outer update, >= 0"),
        "alpha": (_NUM, 0.1, "outer step size"),
        "epsilon": (_NUM, 0.2, "context label flip probability"),
        "inner_lr_task": (_NUM, 0.05, "task inner-loop SGD learning rate"),
        "inner_lr_adv": (_NUM, 0.05, "adversarial inner-loop SGD learning rate"),
        "head_lr": (_NUM, 1e-3, "context head learning rate"),
        "head_optimizer": (str, "adam", "adam | sgd"),
        "inner_batch": ((int, None), None, "task minibatch; null is the full support set"),
        "adv_batch": ((int, None), None, "adversarial batch; null is way * shot"),
    },
    "experiment": {
        "way": (int, 5, "classes per episode"),
        "shot": (int, 1, "support samples per class"),
        "query_per_class": (int, 15, "evaluation query samples per class"),
        "train_query_per_class": (int, 1, "query samples in training episodes"),
        "n_outer": (int, 1000, "outer iterations"),
        "seeds": (list, [0], "run seeds"),
        "hidden": (list, [256, 64], "hidden layer widths"),
        "finetune_steps": (int, 50, "target fine-tuning steps"),
        "finetune_lr": ((_NUM, None), None, "fine-tuning lr; null uses inner_lr_task"),
        "n_episodes": (int, 1000, "target evaluation episodes"),
        "n_train_episodes": (int, 0, "train-side evaluation episodes"),
        "curve_every": (int, 0, "record curves every n outer iterations; 0 disables"),
        "curve_episodes": (int, 50, "episodes per curve point"),
        "lambdas": (list, [10.0, 1.0, 0.1], "sweep-lambda values"),
        "context_counts": (list, [3, 4], "sweep-contexts values of n_contexts_used"),
        "workers": (int, 1, "parallel worker processes"),
    },
    "output": {
        "dir": (str, "runs", "output directory"),
        "record_timing": (bool, False, "write wall-clock times into metrics (breaks byte-determinism)"),
        "save_checkpoints": (bool, True, "write one checkpoint per run"),
    },
}


def _type_name(types):
    if not isinstance(types, tuple):
        types = (types,)
    names = []
    for t in types:
        if t is None:
            names.append("null")
        elif isinstance(t, tuple):
            names.extend(_type_name(t).split(" or "))
        else:
            names.append({int: "integer", float: "number", str: "string", list: "list", bool: "boolean"}[t])
    return " or ".join(dict.fromkeys(names))


def _flatten(types):
    if not isinstance(types, tuple):
        return (types,)
    out = ()
    for t in types:
        out += _flatten(t)
    return out


def _check_type(key, value, types):
    allowed = _flatten(types)
    if value is None:
        if None in allowed:
            return
    elif isinstance(value, bool):
        if bool in allowed:
            return
    elif isinstance(value, int) and (int in allowed or float in allowed):
        return
    elif any(t is not None and t not in (int, bool) and isinstance(value, t) for t in allowed):
        return
    raise ConfigError(f"{key}: expected {_type_name(types)}, got {type(value).__name__}", key)


def defaults():
    return {sec: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


@dataclass
class RunConfig:
    """A validated, fully resolved configuration (plain nested dicts)."""

    sections: dict

    def __getitem__(self, section):
        return self.sections[section]

    def to_dict(self):
        return copy.deepcopy(self.sections)

    def to_json(self) -> str:
        return json.dumps(self.sections, indent=2, sort_keys=True) + "\n"

    def write_echo(self, directory) -> Path:
        path = Path(directory) / "config.resolved.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    def with_overrides(self, **sections) -> "RunConfig":
        d = self.to_dict()
        for sec, values in sections.items():
            d[sec].update(values)
        return resolve(d)

    # ---------------------------------------------------------- bindings

    def meta_config(self) -> MetaConfig:
        m = dict(self["method"])
        m["lam"] = float(m.pop("lambda"))
        for key in ("alpha", "epsilon", "inner_lr_task", "inner_lr_adv", "head_lr"):
            m[key] = float(m[key])
        try:
            return MetaConfig(**m)
        except InputError as exc:
            raise ConfigError(f"method: {exc}", "method") from exc

    def dataset_source(self):
        from contextmeta.experiments import CacheSource, TreeSource

        d = self["dataset"]
        kind = d["kind"]
        if kind in ("glyph-tree", "cache"):
            if not d["path"]:
                raise ConfigError(f"dataset.path is required for kind {kind!r}", "dataset.path")
            return TreeSource(d["path"], d["side"]) if kind == "glyph-tree" else CacheSource(d["path"])
        fields = {k: d[k] for k in ("n_contexts", "n_classes_per_context", "samples_per_class", "side",
                                    "nuisance_dim", "seed")}
        fields.update({k: float(d[k]) for k in ("noise", "distortion", "offset_scale")})
        return SyntheticSpec(kind=kind, x_range=tuple(float(v) for v in d["x_range"]), **fields)

    def plan(self):
        from contextmeta.experiments import ExperimentPlan

        e, s, o = self["experiment"], self["split"], self["output"]
        meta = self.meta_config()
        source = self.dataset_source()
        return ExperimentPlan(
            dataset=source,
            meta=meta,
            methods=(meta.method,),
            split_policies=(s["policy"],),
            n_contexts_used=s["n_contexts_used"],
            train_fraction=s["train_fraction"],
            way=e["way"], shot=e["shot"],
            query_per_class=e["query_per_class"],
            train_query_per_class=e["train_query_per_class"],
            n_outer=e["n_outer"],
            seeds=tuple(e["seeds"]),
            hidden=tuple(e["hidden"]),
            finetune_steps=e["finetune_steps"],
            finetune_lr=None if e["finetune_lr"] is None else float(e["finetune_lr"]),
            n_episodes=e["n_episodes"],
            n_train_episodes=e["n_train_episodes"],
            record_timing=o["record_timing"],
            curve_every=e["curve_every"],
            curve_episodes=e["curve_episodes"],
            workers=e["workers"],
        )


_CHOICES = {
    "dataset.kind": ("proc-glyphs", "context-sinusoid", "glyph-tree", "cache"),
    "split.policy": ("context", "class"),
    "method.method": METHODS,
    "method.head_optimizer": ("adam", "sgd"),
}

_MINIMUM = {
    "dataset.side": 1, "dataset.n_contexts": 2, "dataset.n_classes_per_context": 1,
    "dataset.samples_per_class": 1, "dataset.nuisance_dim": 1, "method.k": 1, "method.l": 0,
    "method.lambda": 0, "method.epsilon": 0, "method.inner_lr_task": 0, "method.inner_lr_adv": 0,
    "method.head_lr": 0, "method.inner_batch": 1, "method.adv_batch": 1,
    "split.n_contexts_used": 2, "experiment.way": 1, "experiment.shot": 1,
    "experiment.query_per_class": 1, "experiment.train_query_per_class": 0, "experiment.n_outer": 0,
    "experiment.finetune_steps": 0, "experiment.finetune_lr": 0, "experiment.n_episodes": 1,
    "experiment.n_train_episodes": 0, "experiment.curve_every": 0, "experiment.curve_episodes": 1,
    "experiment.workers": 1, "dataset.noise": 0, "dataset.distortion": 0,
}


def _check_value(key, value):
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key}: expected one of {list(_CHOICES[key])}, got {value!r}", key)
    low = _MINIMUM.get(key)
    if low is not None and value is not None and value < low:
        raise ConfigError(f"{key}: must be >= {low}, got {value!r}", key)


def _check_list(key, value):
    if key == "dataset.x_range":
        if len(value) != 2 or not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of two numbers", key)
        if value[0] >= value[1]:
            raise ConfigError(f"{key}: lower bound must be below upper bound", key)
    elif key in ("experiment.seeds", "experiment.hidden", "experiment.context_counts"):
        if not value or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a non-empty list of integers", key)
        if key != "experiment.seeds" and min(value) < (2 if key.endswith("counts") else 1):
            raise ConfigError(f"{key}: values out of range", key)
    elif key == "experiment.lambdas":
        if not value or not all(isinstance(v, _NUM) and not isinstance(v, bool) and v >= 0 for v in value):
            raise ConfigError(f"{key}: expected a non-empty list of numbers >= 0", key)


def resolve(raw) -> RunConfig:
    """Validate a parsed JSON object and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    out = defaults()
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}; expected one of {list(SCHEMA)}", section)
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected an object, got {type(values).__name__}", section)
        for key, value in values.items():
            full = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {full!r}", full)
            _check_type(full, value, SCHEMA[section][key][0])
            if isinstance(value, list):
                _check_list(full, value)
            else:
                _check_value(full, value)
            out[section][key] = copy.deepcopy(value)
    cfg = RunConfig(out)
    cfg.meta_config()  # cross-field checks
    return cfg


def parse_config(source=None) -> RunConfig:
    """Parse JSON text, a path to a JSON file, a dict, or ``None`` (all defaults)."""
    if source is None:
        return resolve({})
    if isinstance(source, dict):
        return resolve(source)
    text = str(source)
    path = Path(text)
    if not text.lstrip().startswith(("{", "[")):
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {text!r} ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return resolve(raw)
