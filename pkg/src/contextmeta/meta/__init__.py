"""Context-agnostic meta-learning loop."""

from contextmeta.meta.checkpoint import load_state, save_state, state_digest
from contextmeta.meta.config import METHODS, MetaConfig
from contextmeta.meta.engine import (
    AdversarialHead,
    IterationInfo,
    MetaState,
    adversarial_gradients,
    evaluate_task,
    fine_tune,
    flip_context_labels,
    init_state,
    inner_adversarial,
    inner_specialize,
    make_streams,
    meta_train,
    outer_update,
    task_contribution,
    task_metric,
)
from contextmeta.meta.grl import grl_backward, grl_forward

__all__ = [
    "AdversarialHead", "IterationInfo", "METHODS", "MetaConfig", "MetaState", "adversarial_gradients",
    "evaluate_task", "fine_tune", "flip_context_labels", "grl_backward", "grl_forward", "init_state",
    "inner_adversarial", "inner_specialize", "load_state", "make_streams", "meta_train", "outer_update",
    "save_state", "state_digest", "task_contribution", "task_metric",
]
