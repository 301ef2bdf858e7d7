"""The meta-learning loop: task specialisation, adversarial context removal, outer update.

One outer iteration, on primary weights ``phi``:

1. sample a training task;
2. copy ``phi`` into ``phi_hat`` and ``phi_bar``;
3. run ``k`` optimisation steps of the task loss on ``phi_hat``;
4. (context-agnostic methods) run ``l`` joint steps in which the context head
   descends the context loss and ``phi_bar`` ascends it through gradient
   reversal, with noisy context labels;
5. ``phi <- phi + alpha * (phi_hat - phi) + alpha * lam * (phi_bar - phi)``.

Inner optimizers are rebuilt every iteration; the head and its optimizer
persist for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from contextmeta.errors import InputError
from contextmeta.meta.config import MetaConfig
from contextmeta.meta.grl import grl_backward
from contextmeta.nn.layers import Dense
from contextmeta.nn.losses import CROSS_ENTROPY, MSE_LOSS, Loss
from contextmeta.nn.network import Network
from contextmeta.nn.optim import SGD, Adam, Optimizer, make_optimizer
from contextmeta.nn.params import ParameterVector

# Independent substreams of the master seed. Fixed indices keep a stream's
# draws unaffected by whether any other stream is used.
STREAMS = ("init", "tasks", "batches", "adversarial", "head_init", "eval")


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    return {
        name: np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(i,))))
        for i, name in enumerate(STREAMS)
    }


def loss_for_targets(y) -> Loss:
    return CROSS_ENTROPY if np.issubdtype(np.asarray(y).dtype, np.integer) else MSE_LOSS


def task_metric(net: Network, params: ParameterVector, samples, loss: Loss) -> float:
    """Accuracy for classification losses, mean squared error otherwise."""
    out = net.predict(samples.X, params)
    if loss.kind == "cross-entropy":
        return float(np.mean(out.argmax(axis=1) == samples.y))
    return loss(out, samples.y)


class AdversarialHead:
    """Single dense layer predicting context from the primary network's features."""

    def __init__(self, feature_dim: int, n_contexts: int, optimizer: Optional[Optimizer] = None,
                 seed=None, dtype=np.float32):
        if n_contexts < 2:
            raise InputError("an adversarial head needs at least 2 context classes")
        self.net = Network([Dense(feature_dim, n_contexts)], (feature_dim,), seed=seed, dtype=dtype)
        self.params = self.net.params
        self.optimizer = optimizer if optimizer is not None else Adam(1e-3)
        self.n_contexts = int(n_contexts)
        self.last_loss = float("nan")
        self.last_accuracy = float("nan")


def flip_context_labels(labels, epsilon: float, rng, n_classes: Optional[int] = None):
    """Replace each label, with probability ``epsilon``, by a uniformly drawn *different* class.

    ``n_classes`` defaults to ``max(labels) + 1``. The same number of random
    draws is consumed whatever ``epsilon`` is.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 2:
        raise InputError("label noise needs at least 2 context classes")
    if not 0.0 <= epsilon <= 1.0:
        raise InputError("epsilon must lie in [0, 1]")
    flip = rng.random(labels.shape) < epsilon
    shift = rng.integers(1, n_classes, size=labels.shape)
    return np.where(flip, (labels + shift) % n_classes, labels)


def _batch(samples, size, rng):
    if size is None or size >= len(samples):
        return samples.X, samples.y
    if rng is None:
        raise InputError("minibatch sampling needs an rng")
    idx = rng.choice(len(samples), size=size, replace=False)
    return samples.X[idx], samples.y[idx]


def inner_specialize(phi: ParameterVector, task, cfg: MetaConfig, net: Network, loss: Optional[Loss] = None,
                     rng=None, optimizer: Optional[Optimizer] = None) -> ParameterVector:
    """``k`` optimizer steps of the task loss starting from a copy of ``phi``."""
    if len(task.support) == 0:
        raise InputError("task support set is empty")
    loss = loss or loss_for_targets(task.support.y)
    opt = optimizer if optimizer is not None else SGD(cfg.inner_lr_task)
    phi_hat = phi.copy()
    for _ in range(cfg.k):
        X, y = _batch(task.support, cfg.inner_batch, rng)
        _, grad = net.loss_and_grad(X, y, loss, phi_hat)
        phi_hat = opt.step(phi_hat, grad)
    return phi_hat


def task_contribution(phi: ParameterVector, phi_hat: ParameterVector, task, cfg: MetaConfig, net: Network,
                      loss: Optional[Loss] = None) -> ParameterVector:
    """The task-side vector fed to :func:`outer_update` in place of ``phi_hat``.

    Reptile uses the specialised weights directly. First-order MAML uses
    ``phi - g`` where ``g`` is the query-set gradient at ``phi_hat``, so the
    outer step becomes ``-alpha * g``.
    """
    if cfg.base == "reptile":
        return phi_hat
    if len(task.query) == 0:
        raise InputError("first-order MAML needs a non-empty query set")
    loss = loss or loss_for_targets(task.query.y)
    _, g = net.loss_and_grad(task.query.X, task.query.y, loss, phi_hat)
    return phi - g


def adversarial_gradients(net: Network, phi_bar: ParameterVector, head: AdversarialHead, X, contexts,
                          reverse: bool = True):
    """Context loss and gradients for one batch: ``(loss, accuracy, grad_head, grad_primary)``.

    With ``reverse`` the primary gradient passes through gradient reversal,
    so stepping along ``-grad_primary`` *ascends* the context loss.
    """
    _, feats, cache = net.forward_cache(X, phi_bar)
    logits, _, hcache = head.net.forward_cache(np.asarray(feats).reshape(len(feats), -1), head.params)
    value, d_logits = CROSS_ENTROPY.value_and_grad(logits, contexts)
    g_head, d_feats = head.net.backward(hcache, d_logits, return_input_grad=True)
    d_feats = d_feats.reshape(feats.shape)
    if reverse:
        d_feats = grl_backward(d_feats)
    g_primary = net.backward(cache, d_out=None, d_features=d_feats)
    accuracy = float(np.mean(logits.argmax(axis=1) == contexts))
    return value, accuracy, g_head, g_primary


def inner_adversarial(phi: ParameterVector, head: AdversarialHead, train_pool, cfg: MetaConfig, net: Network,
                      rng, batch_size: Optional[int] = None,
                      optimizer: Optional[Optimizer] = None) -> ParameterVector:
    """``l`` joint adversarial steps on a copy of ``phi``; updates ``head`` in place.

    Each step draws a batch uniformly from the whole training pool, flips
    context labels with probability ``cfg.epsilon``, computes both gradients
    from the same forward pass, then applies them.
    """
    n_ctx = train_pool.n_contexts
    if n_ctx < 2:
        raise InputError("adversarial loop needs a training pool with at least 2 contexts")
    size = batch_size or cfg.adv_batch or getattr(train_pool, "batch_size", 32)
    opt = optimizer if optimizer is not None else SGD(cfg.inner_lr_adv)
    phi_bar = phi.copy()
    for _ in range(cfg.l):
        X, ctx = train_pool.sample_context_batch(rng, size)
        noisy = flip_context_labels(ctx, cfg.epsilon, rng, n_classes=n_ctx)
        value, acc, g_head, g_primary = adversarial_gradients(net, phi_bar, head, X, noisy)
        head.params = head.optimizer.step(head.params, g_head)
        phi_bar = opt.step(phi_bar, g_primary)
        head.last_loss, head.last_accuracy = value, acc
    return phi_bar


def outer_update(phi: ParameterVector, phi_hat: ParameterVector, phi_bar: ParameterVector,
                 cfg: Optional[MetaConfig] = None, alpha: Optional[float] = None,
                 lam: Optional[float] = None) -> ParameterVector:
    """``phi + alpha*(phi_hat - phi) + alpha*lam*(phi_bar - phi)``."""
    phi.check_layout(phi_hat)
    phi.check_layout(phi_bar)
    alpha = cfg.alpha if alpha is None else alpha
    lam = cfg.lam if lam is None else lam
    dt = phi.dtype.type
    p = phi.values
    values = p + dt(alpha) * (phi_hat.values - p) + dt(alpha * lam) * (phi_bar.values - p)
    return ParameterVector(values, phi.layout)


@dataclass
class IterationInfo:
    outer_iter: int
    task_opt_start: int
    task_opt_end: int
    adv_opt_start: Optional[int]
    adv_opt_end: Optional[int]
    head_steps: Optional[int]
    train_metric: float
    adv_loss: float = float("nan")
    adv_accuracy: float = float("nan")


@dataclass
class MetaState:
    """Everything a run needs to continue: weights, head, counters, random streams."""

    net: Network
    primary: ParameterVector
    adv_head: Optional[AdversarialHead]
    seed: int
    streams: Dict[str, np.random.Generator]
    outer_iter: int = 0
    history: list = field(default_factory=list)


def init_state(net: Network, tasks, cfg: MetaConfig, seed: int) -> MetaState:
    """Fresh primary weights and (for context-agnostic methods) a fresh head from ``seed``."""
    streams = make_streams(seed)
    primary = net.init_params(streams["init"])
    head = None
    if cfg.context_agnostic:
        head = AdversarialHead(
            net.feature_dim, tasks.n_contexts,
            optimizer=make_optimizer(cfg.head_optimizer, cfg.head_lr),
            seed=streams["head_init"], dtype=net.dtype,
        )
    return MetaState(net=net.with_params(primary), primary=primary, adv_head=head, seed=int(seed), streams=streams)


def meta_train(state: MetaState, tasks, cfg: MetaConfig, n_outer: int,
               callback: Optional[Callable[[IterationInfo], None]] = None) -> MetaState:
    """Run ``n_outer`` outer iterations, advancing ``state`` in place and returning it."""
    if n_outer < 0:
        raise InputError("n_outer must be >= 0")
    if cfg.context_agnostic:
        if state.adv_head is None:
            raise InputError("context-agnostic method needs an adversarial head in the state")
        if tasks.n_contexts < 2:
            raise InputError("context-agnostic training needs at least 2 training contexts")
    net = state.net
    loss = tasks.loss
    streams = state.streams
    for _ in range(n_outer):
        phi = state.primary
        task = tasks.sample_task(streams["tasks"])
        task_opt = SGD(cfg.inner_lr_task)
        t0 = task_opt.t
        phi_hat = inner_specialize(phi, task, cfg, net, loss, rng=streams["batches"], optimizer=task_opt)
        train_metric = task_metric(net, phi_hat, task.query, loss) if len(task.query) else float("nan")
        target = task_contribution(phi, phi_hat, task, cfg, net, loss)

        adv_start = adv_end = head_steps = None
        if cfg.context_agnostic:
            adv_opt = SGD(cfg.inner_lr_adv)
            adv_start = adv_opt.t
            phi_bar = inner_adversarial(
                phi, state.adv_head, tasks, cfg, net, streams["adversarial"],
                batch_size=cfg.adv_batch or len(task.support), optimizer=adv_opt,
            )
            adv_end = adv_opt.t
            head_steps = state.adv_head.optimizer.t
        else:
            phi_bar = phi

        state.primary = outer_update(phi, target, phi_bar, cfg)
        state.outer_iter += 1
        if callback is not None:
            head = state.adv_head
            callback(IterationInfo(
                outer_iter=state.outer_iter,
                task_opt_start=t0,
                task_opt_end=task_opt.t,
                adv_opt_start=adv_start,
                adv_opt_end=adv_end,
                head_steps=head_steps,
                train_metric=train_metric,
                adv_loss=head.last_loss if head is not None and cfg.context_agnostic else float("nan"),
                adv_accuracy=head.last_accuracy if head is not None and cfg.context_agnostic else float("nan"),
            ))
    state.net = net.with_params(state.primary)
    return state


def fine_tune(phi: ParameterVector, support, steps: int, lr: float, net: Network,
              loss: Optional[Loss] = None) -> Network:
    """Full-batch SGD on the support set from ``phi``; returns a network holding the result."""
    if len(support) == 0:
        raise InputError("fine-tuning support set is empty")
    if steps < 0:
        raise InputError("steps must be >= 0")
    loss = loss or loss_for_targets(support.y)
    opt = SGD(lr)
    params = phi.copy()
    for _ in range(steps):
        _, grad = net.loss_and_grad(support.X, support.y, loss, params)
        params = opt.step(params, grad)
    return net.with_params(params)


def evaluate_task(phi: ParameterVector, task, steps: int, lr: float, net: Network,
                  loss: Optional[Loss] = None) -> float:
    """Fine-tune on the support set, score on the query set."""
    loss = loss or loss_for_targets(task.support.y)
    tuned = fine_tune(phi, task.support, steps, lr, net, loss)
    return task_metric(tuned, tuned.params, task.query, loss)
