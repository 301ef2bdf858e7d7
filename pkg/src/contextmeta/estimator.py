"""scikit-learn style front end.

:class:`ContextAgnosticMetaLearner` meta-trains an initialisation on
``(X, y, contexts)`` arrays. ``adapt`` then fine-tunes it on a few labelled
target samples, after which ``predict`` / ``score`` work like any classifier.
``transform`` returns penultimate features of the meta-learned weights.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from contextmeta.episodes import EpisodeSource
from contextmeta.errors import InputError
from contextmeta.meta import MetaConfig, fine_tune, init_state, meta_train
from contextmeta.nn import CROSS_ENTROPY, mlp
from contextmeta.nn.losses import softmax
from contextmeta.samples import SampleSet


def check_features(X, n_features_shape=None, name="X"):
    """2-d or image-shaped float32 array without NaN/inf; shape checked against training if given."""
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_2d=False, input_name=name)
    if X.ndim < 2:
        raise InputError(f"{name} must have a sample axis and at least one feature axis, got shape {X.shape}")
    if n_features_shape is not None and tuple(X.shape[1:]) != tuple(n_features_shape):
        raise InputError(f"{name} has sample shape {X.shape[1:]}, expected {tuple(n_features_shape)}")
    return X


def check_labels(labels, n, name):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise InputError(f"{name} must be 1-d with {n} entries, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if np.issubdtype(labels.dtype, np.floating) and np.all(labels == np.round(labels)):
            labels = labels.astype(np.int64)
        else:
            raise InputError(f"{name} must hold integer class ids")
    if labels.size and labels.min() < 0:
        raise InputError(f"{name} must be non-negative")
    return labels.astype(np.int64)


class ContextAgnosticMetaLearner(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Few-shot classifier whose initialisation is meta-learned, optionally context-agnostically.

    Parameters mirror :class:`contextmeta.meta.MetaConfig` (``lam`` is the
    adversarial weight) plus the episode shape, network widths, training
    length and fine-tuning budget.
    """

    def __init__(self, method="ca-reptile", k=5, l=3, lam=1.0, alpha=0.1, epsilon=0.2,
                 inner_lr_task=0.05, inner_lr_adv=0.05, head_lr=1e-3, way=5, shot=1,
                 n_outer=1000, hidden=(256, 64), finetune_steps=50, finetune_lr=None, random_state=0):
        self.method = method
        self.k = k
        self.l = l
        self.lam = lam
        self.alpha = alpha
        self.epsilon = epsilon
        self.inner_lr_task = inner_lr_task
        self.inner_lr_adv = inner_lr_adv
        self.head_lr = head_lr
        self.way = way
        self.shot = shot
        self.n_outer = n_outer
        self.hidden = hidden
        self.finetune_steps = finetune_steps
        self.finetune_lr = finetune_lr
        self.random_state = random_state

    def _meta_config(self) -> MetaConfig:
        return MetaConfig(k=self.k, l=self.l, lam=float(self.lam), alpha=float(self.alpha),
                          epsilon=float(self.epsilon), inner_lr_task=float(self.inner_lr_task),
                          inner_lr_adv=float(self.inner_lr_adv), head_lr=float(self.head_lr), method=self.method)

    def fit(self, X, y, contexts=None):
        """Meta-train on a labelled pool. ``contexts`` is required for ``ca-`` methods."""
        X = check_features(X)
        y = check_labels(y, len(X), "y")
        cfg = self._meta_config()
        if contexts is None:
            if cfg.context_agnostic:
                raise InputError(f"method {self.method!r} needs context labels")
            contexts = np.zeros(len(X), dtype=np.int64)
        contexts = check_labels(contexts, len(X), "contexts")
        seed = 0 if self.random_state is None else int(self.random_state)
        source = EpisodeSource(SampleSet(X, y, contexts), self.way, self.shot, query_per_class=1)
        net = mlp(X.shape[1:], tuple(self.hidden), self.way)
        state = init_state(net, source, cfg, seed)
        history = []
        meta_train(state, source, cfg, int(self.n_outer), callback=history.append)
        self.state_ = state
        self.net_ = state.net
        self.input_shape_ = tuple(X.shape[1:])
        self.n_contexts_ = source.n_contexts
        self.history_ = history
        self.classes_ = np.arange(self.way)
        self.tuned_ = None
        return self

    def adapt(self, X_support, y_support):
        """Fine-tune the meta-learned weights on a support set with labels in ``0..way-1``."""
        check_is_fitted(self, "state_")
        X = check_features(X_support, self.input_shape_, "X_support")
        y = check_labels(y_support, len(X), "y_support")
        if y.size and y.max() >= self.way:
            raise InputError(f"support labels must lie in 0..{self.way - 1}")
        lr = self.inner_lr_task if self.finetune_lr is None else self.finetune_lr
        support = SampleSet(X, y, np.zeros(len(X), dtype=np.int64))
        self.tuned_ = fine_tune(self.state_.primary, support, int(self.finetune_steps), float(lr), self.net_,
                                CROSS_ENTROPY)
        return self

    def _tuned(self):
        check_is_fitted(self, "state_")
        if self.tuned_ is None:
            raise NotFittedError("call adapt() with a support set before predicting")
        return self.tuned_

    def decision_function(self, X):
        net = self._tuned()
        return net.predict(check_features(X, self.input_shape_))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X):
        """Penultimate features of the meta-learned (not fine-tuned) weights."""
        check_is_fitted(self, "state_")
        _, feats = self.net_.forward(check_features(X, self.input_shape_), self.state_.primary)
        return np.asarray(feats).reshape(len(feats), -1)

    def fit_transform(self, X, y=None, contexts=None):
        return self.fit(X, y, contexts).transform(X)
