"""Hyperparameters of the context-agnostic meta-learning loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from contextmeta.errors import InputError

METHODS = ("reptile", "fomaml", "ca-reptile", "ca-fomaml")


@dataclass
class MetaConfig:
    """Scalars of the meta-objective.

    ``lam`` weights the adversarial copy in the outer update; ``epsilon`` is
    the context label flip probability. ``method`` combines the inner-loop
    style (reptile or first-order MAML) with an optional ``ca-`` prefix that
    switches the adversarial context loop on.
    """

    k: int = 5
    l: int = 3
    lam: float = 1.0
    alpha: float = 0.1
    epsilon: float = 0.2
    inner_lr_task: float = 0.05
    inner_lr_adv: float = 0.05
    head_lr: float = 1e-3
    head_optimizer: str = "adam"
    method: str = "ca-reptile"
    inner_batch: Optional[int] = None
    adv_batch: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k < 1:
            raise InputError("k must be >= 1")
        if self.context_agnostic and self.l < 1:
            raise InputError("l must be >= 1 for context-agnostic methods")
        if self.lam < 0:
            raise InputError("lambda must be >= 0")
        if self.alpha <= 0:
            raise InputError("alpha must be > 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError("epsilon must lie in [0, 1]")
        if self.inner_lr_task < 0 or self.inner_lr_adv < 0 or self.head_lr < 0:
            raise InputError("learning rates must be >= 0")
        if self.head_optimizer not in ("adam", "sgd"):
            raise InputError("head_optimizer must be 'adam' or 'sgd'")
        for name in ("inner_batch", "adv_batch"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InputError(f"{name} must be >= 1")

    @property
    def base(self) -> str:
        return self.method[3:] if self.method.startswith("ca-") else self.method

    @property
    def context_agnostic(self) -> bool:
        return self.method.startswith("ca-")

    def replace(self, **changes) -> "MetaConfig":
        d = asdict(self)
        d.update(changes)
        return MetaConfig(**d)

    def to_dict(self):
        return asdict(self)
