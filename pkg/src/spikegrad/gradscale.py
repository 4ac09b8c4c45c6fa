"""Relation-modulated gradient scaling and the SGD step that consumes it.

Weight gradients are interpolated with their relation-weighted version,
out = alpha * (grad o r) + (1 - alpha) * grad, so connections whose pre-
and post-synaptic neurons fired together are trained harder and unrelated
ones are damped. With non-negative relations and alpha <= 1 the update
never flips a gradient's sign. Bias gradients are never scaled: a bias has
no pre-synaptic partner, so no relation is defined for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .tensor import NonFiniteError, ShapeError

__all__ = [
    "GradScaleConfig",
    "OptimizerState",
    "scale_gradient",
    "sgd_step",
    "lr_at_epoch",
    "set_epoch",
]

RELATION_MODES = ("final_step", "summed")
RELATION_NORMS = ("none", "max", "mean")


@dataclass
class GradScaleConfig:
    alpha: float = 0.1
    enabled: bool = True
    relation_mode: str = "final_step"
    relation_norm: str = "none"
    log_relations: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.relation_mode not in RELATION_MODES:
            raise ValueError(f"relation_mode must be one of {RELATION_MODES}")
        if self.relation_norm not in RELATION_NORMS:
            raise ValueError(f"relation_norm must be one of {RELATION_NORMS}")


@dataclass
class OptimizerState:
    """SGD with a step-decay learning-rate schedule and optional momentum."""

    base_eta: float = 0.1
    decay_factor: float = 0.1
    decay_every: int = 100
    momentum: float = 0.0
    weight_decay: float = 0.0
    epoch: int = 0
    eta: float = 0.0
    velocities: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")
        self.eta = lr_at_epoch(self, self.epoch)


def lr_at_epoch(state: OptimizerState, epoch: int) -> float:
    """base_eta * decay_factor ** floor(epoch / decay_every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return state.base_eta * state.decay_factor ** (epoch // state.decay_every)


def set_epoch(state: OptimizerState, epoch: int) -> None:
    state.epoch = epoch
    state.eta = lr_at_epoch(state, epoch)


def scale_gradient(grad: np.ndarray, r: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * (grad o r) + (1 - alpha) * grad."""
    grad = tensor.as_tensor(grad)
    r = tensor.as_tensor(r)
    if grad.shape != r.shape:
        raise ShapeError(f"gradient shape {grad.shape} != relation shape {r.shape}")
    return alpha * (grad * r) + (1.0 - alpha) * grad


def sgd_step(weight: np.ndarray, scaled_grad: np.ndarray, state: OptimizerState,
             slot: str = "") -> np.ndarray:
    """W' = W - eta * v, v = momentum * v + grad (momentum 0 reduces to plain SGD).

    `slot` names the per-parameter velocity buffer when momentum is on.
    """
    weight = tensor.as_tensor(weight)
    grad = tensor.as_tensor(scaled_grad)
    if weight.shape != grad.shape:
        raise ShapeError(f"weight shape {weight.shape} != gradient shape {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("sgd_step received a non-finite gradient")
    if state.weight_decay:
        grad = grad + state.weight_decay * weight
    if state.momentum:
        vel = state.velocities.get(slot)
        vel = grad if vel is None else state.momentum * vel + grad
        state.velocities[slot] = vel
        grad = vel
    return weight - state.eta * grad
