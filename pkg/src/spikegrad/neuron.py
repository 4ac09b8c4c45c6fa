"""Leaky integrate-and-fire dynamics.

Membrane update u' = tau*u + psp, threshold firing s = H(u' - v_th) with
H(0) = 1, soft reset (subtract v_th) or hard reset (clamp to v_r), and the
windowed surrogate derivative used in place of dH/du by the backward pass.
A sigmoid-firing variant provides a fully differentiable stand-in for
gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import NonFiniteError, ShapeError, as_tensor

__all__ = [
    "ResetMode",
    "SurrogateKind",
    "NeuronParams",
    "LifState",
    "zeros_state",
    "heaviside",
    "surrogate_grad",
    "lif_step",
    "lif_step_smooth",
    "sigmoid",
    "smooth_firing_derivative",
    "reset_jacobian",
]


class ResetMode(str, Enum):
    SOFT = "soft"
    HARD = "hard"


class SurrogateKind(str, Enum):
    RECTANGULAR = "rectangular"
    TRIANGULAR = "triangular"
    SIGMOID = "sigmoid"


# Test hook: when set, surrogate_grad uses this width instead of the one in
# NeuronParams. Lets the verification suite demonstrate which checks are
# sensitive to the surrogate and which bypass it. Never set in library code.
_width_override: float | None = None


@dataclass(frozen=True)
class NeuronParams:
    """Per-layer neuron constants."""

    tau: float = 0.9
    v_th: float = 1.0
    v_r: float = 0.0
    reset_mode: ResetMode = ResetMode.SOFT
    surrogate_width: float = 1.0
    surrogate_kind: SurrogateKind = SurrogateKind.RECTANGULAR

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not self.v_th > self.v_r:
            raise ValueError(f"v_th ({self.v_th}) must exceed v_r ({self.v_r})")
        if not self.surrogate_width > 0.0:
            raise ValueError(f"surrogate_width must be positive, got {self.surrogate_width}")


@dataclass
class LifState:
    """Post-reset membrane potentials and the spikes emitted this step."""

    u: np.ndarray
    s: np.ndarray


def zeros_state(shape: tuple[int, ...]) -> LifState:
    return LifState(u=np.zeros(shape), s=np.zeros(shape))


def heaviside(v: np.ndarray) -> np.ndarray:
    """1.0 where v >= 0 else 0.0; a neuron at exact threshold fires."""
    return (as_tensor(v) >= 0.0).astype(np.float64)


def surrogate_grad(u: np.ndarray, params: NeuronParams) -> np.ndarray:
    """Windowed stand-in for dH/du around v_th, unit integral for any width."""
    width = _width_override if _width_override is not None else params.surrogate_width
    z = as_tensor(u) - params.v_th
    if params.surrogate_kind is SurrogateKind.RECTANGULAR:
        return (np.abs(z) <= width / 2.0).astype(np.float64) / width
    if params.surrogate_kind is SurrogateKind.TRIANGULAR:
        return np.maximum(0.0, 1.0 - np.abs(z) / width) / width
    sig = sigmoid(z / width)
    return sig * (1.0 - sig) / width


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def smooth_firing_derivative(s: np.ndarray, beta: float) -> np.ndarray:
    """ds/du of sigmoid firing, expressed through the firing value itself."""
    return beta * s * (1.0 - s)


def _integrate(state: LifState, psp: np.ndarray, params: NeuronParams) -> np.ndarray:
    psp = as_tensor(psp)
    if psp.shape != state.u.shape:
        raise ShapeError(f"psp shape {psp.shape} != state shape {state.u.shape}")
    if not np.all(np.isfinite(psp)):
        raise NonFiniteError("lif step received non-finite psp")
    return params.tau * state.u + psp


def _reset(u_pre: np.ndarray, s: np.ndarray, params: NeuronParams) -> np.ndarray:
    if params.reset_mode is ResetMode.SOFT:
        return u_pre - s * params.v_th
    return (1.0 - s) * u_pre + s * params.v_r


def lif_step(state: LifState, psp: np.ndarray, params: NeuronParams) -> LifState:
    """One timestep: integrate, fire at threshold, then reset."""
    u_pre = _integrate(state, psp, params)
    s = heaviside(u_pre - params.v_th)
    return LifState(u=_reset(u_pre, s, params), s=s)


def lif_step_smooth(state: LifState, psp: np.ndarray, params: NeuronParams,
                    beta: float) -> LifState:
    """lif_step with sigmoid firing s = sigmoid(beta*(u' - v_th)).

    The reset uses the real-valued s, so the whole step is differentiable;
    for inputs bounded away from threshold, large beta recovers lif_step.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    u_pre = _integrate(state, psp, params)
    s = sigmoid(beta * (u_pre - params.v_th))
    return LifState(u=_reset(u_pre, s, params), s=s)


def reset_jacobian(u_pre: np.ndarray, s: np.ndarray, ds_du: np.ndarray,
                   params: NeuronParams) -> np.ndarray:
    """d(post-reset u) / d(pre-reset u), with ds/du supplied by the caller.

    Soft: 1 - v_th * ds/du. Hard: (1 - s) + (v_r - u_pre) * ds/du, keeping
    the reset branch inside the backward graph.
    """
    if params.reset_mode is ResetMode.SOFT:
        return 1.0 - params.v_th * ds_du
    return (1.0 - s) + (params.v_r - u_pre) * ds_du
