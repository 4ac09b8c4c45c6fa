"""Spiking dense and conv layers with forward-over-time caching and a
hand-written backward pass through both layers and timesteps.

The backward treats firing as differentiable via the surrogate derivative
(or the exact sigmoid derivative when the smooth forward was used) and
carries the membrane recurrence u(t+1) = tau * reset(u(t)) + psp(t+1)
through time, reset branch included. The final layer is a non-firing
readout whose accumulated potential, divided by the number of timesteps,
serves as the logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO

import numpy as np

from . import tensor
from .neuron import (
    NeuronParams,
    ResetMode,
    SurrogateKind,
    LifState,
    heaviside,
    reset_jacobian,
    sigmoid,
    smooth_firing_derivative,
    surrogate_grad,
    zeros_state,
)
from .tensor import ShapeError

__all__ = [
    "LayerKind",
    "ConvGeometry",
    "SpikingLayer",
    "LayerCache",
    "ForwardResult",
    "dense_layer",
    "conv_layer",
    "readout_layer",
    "layer_forward_t",
    "model_forward",
    "model_backward_stbp",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    READOUT = "readout"


@dataclass(frozen=True)
class ConvGeometry:
    in_channels: int
    out_channels: int
    kh: int
    kw: int
    stride: int = 1
    pad: int = 0


@dataclass
class SpikingLayer:
    kind: LayerKind
    weight: np.ndarray
    bias: np.ndarray
    neuron: NeuronParams | None = None
    geometry: ConvGeometry | None = None
    readout_tau: float = 1.0          # readout layers integrate with this leak
    residual_from: int | None = None  # index of a layer whose spikes are added to this psp

    def __post_init__(self) -> None:
        if self.kind is LayerKind.READOUT:
            if self.neuron is not None:
                raise ValueError("readout layers are pure integrators and take no NeuronParams")
        elif self.neuron is None:
            raise ValueError(f"{self.kind.value} layer requires NeuronParams")
        if self.kind is LayerKind.CONV2D:
            g = self.geometry
            if g is None:
                raise ValueError("conv2d layer requires ConvGeometry")
            expect = (g.out_channels, g.in_channels, g.kh, g.kw)
            if self.weight.shape != expect:
                raise ShapeError(f"conv weight {self.weight.shape} != geometry {expect}")
            if self.bias.shape != (g.out_channels,):
                raise ShapeError(f"conv bias {self.bias.shape} != ({g.out_channels},)")
        else:
            if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
                raise ShapeError(
                    f"{self.kind.value} weight/bias shapes {self.weight.shape}/{self.bias.shape}"
                )

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
             gain: float) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(gain / fan_in)


def dense_layer(n_in: int, n_out: int, neuron: NeuronParams,
                rng: np.random.Generator, gain: float = 2.0) -> SpikingLayer:
    w = _kaiming(rng, (n_out, n_in), n_in, gain)
    return SpikingLayer(LayerKind.DENSE, w, np.zeros(n_out), neuron=neuron)


def conv_layer(geometry: ConvGeometry, neuron: NeuronParams,
               rng: np.random.Generator, gain: float = 2.0) -> SpikingLayer:
    g = geometry
    fan_in = g.in_channels * g.kh * g.kw
    w = _kaiming(rng, (g.out_channels, g.in_channels, g.kh, g.kw), fan_in, gain)
    return SpikingLayer(LayerKind.CONV2D, w, np.zeros(g.out_channels),
                        neuron=neuron, geometry=g)


def readout_layer(n_in: int, n_out: int, rng: np.random.Generator,
                  tau: float = 1.0, gain: float = 2.0) -> SpikingLayer:
    w = _kaiming(rng, (n_out, n_in), n_in, gain)
    return SpikingLayer(LayerKind.READOUT, w, np.zeros(n_out), readout_tau=tau)


@dataclass
class LayerCache:
    """Per-timestep quantities the backward pass replays.

    inputs: what the layer consumed (flattened for dense/readout kinds),
    u_pre: pre-reset potentials (readout: integrator values),
    spikes: emitted spikes (empty for readout),
    input_shape: per-sample shape of the raw input before any flattening.
    """

    inputs: list[np.ndarray] = field(default_factory=list)
    u_pre: list[np.ndarray] = field(default_factory=list)
    spikes: list[np.ndarray] = field(default_factory=list)
    input_shape: tuple[int, ...] = ()


@dataclass
class ForwardResult:
    logits: np.ndarray
    caches: list[LayerCache]
    spike_counts: list[int]


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _layer_psp(layer: SpikingLayer, x: np.ndarray) -> np.ndarray:
    """Batched pre-synaptic drive for one timestep; x is [B, ...]."""
    if layer.kind is LayerKind.CONV2D:
        if x.ndim != 4:
            raise ShapeError(f"conv2d layer expects [B, C, H, W], got {x.shape}")
        g = layer.geometry
        return tensor.conv2d(x, layer.weight, layer.bias, g.stride, g.pad)
    flat = _flat(x)
    if flat.shape[1] != layer.weight.shape[1]:
        raise ShapeError(
            f"{layer.kind.value} layer with {layer.weight.shape[1]} inputs "
            f"got input of shape {x.shape[1:]}"
        )
    return tensor.affine(flat, layer.weight, layer.bias)


def _fire(u_pre: np.ndarray, params: NeuronParams, smooth_beta: float | None) -> np.ndarray:
    if smooth_beta is None:
        return heaviside(u_pre - params.v_th)
    return sigmoid(smooth_beta * (u_pre - params.v_th))


def _reset(u_pre: np.ndarray, s: np.ndarray, params: NeuronParams) -> np.ndarray:
    if params.reset_mode is ResetMode.SOFT:
        return u_pre - s * params.v_th
    return (1.0 - s) * u_pre + s * params.v_r


def layer_forward_t(layer: SpikingLayer, in_spikes: np.ndarray, state: LifState,
                    t: int, smooth_beta: float | None = None
                    ) -> tuple[np.ndarray, LifState, dict]:
    """Advance one layer by one timestep on a single sample.

    Returns the emitted spikes (readout: the integrated potential), the new
    state, and the cache entry {input, u_pre, spikes} for the backward pass.
    """
    x = tensor.as_tensor(in_spikes)[None]
    if layer.kind is LayerKind.READOUT:
        psp = _layer_psp(layer, x)
        u = layer.readout_tau * state.u + psp[0]
        new_state = LifState(u=u, s=np.zeros_like(u))
        return u, new_state, {"input": _flat(x)[0], "u_pre": u, "spikes": None}
    psp = _layer_psp(layer, x)[0]
    u_pre = layer.neuron.tau * state.u + psp
    s = _fire(u_pre, layer.neuron, smooth_beta)
    new_state = LifState(u=_reset(u_pre, s, layer.neuron), s=s)
    cached_in = _flat(x)[0] if layer.kind is LayerKind.DENSE else x[0]
    return s, new_state, {"input": cached_in, "u_pre": u_pre, "spikes": s}


def _infer_batched(model: list[SpikingLayer], x: np.ndarray) -> bool:
    first = model[0]
    if first.kind is LayerKind.CONV2D:
        if x.ndim == 4:
            return True
        if x.ndim == 3:
            return False
        raise ShapeError(f"conv model input must be [C, H, W] or [B, C, H, W], got {x.shape}")
    n_in = first.weight.shape[1]
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == n_in:
        return True
    if int(np.prod(x.shape)) == n_in:
        return False
    raise ShapeError(f"input shape {x.shape} incompatible with first layer n_in={n_in}")


def model_forward(model: list[SpikingLayer], encoded: list[np.ndarray],
                  smooth_beta: float | None = None) -> ForwardResult:
    """Run the network over all timesteps.

    encoded: per-timestep inputs, each [B, ...] or a single sample.
    Returns logits (readout potential / T), per-layer caches, and per-layer
    total emitted spike counts.
    """
    if not model or model[-1].kind is not LayerKind.READOUT:
        raise ValueError("model must end in a readout layer")
    if not encoded:
        raise ValueError("encoded input must contain at least one timestep")
    steps = [tensor.as_tensor(x) for x in encoded]
    batched = _infer_batched(model, steps[0])
    if not batched:
        steps = [x[None] for x in steps]
    n_batch = steps[0].shape[0]

    caches = [LayerCache() for _ in model]
    states: list[np.ndarray | None] = [None] * len(model)
    spike_counts = [0] * len(model)

    for t, x in enumerate(steps):
        outputs_t: list[np.ndarray] = []
        for l, layer in enumerate(model):
            if layer.kind is LayerKind.CONV2D:
                x_in = x
            else:
                x_in = _flat(x)
            caches[l].inputs.append(x_in)
            if t == 0:
                caches[l].input_shape = x.shape[1:]
            psp = _layer_psp(layer, x)
            if layer.residual_from is not None:
                skip = outputs_t[layer.residual_from]
                if skip.shape != psp.shape:
                    raise ShapeError(
                        f"residual merge shape mismatch: {skip.shape} vs {psp.shape}"
                    )
                psp = psp + skip
            if layer.kind is LayerKind.READOUT:
                u_prev = states[l] if states[l] is not None else np.zeros_like(psp)
                u = layer.readout_tau * u_prev + psp
                states[l] = u
                caches[l].u_pre.append(u)
                x = u
            else:
                u_prev = states[l] if states[l] is not None else np.zeros_like(psp)
                u_pre = layer.neuron.tau * u_prev + psp
                s = _fire(u_pre, layer.neuron, smooth_beta)
                states[l] = _reset(u_pre, s, layer.neuron)
                caches[l].u_pre.append(u_pre)
                caches[l].spikes.append(s)
                spike_counts[l] += int(np.sum(s > 0.5)) if smooth_beta is None else 0
                x = s
            outputs_t.append(x)

    logits = states[-1] / len(steps)
    if not batched:
        logits = logits[0]
    return ForwardResult(logits=logits, caches=caches, spike_counts=spike_counts)


def _firing_derivative(layer: SpikingLayer, u_pre: np.ndarray, s: np.ndarray,
                       smooth_beta: float | None) -> np.ndarray:
    if smooth_beta is None:
        return surrogate_grad(u_pre, layer.neuron)
    return smooth_firing_derivative(s, smooth_beta)


def model_backward_stbp(model: list[SpikingLayer], caches: list[LayerCache],
                        dl_dlogits: np.ndarray, smooth_beta: float | None = None
                        ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-time, reverse-layer gradient accumulation.

    dl_dlogits carries any batch averaging (e.g. 1/B from a mean loss);
    returns per-layer (dW, db) summed over timesteps.
    """
    if len(caches) != len(model):
        raise ValueError(f"cache count {len(caches)} != model depth {len(model)}")
    n_layers = len(model)
    T = len(caches[0].inputs)
    n_batch = caches[0].inputs[0].shape[0]
    g = tensor.as_tensor(dl_dlogits)
    if g.ndim == 1:
        g = g[None]
    if g.shape[0] != n_batch:
        raise ShapeError(f"dl_dlogits batch {g.shape[0]} != cached batch {n_batch}")

    # g_spike[l][t]: accumulated dL/d(output spikes of layer l at step t)
    g_spike: list[list[np.ndarray | None]] = [[None] * T for _ in model]
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * n_layers

    def add_spike_grad(l: int, t: int, val: np.ndarray) -> None:
        cur = g_spike[l][t]
        g_spike[l][t] = val if cur is None else cur + val

    for l in reversed(range(n_layers)):
        layer = model[l]
        cache = caches[l]
        dpsp: list[np.ndarray] = [np.empty(0)] * T

        if layer.kind is LayerKind.READOUT:
            if l != n_layers - 1:
                raise ValueError("readout must be the final layer")
            cur = g / T
            for t in reversed(range(T)):
                dpsp[t] = cur
                if t > 0:
                    cur = cur * layer.readout_tau
        else:
            params = layer.neuron
            delta_next: np.ndarray | None = None
            for t in reversed(range(T)):
                u_pre = cache.u_pre[t]
                s = cache.spikes[t]
                ds_du = _firing_derivative(layer, u_pre, s, smooth_beta)
                out_g = g_spike[l][t]
                delta = out_g * ds_du if out_g is not None else np.zeros_like(u_pre)
                if delta_next is not None:
                    delta = delta + delta_next * params.tau * reset_jacobian(
                        u_pre, s, ds_du, params)
                dpsp[t] = delta
                delta_next = delta

        if layer.kind is LayerKind.CONV2D:
            geo = layer.geometry
            dw = np.zeros_like(layer.weight)
            db = np.zeros_like(layer.bias)
            in_hw = cache.inputs[0].shape[2:]
            for t in range(T):
                dw += tensor.conv2d_weight_corr(cache.inputs[t], dpsp[t],
                                                geo.kh, geo.kw, geo.stride, geo.pad)
                db += dpsp[t].sum(axis=(0, 2, 3))
                if l > 0:
                    gin = tensor.conv2d_input_grad(dpsp[t], layer.weight, in_hw,
                                                   geo.stride, geo.pad)
                    add_spike_grad(l - 1, t, gin)
        else:
            dw = np.zeros_like(layer.weight)
            db = np.zeros_like(layer.bias)
            for t in range(T):
                dw += np.einsum("bo,bi->oi", dpsp[t], cache.inputs[t])
                db += dpsp[t].sum(axis=0)
                if l > 0:
                    gin = (dpsp[t] @ layer.weight).reshape(
                        (n_batch,) + tuple(cache.input_shape))
                    add_spike_grad(l - 1, t, gin)

        if layer.residual_from is not None:
            for t in range(T):
                add_spike_grad(layer.residual_from, t, dpsp[t])

        grads[l] = (dw, db)

    return grads  # type: ignore[return-value]


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent with the request."""


_CKPT_MAGIC = "spikegrad-checkpoint 1"


def _layer_header(layer: SpikingLayer) -> str:
    parts = [f"layer {layer.kind.value}"]
    if layer.kind is LayerKind.CONV2D:
        g = layer.geometry
        parts.append(f"in={g.in_channels} out={g.out_channels} kh={g.kh} kw={g.kw} "
                     f"stride={g.stride} pad={g.pad}")
    else:
        parts.append(f"in={layer.weight.shape[1]} out={layer.weight.shape[0]}")
    if layer.kind is LayerKind.READOUT:
        parts.append(f"tau={layer.readout_tau!r}")
    else:
        p = layer.neuron
        parts.append(f"tau={p.tau!r} v_th={p.v_th!r} v_r={p.v_r!r} "
                     f"reset={p.reset_mode.value} surrogate={p.surrogate_kind.value} "
                     f"width={p.surrogate_width!r}")
    skip = -1 if layer.residual_from is None else layer.residual_from
    parts.append(f"residual={skip}")
    return " ".join(parts)


def save_checkpoint(path: str, model: list[SpikingLayer], meta: dict | None = None) -> None:
    """Text header describing layer kinds/geometry, then serialized tensors."""
    with open(path, "wb") as f:
        lines = [_CKPT_MAGIC]
        for key, val in sorted((meta or {}).items()):
            lines.append(f"meta {key}={val}")
        lines.extend(_layer_header(layer) for layer in model)
        lines.append("end")
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for layer in model:
            tensor.write_tensor(f, layer.weight)
            tensor.write_tensor(f, layer.bias)


def _parse_kv(fields: list[str]) -> dict[str, str]:
    return dict(item.split("=", 1) for item in fields)


def load_checkpoint(path: str) -> tuple[list[SpikingLayer], dict[str, str]]:
    with open(path, "rb") as f:
        if f.readline().decode("ascii").strip() != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a spikegrad checkpoint")
        meta: dict[str, str] = {}
        headers: list[dict[str, str]] = []
        kinds: list[str] = []
        while True:
            line = f.readline().decode("ascii").strip()
            if line == "end":
                break
            if not line:
                raise CheckpointError(f"{path}: truncated header")
            tag, rest = line.split(" ", 1)
            if tag == "meta":
                key, val = rest.split("=", 1)
                meta[key] = val
            elif tag == "layer":
                kind, *fields = rest.split(" ")
                kinds.append(kind)
                headers.append(_parse_kv(fields))
            else:
                raise CheckpointError(f"{path}: unexpected header line {line!r}")
        model: list[SpikingLayer] = []
        try:
            for kind, h in zip(kinds, headers):
                weight = tensor.read_tensor(f)
                bias = tensor.read_tensor(f)
                skip = int(h["residual"])
                residual = None if skip < 0 else skip
                if kind == LayerKind.READOUT.value:
                    model.append(SpikingLayer(LayerKind.READOUT, weight, bias,
                                              readout_tau=float(h["tau"]),
                                              residual_from=residual))
                    continue
                params = NeuronParams(
                    tau=float(h["tau"]), v_th=float(h["v_th"]), v_r=float(h["v_r"]),
                    reset_mode=ResetMode(h["reset"]),
                    surrogate_width=float(h["width"]),
                    surrogate_kind=SurrogateKind(h["surrogate"]),
                )
                if kind == LayerKind.CONV2D.value:
                    geo = ConvGeometry(int(h["in"]), int(h["out"]), int(h["kh"]),
                                       int(h["kw"]), int(h["stride"]), int(h["pad"]))
                    model.append(SpikingLayer(LayerKind.CONV2D, weight, bias,
                                              neuron=params, geometry=geo,
                                              residual_from=residual))
                else:
                    model.append(SpikingLayer(LayerKind.DENSE, weight, bias,
                                              neuron=params, residual_from=residual))
        except (KeyError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return model, meta
