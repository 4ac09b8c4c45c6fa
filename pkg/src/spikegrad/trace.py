"""Spike traces and per-connection spike relations.

Each neuron keeps an exponentially decaying record of its firing history,
x(t) = decay * x(t-1) + s(t) with decay e^-1 by default. A layer's relation
tensor combines its pre- and post-synaptic traces into weight shape: an
outer product for dense layers, the kernel-shaped correlation for conv
layers. Relations are recomputed from the forward caches on the backward
path and averaged per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .layers import LayerCache, LayerKind, SpikingLayer
from .tensor import ShapeError

__all__ = [
    "DEFAULT_DECAY",
    "TraceState",
    "trace_update",
    "relation_dense",
    "relation_conv",
    "collect_relations",
    "normalize_relation",
]

DEFAULT_DECAY = math.exp(-1.0)


@dataclass
class TraceState:
    """Pre- and post-synaptic traces for one layer."""

    x_pre: np.ndarray
    x_post: np.ndarray
    decay: float = DEFAULT_DECAY


def trace_update(x: np.ndarray, s: np.ndarray, decay: float = DEFAULT_DECAY) -> np.ndarray:
    """x' = decay * x + s."""
    x = tensor.as_tensor(x)
    s = tensor.as_tensor(s)
    if x.shape != s.shape:
        raise ShapeError(f"trace shape {x.shape} != spike shape {s.shape}")
    return decay * x + s


def relation_dense(x_post: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """Weight-shaped relation for a dense layer: outer(post, pre)."""
    return tensor.outer(x_post, x_pre)


def relation_conv(x_pre: np.ndarray, x_post: np.ndarray, kh: int, kw: int,
                  stride: int = 1, pad: int = 0) -> np.ndarray:
    """Kernel-shaped relation for a conv layer: the weight-shaped correlation
    of the input-trace map with the output-trace map."""
    return tensor.conv2d_weight_corr(x_pre, x_post, kh, kw, stride, pad)


def normalize_relation(r: np.ndarray, mode: str) -> np.ndarray:
    """Optional per-layer rescaling: none | max | mean (no-op on all-zero r)."""
    if mode == "none":
        return r
    if mode == "max":
        stat = float(np.max(r))
    elif mode == "mean":
        stat = float(np.mean(r))
    else:
        raise ValueError(f"unknown relation norm {mode!r}")
    return r if stat <= 0.0 else r / stat


def _batched_relation(layer: SpikingLayer, x_pre: np.ndarray, x_post: np.ndarray
                      ) -> np.ndarray:
    """Mean over the batch of per-sample relations."""
    n = x_pre.shape[0]
    if layer.kind is LayerKind.CONV2D:
        g = layer.geometry
        return relation_conv(x_pre, x_post, g.kh, g.kw, g.stride, g.pad) / n
    return np.einsum("bj,bi->ji", x_post, x_pre) / n


def collect_relations(model: list[SpikingLayer], caches: list[LayerCache],
                      mode: str = "final_step", decay: float = DEFAULT_DECAY,
                      norm: str = "none") -> list[np.ndarray | None]:
    """Recompute traces from the cached spike history and evaluate per-layer
    relations, averaged over the batch.

    mode "final_step" evaluates the relation from the traces at the last
    timestep; "summed" accumulates the relation at every timestep. Readout
    layers never fire, so their entry is None (their gradients are left
    unscaled). A layer's pre-synaptic stream is whatever it consumed, which
    for the first layer under real-value encoding is the analog input.
    """
    if mode not in ("final_step", "summed"):
        raise ValueError(f"unknown relation mode {mode!r}")
    if len(model) != len(caches):
        raise ValueError(f"cache count {len(caches)} != model depth {len(model)}")
    out: list[np.ndarray | None] = []
    for layer, cache in zip(model, caches):
        if layer.kind is LayerKind.READOUT:
            out.append(None)
            continue
        steps = len(cache.inputs)
        x_pre = np.zeros_like(cache.inputs[0])
        x_post = np.zeros_like(cache.spikes[0])
        acc: np.ndarray | None = None
        for t in range(steps):
            x_pre = trace_update(x_pre, cache.inputs[t], decay)
            x_post = trace_update(x_post, cache.spikes[t], decay)
            if mode == "summed":
                r_t = _batched_relation(layer, x_pre, x_post)
                acc = r_t if acc is None else acc + r_t
        r = acc if mode == "summed" else _batched_relation(layer, x_pre, x_post)
        out.append(normalize_relation(r, norm))
    return out
