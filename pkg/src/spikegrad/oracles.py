"""Self-contained verification oracles behind the `verify` command.

Every check recomputes its expected values through an independent route --
naive loops, closed forms, numerical quadrature, or central finite
differences -- and compares against the library kernels at a fixed
tolerance with fixed seeds. None of them reuse the code paths they check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import tensor, trace
from .data import DatasetSpec, load_dataset, load_idx
from .gradscale import OptimizerState, sgd_step
from .neuron import NeuronParams, ResetMode, SurrogateKind, surrogate_grad
from .train import (TrainConfig, build_model, cross_entropy, encode_real_value,
                    evaluate, train_run)

_trapz = getattr(np, "trapezoid", None) or np.trapz

__all__ = ["OracleResult", "run_all", "ORACLES"]


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _affine_loops(x, w, b):
    out = np.zeros(w.shape[0])
    for j in range(w.shape[0]):
        acc = 0.0
        for i in range(w.shape[1]):
            acc += w[j, i] * x[i]
        out[j] = acc + b[j]
    return out


def check_affine() -> str:
    rng = np.random.default_rng(101)
    for _ in range(20):
        n_out, n_in = rng.integers(1, 9, size=2)
        x = rng.standard_normal(n_in)
        w = rng.standard_normal((n_out, n_in))
        b = rng.standard_normal(n_out)
        err = np.max(np.abs(tensor.affine(x, w, b) - _affine_loops(x, w, b)))
        if err > 1e-12:
            raise AssertionError(f"affine mismatch {err:.3e}")
    return "20 random shapes vs triple loop, tol 1e-12"


def _conv_loops(x, k, b, stride, pad):
    co, ci, kh, kw = k.shape
    _, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for hh in range(ho):
            for ww in range(wo):
                acc = 0.0
                for c in range(ci):
                    for p in range(kh):
                        for q in range(kw):
                            yy = hh * stride - pad + p
                            xx = ww * stride - pad + q
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += k[o, c, p, q] * x[c, yy, xx]
                out[o, hh, ww] = acc + b[o]
    return out


def check_conv2d() -> str:
    rng = np.random.default_rng(202)
    cases = [(2, 5, 5, 3, 3, 3, 1, 0), (1, 6, 6, 2, 3, 3, 1, 1),
             (3, 8, 6, 2, 3, 3, 1, 1), (2, 7, 7, 4, 3, 3, 2, 1)]
    for ci, h, w, co, kh, kw, stride, pad in cases:
        x = rng.standard_normal((ci, h, w))
        k = rng.standard_normal((co, ci, kh, kw))
        b = rng.standard_normal(co)
        err = np.max(np.abs(tensor.conv2d(x, k, b, stride, pad)
                            - _conv_loops(x, k, b, stride, pad)))
        if err > 1e-12:
            raise AssertionError(f"conv2d mismatch {err:.3e}")
    return f"{len(cases)} geometries vs six-deep loop, tol 1e-12"


def _weight_corr_loops(x, om, kh, kw, stride, pad):
    ci, h, w = x.shape
    co, ho, wo = om.shape
    out = np.zeros((co, ci, kh, kw))
    for o in range(co):
        for c in range(ci):
            for p in range(kh):
                for q in range(kw):
                    acc = 0.0
                    for hh in range(ho):
                        for ww in range(wo):
                            yy = hh * stride - pad + p
                            xx = ww * stride - pad + q
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += om[o, hh, ww] * x[c, yy, xx]
                    out[o, c, p, q] = acc
    return out


def check_weight_corr() -> str:
    rng = np.random.default_rng(303)
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x = rng.standard_normal((2, 7, 7))
        kh = kw = 3
        ho = (7 + 2 * pad - kh) // stride + 1
        om = rng.standard_normal((3, ho, ho))
        got = tensor.conv2d_weight_corr(x, om, kh, kw, stride, pad)
        want = _weight_corr_loops(x, om, kh, kw, stride, pad)
        if np.max(np.abs(got - want)) > 1e-12:
            raise AssertionError(f"weight corr mismatch at stride={stride}, pad={pad}")
    return "3 geometries vs direct loop, tol 1e-12"


def check_weight_corr_is_conv_grad() -> str:
    """conv2d_weight_corr(input, upstream) equals d(sum(conv2d))/dK by
    central finite differences."""
    rng = np.random.default_rng(404)
    x = rng.standard_normal((2, 7, 7))
    k = rng.standard_normal((3, 2, 3, 3))
    b = np.zeros(3)
    stride, pad = 2, 1
    upstream = np.ones_like(tensor.conv2d(x, k, b, stride, pad))
    analytic = tensor.conv2d_weight_corr(x, upstream, 3, 3, stride, pad)
    step = 1e-5
    for idx in np.ndindex(k.shape):
        kp, km = k.copy(), k.copy()
        kp[idx] += step
        km[idx] -= step
        fd = (tensor.conv2d(x, kp, b, stride, pad).sum()
              - tensor.conv2d(x, km, b, stride, pad).sum()) / (2 * step)
        if abs(fd - analytic[idx]) > 1e-6:
            raise AssertionError(f"dK[{idx}] analytic {analytic[idx]:.8f} vs fd {fd:.8f}")
    return "all kernel entries vs central differences, tol 1e-6"


def check_outer() -> str:
    rng = np.random.default_rng(505)
    post = rng.standard_normal(5)
    pre = rng.standard_normal(7)
    got = tensor.outer(post, pre)
    for j in range(5):
        for i in range(7):
            if got[j, i] != post[j] * pre[i]:
                raise AssertionError(f"outer[{j},{i}] mismatch")
    return "5x7 exhaustive scalar products, exact"


def check_surrogate_window() -> str:
    """Rectangular surrogate: exactly 1/a inside |u - v_th| <= a/2, else 0,
    and unit integral on a grid (also for the other window shapes)."""
    for width in (0.5, 1.0, 2.0):
        params = NeuronParams(surrogate_width=width)
        u = np.linspace(0.0, 2.0, 4001)
        sg = surrogate_grad(u, params)
        inside = np.abs(u - params.v_th) <= width / 2
        if not np.all(sg[inside] == 1.0 / width):
            raise AssertionError(f"rect window interior wrong for a={width}")
        if not np.all(sg[~inside] == 0.0):
            raise AssertionError(f"rect window exterior wrong for a={width}")
    for kind in ("rectangular", "triangular", "sigmoid"):
        params = NeuronParams(surrogate_width=0.8, surrogate_kind=SurrogateKind(kind))
        u = np.linspace(-40.0, 42.0, 800001)
        integral = _trapz(surrogate_grad(u, params), u)
        if abs(integral - 1.0) > 1e-3:
            raise AssertionError(f"{kind} integral {integral:.6f} != 1")
    return "window shape exact; unit integral to 1e-3 for all three kinds"


def check_trace_closed_form() -> str:
    rng = np.random.default_rng(606)
    decay = trace.DEFAULT_DECAY
    for _ in range(200):
        t_len = int(rng.integers(1, 65))
        s = rng.integers(0, 2, size=t_len).astype(np.float64)
        x = np.zeros(1)
        for t in range(t_len):
            x = trace.trace_update(x, s[t:t + 1], decay)
        closed = sum(math.exp(-(t_len - k)) * s[k - 1] for k in range(1, t_len + 1))
        if abs(x[0] - closed) > 1e-12:
            raise AssertionError(f"trace mismatch {x[0]} vs {closed}")
    return "200 random spike trains (t <= 64) vs closed form, tol 1e-12"


def check_relations() -> str:
    rng = np.random.default_rng(707)
    for _ in range(40):
        n_out, n_in = rng.integers(1, 10, size=2)
        post = rng.random(n_out)
        pre = rng.random(n_in)
        got = trace.relation_dense(post, pre)
        for j in range(n_out):
            for i in range(n_in):
                if abs(got[j, i] - post[j] * pre[i]) > 1e-12:
                    raise AssertionError("dense relation mismatch")
    for stride, pad in ((1, 0), (2, 1)):
        x_pre = rng.random((2, 5, 5))
        ho = (5 + 2 * pad - 3) // stride + 1
        x_post = rng.random((3, ho, ho))
        got = trace.relation_conv(x_pre, x_post, 3, 3, stride, pad)
        want = _weight_corr_loops(x_pre, x_post, 3, 3, stride, pad)
        if np.max(np.abs(got - want)) > 1e-12:
            raise AssertionError("conv relation mismatch")
    return "40 dense + 2 conv relation cases vs loops, tol 1e-12"


def _loss_of_model(model, encoded, label, beta):
    fwd = L.model_forward(model, encoded, smooth_beta=beta)
    loss, _ = cross_entropy(fwd.logits, label)
    return loss


def check_smooth_gradients() -> str:
    """BPTT gradients on sigmoid-firing networks vs central finite
    differences, dense and conv, soft and hard reset. Bypasses the
    surrogate entirely."""
    beta = 10.0
    worst = 0.0
    for reset in (ResetMode.SOFT, ResetMode.HARD):
        for kind in ("mlp", "conv"):
            cfg = TrainConfig(
                model_kind=kind, hidden=(4,), channels=(2,), kernel=2,
                stride=2, pad=0, T=4,
                neuron=NeuronParams(reset_mode=reset),
            )
            rng = np.random.default_rng(808)
            in_shape = (4,) if kind == "mlp" else (1, 4, 4)
            model = build_model(cfg, in_shape, 3, rng)
            x = np.random.default_rng(809).random(in_shape) * 2.0
            encoded = encode_real_value(x, 4)
            fwd = L.model_forward(model, encoded, smooth_beta=beta)
            loss, dlogits = cross_entropy(fwd.logits, 1)
            grads = L.model_backward_stbp(model, fwd.caches, dlogits, smooth_beta=beta)
            step = 1e-5
            for li, layer in enumerate(model):
                for arr, g in ((layer.weight, grads[li][0]), (layer.bias, grads[li][1])):
                    for idx in np.ndindex(arr.shape):
                        keep = arr[idx]
                        arr[idx] = keep + step
                        lp = _loss_of_model(model, encoded, 1, beta)
                        arr[idx] = keep - step
                        lm = _loss_of_model(model, encoded, 1, beta)
                        arr[idx] = keep
                        fd = (lp - lm) / (2 * step)
                        diff = abs(fd - g[idx])
                        if diff < 1e-9:
                            # below central-difference resolution at this step
                            continue
                        rel = diff / max(abs(fd), abs(g[idx]))
                        worst = max(worst, rel)
                        if rel > 1e-4:
                            raise AssertionError(
                                f"{kind}/{reset.value} layer {li} idx {idx}: "
                                f"bptt {g[idx]:.8f} vs fd {fd:.8f}")
    return f"dense+conv, soft+hard vs central differences; worst rel err {worst:.2e}"


def check_cross_entropy_grad() -> str:
    rng = np.random.default_rng(909)
    logits = rng.standard_normal(10)
    _, grad = cross_entropy(logits, 3)
    step = 1e-6
    for i in range(10):
        lp = logits.copy()
        lm = logits.copy()
        lp[i] += step
        lm[i] -= step
        fd = (cross_entropy(lp, 3)[0] - cross_entropy(lm, 3)[0]) / (2 * step)
        if abs(fd - grad[i]) / max(abs(fd), 1e-9) > 1e-6:
            raise AssertionError(f"ce grad[{i}] {grad[i]:.9f} vs fd {fd:.9f}")
    return "analytic softmax-CE gradient vs central differences, rel 1e-6"


def check_momentum_recurrence() -> str:
    state = OptimizerState(base_eta=0.1, momentum=0.9)
    w = np.array([1.0])
    g = np.array([2.0])
    w1 = sgd_step(w, g, state, "w")
    w2 = sgd_step(w1, g, state, "w")
    # v1 = g; w1 = w - eta*v1; v2 = 0.9*v1 + g; w2 = w1 - eta*v2
    want1 = 1.0 - 0.1 * 2.0
    want2 = want1 - 0.1 * (0.9 * 2.0 + 2.0)
    if abs(w1[0] - want1) > 1e-15 or abs(w2[0] - want2) > 1e-15:
        raise AssertionError(f"momentum recurrence: got {w1[0]}, {w2[0]}")
    return "two-step hand recurrence, exact"


def check_hand_simulation() -> str:
    """Two-layer dense net forward vs an independently coded step-by-step
    simulation of the same recurrences."""
    rng = np.random.default_rng(111)
    params = NeuronParams()
    model = [L.dense_layer(3, 4, params, rng),
             L.readout_layer(4, 2, rng)]
    x = np.random.default_rng(112).random(3)
    T = 4
    fwd = L.model_forward(model, encode_real_value(x, T))
    # independent simulation
    u1 = np.zeros(4)
    u2 = np.zeros(2)
    count = 0
    for _ in range(T):
        psp = model[0].weight @ x + model[0].bias
        u1 = params.tau * u1 + psp
        s = (u1 >= params.v_th).astype(float)
        u1 = u1 - s * params.v_th
        count += int(s.sum())
        u2 = 1.0 * u2 + (model[1].weight @ s + model[1].bias)
    logits = u2 / T
    if fwd.spike_counts[0] != count:
        raise AssertionError(f"spike count {fwd.spike_counts[0]} vs hand {count}")
    if np.max(np.abs(fwd.logits - logits)) > 1e-12:
        raise AssertionError("logits differ from hand simulation")
    return "spike counts and logits match a hand-unrolled simulation"


def check_batch_relation_mean() -> str:
    """Batched relation equals the mean of per-sample relations."""
    rng = np.random.default_rng(222)
    params = NeuronParams()
    model = [L.dense_layer(5, 6, params, rng), L.readout_layer(6, 3, rng)]
    xs = rng.random((2, 5)) * 2.0
    fwd = L.model_forward(model, encode_real_value(xs, 4))
    rel_batch = trace.collect_relations(model, fwd.caches)[0]
    singles = []
    for i in range(2):
        f1 = L.model_forward(model, encode_real_value(xs[i], 4))
        singles.append(trace.collect_relations(model, f1.caches)[0])
    want = (singles[0] + singles[1]) / 2.0
    if np.max(np.abs(rel_batch - want)) > 1e-12:
        raise AssertionError("batch relation != mean of per-sample relations")
    return "batch of 2 vs per-sample recomputation, tol 1e-12"


def check_blobs_separable() -> str:
    """A one-layer readout trained briefly reaches 100% train accuracy on
    well-separated blobs."""
    cfg = TrainConfig(
        model_kind="mlp", hidden=(), epochs=12, batch_size=32, seed=5,
        dataset=DatasetSpec(kind="synthetic", synthetic="blobs",
                            n_train=200, n_test=200, seed=3, sep=8.0, noise=0.5),
    )
    cfg.gradscale.enabled = False
    result = train_run(cfg, seed=5)
    train_set, _ = load_dataset(cfg.dataset)
    ev = evaluate(result.model, train_set, cfg.T)
    if ev.accuracy < 100.0:
        raise AssertionError(f"linear readout reached only {ev.accuracy:.2f}% on blobs")
    return "linear readout fits separable blobs to 100% train accuracy"


def check_idx_roundtrip() -> str:
    """Raw hand-packed IDX bytes decode to the exact pixel values."""
    import os
    import struct as st
    import tempfile
    pixels = bytes([0, 1, 127, 128, 254, 255])
    img = st.pack(">IIII", 0x803, 1, 2, 3) + pixels
    lab = st.pack(">II", 0x801, 1) + bytes([7])
    with tempfile.TemporaryDirectory() as tmp:
        ip = os.path.join(tmp, "i.idx")
        lp = os.path.join(tmp, "l.idx")
        with open(ip, "wb") as f:
            f.write(img)
        with open(lp, "wb") as f:
            f.write(lab)
        ds = load_idx(ip, lp)
    want = np.array(list(pixels), dtype=np.float64).reshape(1, 1, 2, 3) / 255.0
    if not np.array_equal(ds.x, want) or ds.y[0] != 7:
        raise AssertionError("idx round trip mismatch")
    return "hand-packed 1-image fixture recovered exactly"


ORACLES: list[tuple[str, Callable[[], str]]] = [
    ("affine vs naive loops", check_affine),
    ("conv2d vs naive loops", check_conv2d),
    ("weight correlation vs naive loops", check_weight_corr),
    ("weight correlation vs finite differences", check_weight_corr_is_conv_grad),
    ("outer product exhaustive", check_outer),
    ("surrogate window shape and integral", check_surrogate_window),
    ("spike trace closed form", check_trace_closed_form),
    ("relations vs naive loops", check_relations),
    ("smooth-network BPTT vs finite differences", check_smooth_gradients),
    ("cross-entropy gradient vs finite differences", check_cross_entropy_grad),
    ("momentum two-step recurrence", check_momentum_recurrence),
    ("forward pass vs hand simulation", check_hand_simulation),
    ("batch relations vs per-sample mean", check_batch_relation_mean),
    ("separable blobs reach 100% train accuracy", check_blobs_separable),
    ("idx loader round trip", check_idx_roundtrip),
]


def run_all() -> list[OracleResult]:
    results = []
    for name, fn in ORACLES:
        start = time.perf_counter()
        try:
            detail = fn()
            results.append(OracleResult(name, True, detail, time.perf_counter() - start))
        except AssertionError as exc:
            results.append(OracleResult(name, False, str(exc), time.perf_counter() - start))
    return results
