"""End-to-end training: input encoding, loss, epoch loop, evaluation, and
repetition aggregation.

Every run is a pure function of (config, seed): weight init, per-epoch
shuffling, and repetition seeds all derive from the base seed through
numpy SeedSequences, and batch reduction order is fixed, so reruns are
bit-identical. Divergence (non-finite loss or gradient) aborts the run
rather than being clipped away.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import gradscale as gs
from . import layers as L
from . import trace
from .data import DatasetSpec, LabeledDataset, load_dataset
from .gradscale import GradScaleConfig, OptimizerState, lr_at_epoch, scale_gradient, sgd_step
from .neuron import NeuronParams

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "RunResult",
    "EvalResult",
    "RepetitionAggregate",
    "DivergenceError",
    "encode_real_value",
    "cross_entropy",
    "cross_entropy_batch",
    "build_model",
    "train_epoch",
    "train_run",
    "evaluate",
    "run_repetitions",
    "repetition_seeds",
]


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    """Full experiment description; see config.py for the key=value surface."""

    # model
    model_kind: str = "mlp"               # mlp | conv
    hidden: tuple[int, ...] = (32,)
    channels: tuple[int, ...] = (8, 16)
    kernel: int = 3
    stride: int = 2
    pad: int = 1
    residual: bool = False
    readout_tau: float = 1.0
    init_gain: float = 2.0
    # dynamics
    neuron: NeuronParams = field(default_factory=NeuronParams)
    T: int = 4
    # optimization
    epochs: int = 20
    batch_size: int = 128
    seed: int = 1234
    repetitions: int = 4
    workers: int = 1
    optim: OptimizerState = field(default_factory=OptimizerState)
    gradscale: GradScaleConfig = field(default_factory=GradScaleConfig)
    # data
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    test_acc: float
    total_spikes: float
    layer_spikes: list[float]
    relation_stats: list[tuple[float, float]] | None = None


@dataclass
class EvalResult:
    accuracy: float            # percent
    spikes_per_inference: float
    layer_spikes: list[float]  # per-inference means
    n_samples: int


@dataclass
class RunResult:
    model: list[L.SpikingLayer]
    epochs: list[EpochMetrics]
    final_accuracy: float
    final_spikes: float
    seed: int


@dataclass
class RepetitionAggregate:
    runs: list[RunResult]
    acc_mean: float
    acc_max: float
    spikes_mean: float
    spikes_max: float


def encode_real_value(sample: np.ndarray, T: int) -> list[np.ndarray]:
    """Present the analog sample as identical drive at every timestep."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return [sample] * T


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its analytic gradient for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    logsumexp = math.log(np.exp(z).sum())
    loss = logsumexp - z[label]
    grad = np.exp(z - logsumexp)
    grad[label] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray
                        ) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; the gradient carries the 1/B factor."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range for {k} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))
    grad = np.exp(z - logsumexp[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _conv_stack_shapes(cfg: TrainConfig, in_shape: tuple[int, ...]
                       ) -> list[tuple[int, int, int]]:
    c, h, w = in_shape
    shapes = [(c, h, w)]
    for out_c in cfg.channels:
        from .tensor import conv_output_hw
        ho, wo = conv_output_hw(h, w, cfg.kernel, cfg.kernel, cfg.stride, cfg.pad)
        shapes.append((out_c, ho, wo))
        c, h, w = out_c, ho, wo
    return shapes


def build_model(cfg: TrainConfig, input_shape: tuple[int, ...], n_classes: int,
                rng: np.random.Generator) -> list[L.SpikingLayer]:
    """Materialize the configured architecture for a given input shape."""
    model: list[L.SpikingLayer] = []
    if cfg.model_kind == "conv":
        if len(input_shape) != 3:
            raise ValueError(f"conv model needs [C, H, W] input, got {input_shape}")
        shapes = _conv_stack_shapes(cfg, input_shape)
        for i, out_c in enumerate(cfg.channels):
            geo = L.ConvGeometry(shapes[i][0], out_c, cfg.kernel, cfg.kernel,
                                 cfg.stride, cfg.pad)
            layer = L.conv_layer(geo, cfg.neuron, rng, cfg.init_gain)
            if cfg.residual and i >= 2 and shapes[i + 1] == shapes[i - 1]:
                layer.residual_from = i - 2
            model.append(layer)
        n_in = int(np.prod(shapes[-1]))
    elif cfg.model_kind == "mlp":
        n_in = int(np.prod(input_shape))
        for width in cfg.hidden:
            model.append(L.dense_layer(n_in, width, cfg.neuron, rng, cfg.init_gain))
            n_in = width
    else:
        raise ValueError(f"unknown model kind {cfg.model_kind!r}")
    model.append(L.readout_layer(n_in, n_classes, rng, cfg.readout_tau, cfg.init_gain))
    return model


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def _check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite; aborting run")


def train_epoch(model: list[L.SpikingLayer], train_set: LabeledDataset,
                cfg: TrainConfig, opt: OptimizerState,
                shuffle_rng: np.random.Generator) -> tuple[float, list[tuple[float, float]] | None]:
    """One pass over the training set; returns mean loss and, when relation
    logging is on, per-layer (mean, max) relation statistics."""
    n = len(train_set)
    order = shuffle_rng.permutation(n)
    total_loss = 0.0
    gcfg = cfg.gradscale
    rel_stats = ([(0.0, 0.0)] * len(model)) if (gcfg.enabled and gcfg.log_relations) else None
    n_batches = 0
    for batch_idx in _batches(n, cfg.batch_size, order):
        xb = train_set.x[batch_idx]
        yb = train_set.y[batch_idx]
        encoded = encode_real_value(xb, cfg.T)
        try:
            fwd = L.model_forward(model, encoded)
        except NonFiniteError as exc:
            raise DivergenceError(f"forward pass diverged: {exc}") from exc
        loss, dlogits = cross_entropy_batch(fwd.logits, yb)
        _check_finite(loss, "training loss")
        total_loss += loss * len(batch_idx)
        grads = L.model_backward_stbp(model, fwd.caches, dlogits)
        if gcfg.enabled:
            relations = trace.collect_relations(model, fwd.caches,
                                                mode=gcfg.relation_mode,
                                                norm=gcfg.relation_norm)
            scaled = []
            for (dw, db), rel in zip(grads, relations):
                if rel is not None:
                    dw = scale_gradient(dw, rel, gcfg.alpha)
                scaled.append((dw, db))
            grads = scaled
            if rel_stats is not None:
                for i, rel in enumerate(relations):
                    if rel is not None:
                        m, x = rel_stats[i]
                        rel_stats[i] = (m + float(rel.mean()), max(x, float(rel.max())))
        try:
            for i, (layer, (dw, db)) in enumerate(zip(model, grads)):
                layer.weight = sgd_step(layer.weight, dw, opt, f"w{i}")
                layer.bias = sgd_step(layer.bias, db, opt, f"b{i}")
        except NonFiniteError as exc:
            raise DivergenceError(f"optimizer step diverged: {exc}") from exc
        n_batches += 1
    if rel_stats is not None and n_batches:
        rel_stats = [(m / n_batches, x) for m, x in rel_stats]
    return total_loss / max(n, 1), rel_stats


def _eval_batch(model: list[L.SpikingLayer], x: np.ndarray, y: np.ndarray, T: int
                ) -> tuple[int, np.ndarray]:
    fwd = L.model_forward(model, encode_real_value(x, T))
    correct = int(np.sum(np.argmax(fwd.logits, axis=1) == y))
    return correct, np.asarray(fwd.spike_counts, dtype=np.float64)


def evaluate(model: list[L.SpikingLayer], test_set: LabeledDataset, T: int,
             batch_size: int = 256, workers: int = 1) -> EvalResult:
    """Argmax accuracy plus per-inference spike counts over a dataset."""
    n = len(test_set)
    if n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    jobs = [(test_set.x[b], test_set.y[b]) for b in _batches(n, batch_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _eval_batch(model, a[0], a[1], T), jobs))
    else:
        results = [_eval_batch(model, x, y, T) for x, y in jobs]
    correct = sum(r[0] for r in results)
    layer_totals = np.sum([r[1] for r in results], axis=0)
    per_layer = [float(v) / n for v in layer_totals]
    return EvalResult(accuracy=100.0 * correct / n,
                      spikes_per_inference=float(layer_totals.sum()) / n,
                      layer_spikes=per_layer, n_samples=n)


def train_run(cfg: TrainConfig, seed: int, epoch_cb=None) -> RunResult:
    """Train one model from scratch; epoch_cb(metrics, model) fires per epoch."""
    train_set, test_set = load_dataset(cfg.dataset)
    init_rng = np.random.default_rng([seed, 0])
    shuffle_rng = np.random.default_rng([seed, 1])
    model = build_model(cfg, train_set.sample_shape, train_set.n_classes, init_rng)
    opt = replace(cfg.optim, velocities={})
    history: list[EpochMetrics] = []
    final_acc, final_spikes = 0.0, 0.0
    for epoch in range(cfg.epochs):
        gs.set_epoch(opt, epoch)
        loss, rel_stats = train_epoch(model, train_set, cfg, opt, shuffle_rng)
        ev = evaluate(model, test_set, cfg.T, workers=cfg.workers)
        em = EpochMetrics(epoch=epoch, lr=opt.eta, train_loss=loss,
                          test_acc=ev.accuracy, total_spikes=ev.spikes_per_inference,
                          layer_spikes=ev.layer_spikes, relation_stats=rel_stats)
        history.append(em)
        final_acc, final_spikes = ev.accuracy, ev.spikes_per_inference
        if epoch_cb is not None:
            epoch_cb(em, model)
    return RunResult(model=model, epochs=history, final_accuracy=final_acc,
                     final_spikes=final_spikes, seed=seed)


def repetition_seeds(base_seed: int, n: int) -> list[int]:
    """Deterministic per-repetition seeds derived from the base seed."""
    return [int(np.random.SeedSequence([base_seed, k]).generate_state(1)[0])
            for k in range(n)]


def run_repetitions(cfg: TrainConfig, seeds: list[int] | None = None,
                    rep_cb=None) -> RepetitionAggregate:
    """Repeat the experiment and aggregate mean/max accuracy and spikes."""
    if seeds is None:
        seeds = repetition_seeds(cfg.seed, cfg.repetitions)
    runs: list[RunResult] = []
    for rep, s in enumerate(seeds):
        cb = rep_cb(rep) if rep_cb is not None else None
        runs.append(train_run(cfg, s, epoch_cb=cb))
    accs = [r.final_accuracy for r in runs]
    spikes = [r.final_spikes for r in runs]
    return RepetitionAggregate(
        runs=runs,
        acc_mean=float(np.mean(accs)), acc_max=float(np.max(accs)),
        spikes_mean=float(np.mean(spikes)), spikes_max=float(np.max(spikes)),
    )
