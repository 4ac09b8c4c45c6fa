"""Plain-text key=value run configuration with dotted sections.

One `key = value` pair per line, `#` comment lines, unknown keys rejected.
The same format is written back as the run manifest, so a manifest can be
fed straight back to `spikegrad train --config`.
"""

from __future__ import annotations

from .data import DatasetSpec
from .gradscale import GradScaleConfig, OptimizerState, RELATION_MODES, RELATION_NORMS
from .neuron import NeuronParams, ResetMode, SurrogateKind
from .train import TrainConfig

__all__ = ["ConfigError", "parse_config_text", "parse_config_file",
           "apply_overrides", "build_train_config", "dump_config"]


class ConfigError(ValueError):
    """Config file or override cannot be parsed or validated."""


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = val
    return out


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read(), source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def apply_overrides(conf: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(conf)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _to_bool(val: str) -> bool:
    low = val.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {val!r}")


def _to_int_tuple(val: str) -> tuple[int, ...]:
    if not val:
        return ()
    return tuple(int(part) for part in val.split(","))


def _enum(*allowed: str):
    def conv(val: str) -> str:
        if val not in allowed:
            raise ValueError(f"must be one of {allowed}, got {val!r}")
        return val
    return conv


# key -> converter; defaults live in the dataclasses themselves
_SCHEMA = {
    "model.kind": _enum("mlp", "conv"),
    "model.hidden": _to_int_tuple,
    "model.channels": _to_int_tuple,
    "model.kernel": int,
    "model.stride": int,
    "model.pad": int,
    "model.residual": _to_bool,
    "model.readout_tau": float,
    "model.init_gain": float,
    "neuron.tau": float,
    "neuron.v_th": float,
    "neuron.v_r": float,
    "neuron.reset": _enum("soft", "hard"),
    "neuron.surrogate": _enum("rectangular", "triangular", "sigmoid"),
    "neuron.surrogate_width": float,
    "train.T": int,
    "train.epochs": int,
    "train.batch_size": int,
    "train.seed": int,
    "train.repetitions": int,
    "train.workers": int,
    "gradscale.enabled": _to_bool,
    "gradscale.alpha": float,
    "gradscale.relation_mode": _enum(*RELATION_MODES),
    "gradscale.relation_norm": _enum(*RELATION_NORMS),
    "gradscale.log_relations": _to_bool,
    "optim.lr": float,
    "optim.decay_every": int,
    "optim.decay_factor": float,
    "optim.momentum": float,
    "optim.weight_decay": float,
    "data.kind": _enum("synthetic", "idx", "cifar10", "cifar100"),
    "data.synthetic": _enum("blobs", "two_spirals", "glyphs"),
    "data.n_train": int,
    "data.n_test": int,
    "data.seed": int,
    "data.classes": int,
    "data.dim": int,
    "data.sep": float,
    "data.noise": float,
    "data.size": int,
    "data.shift": int,
    "data.train_images": str,
    "data.train_labels": str,
    "data.test_images": str,
    "data.test_labels": str,
    "data.train_bin": str,
    "data.test_bin": str,
    "data.n_classes": int,
}


# config key -> (target dataclass name, constructor kwarg)
_FIELD_MAP = {
    "model.kind": ("train", "model_kind"),
    "model.hidden": ("train", "hidden"),
    "model.channels": ("train", "channels"),
    "model.kernel": ("train", "kernel"),
    "model.stride": ("train", "stride"),
    "model.pad": ("train", "pad"),
    "model.residual": ("train", "residual"),
    "model.readout_tau": ("train", "readout_tau"),
    "model.init_gain": ("train", "init_gain"),
    "train.T": ("train", "T"),
    "train.epochs": ("train", "epochs"),
    "train.batch_size": ("train", "batch_size"),
    "train.seed": ("train", "seed"),
    "train.repetitions": ("train", "repetitions"),
    "train.workers": ("train", "workers"),
    "neuron.tau": ("neuron", "tau"),
    "neuron.v_th": ("neuron", "v_th"),
    "neuron.v_r": ("neuron", "v_r"),
    "neuron.reset": ("neuron", "reset_mode"),
    "neuron.surrogate": ("neuron", "surrogate_kind"),
    "neuron.surrogate_width": ("neuron", "surrogate_width"),
    "gradscale.alpha": ("gradscale", "alpha"),
    "gradscale.enabled": ("gradscale", "enabled"),
    "gradscale.relation_mode": ("gradscale", "relation_mode"),
    "gradscale.relation_norm": ("gradscale", "relation_norm"),
    "gradscale.log_relations": ("gradscale", "log_relations"),
    "optim.lr": ("optim", "base_eta"),
    "optim.decay_every": ("optim", "decay_every"),
    "optim.decay_factor": ("optim", "decay_factor"),
    "optim.momentum": ("optim", "momentum"),
    "optim.weight_decay": ("optim", "weight_decay"),
    "data.kind": ("data", "kind"),
    "data.synthetic": ("data", "synthetic"),
    "data.n_train": ("data", "n_train"),
    "data.n_test": ("data", "n_test"),
    "data.seed": ("data", "seed"),
    "data.classes": ("data", "classes"),
    "data.dim": ("data", "dim"),
    "data.sep": ("data", "sep"),
    "data.noise": ("data", "noise"),
    "data.size": ("data", "size"),
    "data.shift": ("data", "shift"),
    "data.train_images": ("data", "train_images"),
    "data.train_labels": ("data", "train_labels"),
    "data.test_images": ("data", "test_images"),
    "data.test_labels": ("data", "test_labels"),
    "data.train_bin": ("data", "train_bin"),
    "data.test_bin": ("data", "test_bin"),
    "data.n_classes": ("data", "n_classes_override"),
}


def build_train_config(conf: dict[str, str]) -> TrainConfig:
    """Validate raw key/value strings and assemble a TrainConfig.

    Only keys present in `conf` are passed through; all defaults live on
    the dataclasses themselves.
    """
    groups: dict[str, dict[str, object]] = {
        "train": {}, "neuron": {}, "gradscale": {}, "optim": {}, "data": {}}
    for key, raw in conf.items():
        conv = _SCHEMA.get(key)
        if conv is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            val: object = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
        group, kwarg = _FIELD_MAP[key]
        groups[group][kwarg] = val
    if "reset_mode" in groups["neuron"]:
        groups["neuron"]["reset_mode"] = ResetMode(groups["neuron"]["reset_mode"])
    if "surrogate_kind" in groups["neuron"]:
        groups["neuron"]["surrogate_kind"] = SurrogateKind(
            groups["neuron"]["surrogate_kind"])
    try:
        return TrainConfig(
            neuron=NeuronParams(**groups["neuron"]),
            gradscale=GradScaleConfig(**groups["gradscale"]),
            optim=OptimizerState(**groups["optim"]),
            dataset=DatasetSpec(**groups["data"]),
            **groups["train"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: TrainConfig) -> str:
    """Serialize back to the key=value surface; round-trips through
    build_train_config."""
    d = cfg.dataset
    n = cfg.neuron
    g = cfg.gradscale
    o = cfg.optim
    pairs: list[tuple[str, object]] = [
        ("model.kind", cfg.model_kind),
        ("model.hidden", ",".join(map(str, cfg.hidden))),
        ("model.channels", ",".join(map(str, cfg.channels))),
        ("model.kernel", cfg.kernel),
        ("model.stride", cfg.stride),
        ("model.pad", cfg.pad),
        ("model.residual", str(cfg.residual).lower()),
        ("model.readout_tau", repr(cfg.readout_tau)),
        ("model.init_gain", repr(cfg.init_gain)),
        ("neuron.tau", repr(n.tau)),
        ("neuron.v_th", repr(n.v_th)),
        ("neuron.v_r", repr(n.v_r)),
        ("neuron.reset", n.reset_mode.value),
        ("neuron.surrogate", n.surrogate_kind.value),
        ("neuron.surrogate_width", repr(n.surrogate_width)),
        ("train.T", cfg.T),
        ("train.epochs", cfg.epochs),
        ("train.batch_size", cfg.batch_size),
        ("train.seed", cfg.seed),
        ("train.repetitions", cfg.repetitions),
        ("train.workers", cfg.workers),
        ("gradscale.enabled", str(g.enabled).lower()),
        ("gradscale.alpha", repr(g.alpha)),
        ("gradscale.relation_mode", g.relation_mode),
        ("gradscale.relation_norm", g.relation_norm),
        ("gradscale.log_relations", str(g.log_relations).lower()),
        ("optim.lr", repr(o.base_eta)),
        ("optim.decay_every", o.decay_every),
        ("optim.decay_factor", repr(o.decay_factor)),
        ("optim.momentum", repr(o.momentum)),
        ("optim.weight_decay", repr(o.weight_decay)),
        ("data.kind", d.kind),
        ("data.synthetic", d.synthetic),
        ("data.n_train", d.n_train),
        ("data.n_test", d.n_test),
        ("data.seed", d.seed),
        ("data.classes", d.classes),
        ("data.dim", d.dim),
        ("data.sep", repr(d.sep)),
        ("data.size", d.size),
        ("data.shift", d.shift),
    ]
    for key, val in (("data.train_images", d.train_images),
                     ("data.train_labels", d.train_labels),
                     ("data.test_images", d.test_images),
                     ("data.test_labels", d.test_labels),
                     ("data.train_bin", d.train_bin),
                     ("data.test_bin", d.test_bin)):
        if val:
            pairs.append((key, val))
    if d.noise is not None:
        pairs.append(("data.noise", repr(d.noise)))
    if d.n_classes_override is not None:
        pairs.append(("data.n_classes", d.n_classes_override))
    return "\n".join(f"{k} = {v}" for k, v in pairs) + "\n"
