"""Command-line entry point: train, eval, verify, gen-data.

Exit codes: 0 success, 1 verification or training failure, 2 usage/config
error. Every command honors --seed and reports the effective seed; the
SPIKEGRAD_SEED environment variable is the lowest-priority seed source.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from . import config as cfgmod
from . import data as datamod
from . import oracles
from . import train as trainmod
from .config import ConfigError
from .data import DataFormatError
from .layers import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import ShapeError
from .train import DivergenceError

DEFAULT_SEED = 1234


def _resolve_seed(cli_seed: int | None, conf: dict[str, str]) -> tuple[int, str]:
    """--seed beats the config key, which beats SPIKEGRAD_SEED, then default."""
    if cli_seed is not None:
        return cli_seed, "cli"
    if "train.seed" in conf:
        return int(conf["train.seed"]), "config"
    env = os.environ.get("SPIKEGRAD_SEED")
    if env is not None:
        try:
            return int(env), "env"
        except ValueError as exc:
            raise ConfigError(f"SPIKEGRAD_SEED={env!r} is not an integer") from exc
    return DEFAULT_SEED, "default"


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _metrics_header(n_layers: int, log_relations: bool) -> str:
    cols = ["epoch", "lr", "train_loss", "test_acc", "total_spikes"]
    cols += [f"spikes_l{j}" for j in range(n_layers)]
    if log_relations:
        cols += [f"rel_mean_l{j}" for j in range(n_layers)]
        cols += [f"rel_max_l{j}" for j in range(n_layers)]
    return ",".join(cols)


def _metrics_line(m: trainmod.EpochMetrics, log_relations: bool) -> str:
    vals = [str(m.epoch), f"{m.lr:.10g}", f"{m.train_loss:.10g}",
            f"{m.test_acc:.10g}", f"{m.total_spikes:.10g}"]
    vals += [f"{v:.10g}" for v in m.layer_spikes]
    if log_relations:
        stats = m.relation_stats or [(0.0, 0.0)] * len(m.layer_spikes)
        vals += [f"{mean:.10g}" for mean, _ in stats]
        vals += [f"{mx:.10g}" for _, mx in stats]
    return ",".join(vals)


def cmd_train(args: argparse.Namespace) -> int:
    conf = cfgmod.parse_config_file(args.config)
    conf = cfgmod.apply_overrides(conf, args.set or [])
    seed, seed_source = _resolve_seed(args.seed, conf)
    conf["train.seed"] = str(seed)
    cfg = cfgmod.build_train_config(conf)
    if args.workers is not None:
        cfg.workers = args.workers

    outdir = args.out or os.path.join(
        "runs", f"{os.path.splitext(os.path.basename(args.config))[0]}-seed{seed}")
    os.makedirs(outdir, exist_ok=True)

    # fail fast on the data spec and learn shapes for the checkpoint header
    train_set, _ = datamod.load_dataset(cfg.dataset)
    ckpt_meta = {
        "input_shape": "x".join(map(str, train_set.sample_shape)),
        "n_classes": train_set.n_classes,
        "T": cfg.T,
    }
    del train_set

    manifest = "\n".join([
        f"# spikegrad {__version__} run manifest",
        f"# seed-source: {seed_source}",
        "# artifacts: metrics_rep<i>.csv, model_rep<i>.ckpt, summary.json",
        "",
        cfgmod.dump_config(cfg),
    ])
    _atomic_write(os.path.join(outdir, "manifest.cfg"), manifest)
    print(f"seed: {seed} (source: {seed_source})")
    print(f"output dir: {outdir}")

    log_rel = cfg.gradscale.enabled and cfg.gradscale.log_relations
    rep_files: list[str] = []

    def rep_cb(rep: int):
        path = os.path.join(outdir, f"metrics_rep{rep}.csv")
        rep_files.append(path)
        stream = open(path, "w", encoding="utf-8")
        wrote_header = [False]

        def cb(metrics: trainmod.EpochMetrics, model) -> None:
            if not wrote_header[0]:
                stream.write(_metrics_header(len(model), log_rel) + "\n")
                wrote_header[0] = True
            stream.write(_metrics_line(metrics, log_rel) + "\n")
            stream.flush()
            save_checkpoint(os.path.join(outdir, f"model_rep{rep}.ckpt"), model,
                            meta=ckpt_meta)
        return cb

    try:
        agg = trainmod.run_repetitions(cfg, rep_cb=rep_cb)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    summary = {
        "tool": f"spikegrad {__version__}",
        "seed": seed,
        "seed_source": seed_source,
        "repetitions": cfg.repetitions,
        "accuracy": {"mean": agg.acc_mean, "max": agg.acc_max,
                     "per_run": [r.final_accuracy for r in agg.runs]},
        "spikes": {"mean": agg.spikes_mean, "max": agg.spikes_max,
                   "per_run": [r.final_spikes for r in agg.runs]},
        "run_seeds": [r.seed for r in agg.runs],
    }
    _atomic_write(os.path.join(outdir, "summary.json"),
                  json.dumps(summary, indent=2) + "\n")

    if not args.no_figures:
        from . import report
        for rep, run in enumerate(agg.runs):
            report.save_run_curves(run.epochs,
                                   os.path.join(outdir, f"curves_rep{rep}.png"))
        report.save_repetition_summary(agg, os.path.join(outdir, "summary.png"))

    print(f"accuracy: mean {agg.acc_mean:.2f}% max {agg.acc_max:.2f}%")
    print(f"spikes/inference: mean {agg.spikes_mean:.1f} max {agg.spikes_max:.1f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    if args.config:
        conf = cfgmod.apply_overrides(cfgmod.parse_config_file(args.config),
                                      args.set or [])
        cfg = cfgmod.build_train_config(conf)
        _, test_set = datamod.load_dataset(cfg.dataset)
    elif args.images and args.labels:
        test_set = datamod.load_idx(args.images, args.labels)
    else:
        raise ConfigError("eval needs --config or --images/--labels")
    expected = meta.get("input_shape")
    if expected and expected != "x".join(map(str, test_set.sample_shape)):
        raise CheckpointError(
            f"checkpoint expects input {expected}, dataset provides "
            f"{'x'.join(map(str, test_set.sample_shape))}")
    result = trainmod.evaluate(model, test_set, args.T,
                               workers=args.workers or 1)
    if args.json:
        print(json.dumps({
            "accuracy": result.accuracy,
            "spikes_per_inference": result.spikes_per_inference,
            "layer_spikes": result.layer_spikes,
            "n_samples": result.n_samples,
        }, indent=2))
    else:
        print(f"samples: {result.n_samples}")
        print(f"accuracy: {result.accuracy:.2f}%")
        print(f"spikes/inference: {result.spikes_per_inference:.2f}")
        for j, v in enumerate(result.layer_spikes):
            print(f"  layer {j}: {v:.2f}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    results = oracles.run_all()
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  [{r.seconds:6.2f}s]  {r.detail}")
        failures += 0 if r.passed else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    seed, seed_source = _resolve_seed(args.seed, {})
    os.makedirs(args.out, exist_ok=True)
    print(f"seed: {seed} (source: {seed_source})")
    if args.kind == "glyphs":
        train = datamod.gen_synthetic("glyphs", args.n_train, seed,
                                      classes=args.classes, size=args.size,
                                      shift=args.shift, noise=args.noise)
        test = datamod.gen_synthetic("glyphs", args.n_test, seed + 1,
                                     classes=args.classes, size=args.size,
                                     shift=args.shift, noise=args.noise)
        paths = {
            "data.train_images": os.path.join(args.out, "train-images.idx"),
            "data.train_labels": os.path.join(args.out, "train-labels.idx"),
            "data.test_images": os.path.join(args.out, "test-images.idx"),
            "data.test_labels": os.path.join(args.out, "test-labels.idx"),
        }
        datamod.write_idx_images(paths["data.train_images"], train.x)
        datamod.write_idx_labels(paths["data.train_labels"], train.y)
        datamod.write_idx_images(paths["data.test_images"], test.x)
        datamod.write_idx_labels(paths["data.test_labels"], test.y)
        lines = ["# generated by spikegrad gen-data", "data.kind = idx",
                 f"data.n_classes = {args.classes}"]
        lines += [f"{k} = {v}" for k, v in paths.items()]
        # kernel 4 / stride 2 / pad 1 halves even spatial sizes exactly
        lines += ["model.kind = conv", "model.channels = 8,16",
                  "model.kernel = 4", "model.stride = 2", "model.pad = 1",
                  "train.epochs = 20", f"train.seed = {seed}"]
        for p in paths.values():
            print(f"wrote {p}")
    else:
        lines = ["# generated by spikegrad gen-data", "data.kind = synthetic",
                 f"data.synthetic = {args.kind}",
                 f"data.n_train = {args.n_train}", f"data.n_test = {args.n_test}",
                 f"data.seed = {seed}", "model.kind = mlp",
                 f"train.seed = {seed}"]
    cfg_path = os.path.join(args.out, f"desk_{args.kind}.cfg")
    _atomic_write(cfg_path, "\n".join(lines) + "\n")
    print(f"wrote {cfg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikegrad",
        description="Train and inspect spiking networks with relation-scaled gradients.")
    parser.add_argument("--version", action="version", version=f"spikegrad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training protocol from a config")
    p_train.add_argument("--config", required=True, help="key=value config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--workers", type=int, default=None)
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.add_argument("--no-figures", action="store_true",
                         help="skip rendering PNG figures")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--config", default=None, help="config supplying data.* keys")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.add_argument("--images", default=None, help="IDX images file")
    p_eval.add_argument("--labels", default=None, help="IDX labels file")
    p_eval.add_argument("--T", type=int, default=4, help="timesteps per inference")
    p_eval.add_argument("--json", action="store_true", help="machine-readable output")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--workers", type=int, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the independent oracle suite")
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.set_defaults(fn=cmd_verify)

    p_gen = sub.add_parser("gen-data", help="generate a desk-scale dataset + config")
    p_gen.add_argument("--kind", choices=["glyphs", "blobs", "two_spirals"],
                       default="glyphs")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n-train", type=int, default=10000)
    p_gen.add_argument("--n-test", type=int, default=2000)
    p_gen.add_argument("--classes", type=int, default=10)
    p_gen.add_argument("--size", type=int, default=16)
    p_gen.add_argument("--shift", type=int, default=2,
                       help="max translation of glyph samples in pixels")
    p_gen.add_argument("--noise", type=float, default=0.3,
                       help="pixel noise sigma for glyph samples")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, CheckpointError, ShapeError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
