"""Command-line entry point: ``sdeicl <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

DEFAULT_OUT = "sdeicl_out"


class UsageError(Exception):
    pass


def _out_dir(args) -> str:
    d = args.out or os.environ.get("FMSD_OUT") or DEFAULT_OUT
    os.makedirs(d, exist_ok=True)
    return d


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .dataset import generate_shard

    out = _out_dir(args)
    path = os.path.join(out, args.name or f"{args.system}_seed{args.seed}.fmsd")
    man = generate_shard(path, args.system, args.params, args.ics, args.noises, seed=args.seed,
                         n_coarse=args.n_coarse, workers=args.workers)
    _say(f"wrote {man['records']} trajectories to {path} ({man['rejected']} blow-ups resampled)")
    return 0


def _model_config(args):
    from .model import ModelConfig

    return ModelConfig(n_layers=args.layers, n_heads=args.heads, d_model=args.d_model, d_ff=args.d_ff,
                       head_dim=args.head_dim, max_examples=args.K + 1)


def _load_shards(paths):
    from .dataset import read_shard

    if not paths:
        raise UsageError("at least one --shard is required")
    return [read_shard(p) for p in paths]


def _train_config(args, steps_per_epoch=None, epochs=None):
    from .train import TrainConfig

    return TrainConfig(epochs=epochs or args.epochs, steps_per_epoch=steps_per_epoch or args.steps_per_epoch,
                       batch_size=args.batch_size, K=args.K, prompt_probability=args.prompt_probability,
                       seed=args.seed, dropout=args.dropout, peak_lr=args.lr,
                       warmup_fraction=args.warmup_fraction, weight_decay=args.weight_decay,
                       clip_norm=args.clip)


def _logger(every):
    def log(step, lr, msd):
        if every and step % every == 0:
            _say(f"step {step} lr {lr:.3e} msd {msd:.6g}")
    return log


def cmd_train(args) -> int:
    from .model import Transformer, save_checkpoint
    from .train import resume, train_loop

    shards = _load_shards(args.shard)
    out = _out_dir(args)
    cfg = _train_config(args)
    if args.resume:
        res = resume(args.resume, shards, cfg, out_dir=out, log=_logger(args.log_every))
    else:
        model = Transformer(_model_config(args), seed=args.seed)
        res = train_loop(model, shards, cfg, out_dir=out, log=_logger(args.log_every))
    res.write_curve(os.path.join(out, "loss.csv"))
    meta = {"train": asdict(cfg), "normalizers": {s.manifest["system_id"]: s.manifest["stats"]
                                                  for s in shards if len(s)},
            "step": res.opt.step}
    final = os.path.join(out, "model.fmck")
    save_checkpoint(final, res.model, res.opt.tensors(), meta)
    _say(f"trained {len(res.curve)} steps; final msd {res.curve[-1][2]:.6g}; checkpoint {final}"
         if res.curve else f"nothing to do; checkpoint {final}")
    return 0


def cmd_finetune(args) -> int:
    from .train import finetune

    shards = _load_shards(args.shard)
    if args.n_traj:
        shards = [_head(s, args.n_traj) for s in shards]
    out = _out_dir(args)
    cfg = _train_config(args, steps_per_epoch=max(args.iters, 1), epochs=1)
    path = os.path.join(out, "finetuned.fmck")
    res = finetune(args.checkpoint, shards, args.iters, path, cfg, eval_every=args.eval_every,
                   log=_logger(args.log_every))
    res.write_curve(os.path.join(out, "finetune_loss.csv"))
    _say(f"fine-tuned {len(res.curve)} steps; checkpoint {path}")
    return 0


def _head(shard, n):
    from .dataset import Shard

    r = min(n, len(shard))
    return Shard(shard.manifest, shard.params[:r], shard.coarse[:r], shard.err[:r],
                 shard.agg_noise[:r], shard.index[:r])


def _corrector(args, system_id):
    from .correct import ModelCorrector, OracleCorrector, ZeroCorrector
    from .model import load_checkpoint

    if args.corrector == "oracle":
        return OracleCorrector()
    if args.corrector == "zero":
        return ZeroCorrector()
    if not args.checkpoint:
        raise UsageError("--checkpoint is required with --corrector model")
    model, _, meta = load_checkpoint(args.checkpoint)
    stats = meta.get("normalizers", {}).get(system_id)
    if stats is None:
        raise UsageError(f"checkpoint {args.checkpoint} has no normalisation statistics for {system_id}; "
                         f"fine-tune it on a {system_id} shard first")
    if model.config.max_examples < args.K + 1:
        raise UsageError(f"checkpoint supports at most {model.config.max_examples - 1} demos")
    return ModelCorrector(model, stats, args.prompt)


def cmd_eval(args) -> int:
    from .correct import correct_block
    from .dataset import make_eval_set
    from .metrics import MetricReport, error_histogram, runtime_report, write_histogram_csv, write_metric_csv

    out = _out_dir(args)
    corr = _corrector(args, args.system)
    ev = make_eval_set(args.system, args.n_eq, args.m, args.K, seed=args.seed)
    fixed = np.stack([correct_block(corr, ev.demos[e], ev.queries[e]).corrected for e in range(ev.n_eq)])
    reports = [MetricReport.compute(args.system, "coarse", ev.coarse, ev.fine, args.per_dim_max),
               MetricReport.compute(args.system, "corrected", fixed, ev.fine, args.per_dim_max)]
    write_metric_csv(os.path.join(out, "metrics.csv"), reports)
    for name, arr in (("coarse", ev.coarse), ("corrected", fixed)):
        edges, counts = error_histogram(arr, ev.fine, args.bins)
        write_histogram_csv(os.path.join(out, f"hist_{name}.csv"), edges, counts)
    for r in reports:
        _say(f"{r.method:10s} MAE {r.mae:.4g}  RMSE {r.rmse:.4g}  AMD {r.amd:.4g}  MAD {r.mad:.4g}")
    if args.runtime:
        rep = runtime_report(args.system, corr, args.n_eq, args.m, args.K, args.seed)
        rep.write_csv(os.path.join(out, "runtime.csv"))
        f, c, k = rep.normalized
        _say(f"normalized runtime: fine {f:.2f}  coarse {c:.2f}  coarse+correction {k:.2f}")
    return 0


def cmd_rollout(args) -> int:
    from .correct import rollout
    from .dataset import make_eval_set
    from .metrics import MetricReport, write_metric_csv
    from .systems import get_system

    out = _out_dir(args)
    system = get_system(args.system)
    N = system.horizon_steps_coarse
    corr = _corrector(args, args.system)
    ev = make_eval_set(system, args.n_eq, args.m, args.K, seed=args.seed, n_coarse=args.blocks * N)
    fixed = []
    for e in range(ev.n_eq):
        res = rollout(corr, ev.times, ev.coarse[e], ev.agg_noise[e], ev.demos[e], N, ev.fine[e])
        fixed.append(res.corrected)
        if e == 0:
            res.to_csv(os.path.join(out, "rollout.csv"))
    fixed = np.stack(fixed)
    reports = [MetricReport.compute(args.system, "coarse", ev.coarse, ev.fine),
               MetricReport.compute(args.system, "corrected", fixed, ev.fine)]
    write_metric_csv(os.path.join(out, "rollout_metrics.csv"), reports)
    for r in reports:
        _say(f"{r.method:10s} MAE {r.mae:.4g}  RMSE {r.rmse:.4g}  AMD {r.amd:.4g}  MAD {r.mad:.4g}")
    return 0


def cmd_convergence(args) -> int:
    from .integrate import coarse_error_scaling_probe, strong_order_probe
    from .systems import get_system

    out = _out_dir(args)
    if args.probe == "strong":
        res = strong_order_probe(args.system, tuple(args.h), args.M, args.method, seed=args.seed)
        path = os.path.join(out, f"convergence_{args.system}_{args.method}.csv")
        res.to_csv(path)
        slope = res.slope
    else:
        sys_ = get_system(args.system)
        params = sys_.defaults()
        x0 = None
        if args.system == "ou":
            x0 = np.array([params["mu"]])
        h, err, slope = coarse_error_scaling_probe(args.system, params, tuple(args.k), args.M, x0=x0,
                                                  seed=args.seed)
        path = os.path.join(out, f"coarse_scaling_{args.system}.csv")
        with open(path, "w") as fh:
            fh.write("h,mean_abs_err\n")
            for a, b in zip(h, err):
                fh.write(f"{a!r},{b!r}\n")
    _say(f"fitted slope {slope:.4f}; wrote {path}")
    return 0


def cmd_plot(args) -> int:
    from .plot import plot_export

    path = plot_export(args.csv, args.output, args.kind, args.width, args.height, args.logx, args.logy)
    _say(f"wrote {path}")
    return 0


# -- parser --------------------------------------------------------------------

class _Fmt(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, width=100, max_help_position=36)

    def _get_help_string(self, action):
        h = action.help or ""
        return h if "(default:" in h else super()._get_help_string(action)


def _common(p, seed=0):
    p.add_argument("--seed", type=int, default=seed, help="base seed for all random substreams")
    p.add_argument("--out", default=None, help="output directory (default: $FMSD_OUT, else ./sdeicl_out)")
    p.add_argument("--workers", type=int, default=1, help="worker processes; 1 is the determinism reference")
    p.add_argument("--config", default=None, help="JSON file of flag values; explicit flags win")
    p.add_argument("--dump-config", action="store_true", help="print the resolved flags as JSON and exit")


def _model_flags(p):
    p.add_argument("--layers", type=int, default=2, help="transformer blocks (full scale: 6)")
    p.add_argument("--heads", type=int, default=1, help="attention heads (full scale: 8)")
    p.add_argument("--d-model", type=int, default=64, help="model width (full scale: 256)")
    p.add_argument("--d-ff", type=int, default=128, help="feed-forward width (full scale: 1024)")
    p.add_argument("--head-dim", type=int, default=None, help="per-head width; default d_model/heads")


def _train_flags(p, lr=1e-3):
    p.add_argument("--shard", action="append", default=[], help="training shard (repeatable)")
    p.add_argument("--batch-size", type=int, default=8, help="samples per optimizer step")
    p.add_argument("--K", type=int, default=4, help="demos per sample")
    p.add_argument("--prompt-probability", type=float, default=0.0,
                   help="probability that a batch carries a text prompt")
    p.add_argument("--dropout", type=float, default=0.05, help="fraction of condition columns hidden")
    p.add_argument("--lr", type=float, default=lr, help="peak learning rate (full scale: 1e-4)")
    p.add_argument("--warmup-fraction", type=float, default=0.05, help="warmup share of all steps")
    p.add_argument("--weight-decay", type=float, default=1e-4, help="decoupled weight decay")
    p.add_argument("--clip", type=float, default=1.0, help="global gradient-norm clip (0 disables)")
    p.add_argument("--log-every", type=int, default=100, help="print the loss every this many steps")


def _eval_flags(p):
    p.add_argument("--system", default="ou", help="system id")
    p.add_argument("--checkpoint", default=None, help="model checkpoint (needed for --corrector model)")
    p.add_argument("--corrector", choices=("model", "oracle", "zero"), default="model",
                   help="source of error estimates")
    p.add_argument("--prompt", default=None, help="optional text prompt for the model")
    p.add_argument("--K", type=int, default=4, help="demos per equation")
    p.add_argument("--n-eq", type=int, default=25, help="equations (parameter draw + initial state)")
    p.add_argument("--m", type=int, default=40, help="noise realisations per equation")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdeicl", formatter_class=_Fmt,
                                 description="Coarse/fine SDE data, in-context error-correction "
                                             "model training, correction and evaluation.")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", formatter_class=_Fmt, help="simulate a training shard",
                       description="Simulate params x ics x noises coarse/fine pairs into one shard.")
    p.add_argument("--system", required=True, help="system id")
    p.add_argument("--params", type=int, default=20, help="parameter draws (full scale: 1000)")
    p.add_argument("--ics", type=int, default=10, help="initial states per draw (full scale: 10)")
    p.add_argument("--noises", type=int, default=40, help="noise realisations per state (full scale: 40)")
    p.add_argument("--n-coarse", type=int, default=None, help="coarse steps per path; default from registry")
    p.add_argument("--name", default=None, help="shard file name inside the output directory")
    _common(p, seed=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", formatter_class=_Fmt, help="train a model from scratch or resume",
                       description="Train the in-context model on one or more shards.")
    _train_flags(p)
    p.add_argument("--epochs", type=int, default=1, help="epochs (full scale: 100)")
    p.add_argument("--steps-per-epoch", type=int, default=500, help="steps per epoch (full scale: 10000)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _model_flags(p)
    _common(p, seed=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", formatter_class=_Fmt, help="adapt a checkpoint to a small shard",
                       description="Continue training a checkpoint for a fixed number of steps.")
    p.add_argument("--checkpoint", required=True, help="checkpoint to adapt")
    _train_flags(p, lr=1e-4)
    p.add_argument("--iters", type=int, default=1000, help="optimizer steps")
    p.add_argument("--n-traj", type=int, default=None, help="use only the first N trajectories of each shard")
    p.add_argument("--eval-every", type=int, default=100, help="evaluation hook period in steps")
    _common(p, seed=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", formatter_class=_Fmt, help="metrics of coarse vs corrected paths",
                       description="Score coarse and corrected paths against fine references.")
    _eval_flags(p)
    p.add_argument("--bins", type=int, default=50, help="histogram bins")
    p.add_argument("--per-dim-max", action="store_true", help="use the largest component instead of the norm")
    p.add_argument("--runtime", action="store_true", help="also time fine, coarse and corrected runs")
    _common(p, seed=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", formatter_class=_Fmt, help="long-horizon block correction",
                       description="Correct paths several blocks long with boundary alignment.")
    _eval_flags(p)
    p.add_argument("--blocks", type=int, default=3, help="blocks per path")
    _common(p, seed=1)
    p.set_defaults(func=cmd_rollout, n_eq=5, m=10)

    p = sub.add_parser("convergence", formatter_class=_Fmt, help="integrator order probes",
                       description="Strong-order probe against an exact solution, or the scaling of "
                                   "one-step coarse error with the stride.")
    p.add_argument("--probe", choices=("strong", "coarse"), default="strong", help="which probe")
    p.add_argument("--system", default="gbm", help="system id")
    p.add_argument("--method", choices=("em", "milstein"), default="em", help="integrator")
    p.add_argument("--M", type=int, default=2000, help="Monte Carlo realisations")
    p.add_argument("--h", type=float, nargs="+", default=[1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2],
                   help="step sizes for the strong probe")
    p.add_argument("--k", type=int, nargs="+", default=[2, 5, 10, 20, 50], help="strides for the coarse probe")
    _common(p, seed=0)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("plot", formatter_class=_Fmt, help="render a CSV as SVG",
                       description="Render a CSV written by this tool as an SVG chart.")
    p.add_argument("csv", help="input CSV")
    p.add_argument("--kind", choices=("auto", "line", "histogram"), default="auto", help="chart type")
    p.add_argument("--output", default=None, help="SVG path (default: CSV path with .svg)")
    p.add_argument("--width", type=int, default=640, help="width in px")
    p.add_argument("--height", type=int, default=400, help="height in px")
    p.add_argument("--logx", action="store_true", help="log10 x axis")
    p.add_argument("--logy", action="store_true", help="log10 y axis")
    p.set_defaults(func=cmd_plot, dump_config=False, config=None)
    return ap


_SKIP = {"func", "config", "dump_config"}


def resolve_args(argv) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if loaded.get("command") not in (None, args.command):
            ap.error(f"config file is for {loaded.get('command')!r}, not {args.command!r}")
        sub = [a for a in argv if a.startswith("--")]
        explicit = {a[2:].split("=")[0].replace("-", "_") for a in sub}
        for k, v in loaded.items():
            if k in _SKIP or k == "command":
                continue
            if not hasattr(args, k):
                ap.error(f"unknown key {k!r} in config file")
            if k not in explicit:
                setattr(args, k, v)
    return args


def config_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _SKIP}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = resolve_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "dump_config", False):
        print(json.dumps(config_dict(args), indent=1, sort_keys=True))
        return 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sdeicl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - one-line report for any runtime failure
        print(f"sdeicl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
