"""Operator CLI: synth, pretrain, finetune, evaluate, sweep.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training abort, 5 IO
error. Every run directory gets the resolved config and a training log;
re-running into an existing directory requires --force.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as dat
from .config import RunConfig
from .exceptions import ConfigError, DataError, TrainingAborted, MtsmaeError
from . import evaluation as ev
from . import training as tr

log = logging.getLogger("mtsmae")

_SWEEP_AXES = {
    "mask_ratio": ("pretrain", "mask_ratio", float),
    "pretrain_dec_layers": ("model", "pretrain_dec_layers", int),
    "finetune_dec_layers": ("model", "finetune_dec_layers", int),
    "input_len": ("model", "input_len", int),
}


def _setup_logging() -> None:
    level = os.environ.get("MTSMAE_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _prepare_out_dir(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; use --force")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return RunConfig.resolve(args.config, profile=args.profile, overrides=overrides)


def cmd_synth(args) -> int:
    import yaml
    with open(args.config) as fh:
        spec = yaml.safe_load(fh) or {}
    frame = dat.synth_generate(spec)
    dat.write_csv(frame, args.out)
    log.info("wrote %d rows x %d dims to %s", frame.n, frame.d_x, args.out)
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out_dir(args.out, args.force)
    cfg.dump(out / "config.yaml")
    train, _, _, _ = cfg.prepared_splits()
    model_cfg = cfg.model_config(train.d_x)
    windows = dat.make_windows(train, model_cfg.L_x, model_cfg.L_label, model_cfg.L_y)
    tlog = tr.TrainLog(out / "log.csv")
    ckpt, losses = tr.pretrain(model_cfg, cfg.pretrain_config(), windows, log=tlog)
    ckpt.save(out / "pretrain.ckpt")
    log.info("pretraining done: epoch losses %.4f -> %.4f",
             losses[0], losses[-1])
    return 0


def cmd_finetune(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out_dir(args.out, args.force)
    cfg.dump(out / "config.yaml")
    train, val, _, _ = cfg.prepared_splits()
    model_cfg = cfg.model_config(train.d_x)
    train_ws = dat.make_windows(train, model_cfg.L_x, model_cfg.L_label, model_cfg.L_y)
    val_ws = dat.make_windows(val, model_cfg.L_x, model_cfg.L_label, model_cfg.L_y)
    init = tr.Checkpoint.load(args.init) if args.init else None
    tlog = tr.TrainLog(out / "log.csv")
    _, best, history = tr.finetune(model_cfg, cfg.finetune_config(),
                                   train_ws, val_ws, init=init, log=tlog)
    best.save(out / "best.ckpt")
    tag = "pretrained init" if args.init else "from scratch"
    log.info("%s: best val loss %.4f at epoch %d", tag,
             min(h.get("val_loss", float("inf")) for h in history), best.epoch)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    if not args.init:
        raise ConfigError("evaluate needs --init <checkpoint>")
    out = _prepare_out_dir(args.out, args.force)
    cfg.dump(out / "config.yaml")
    _, _, test, _ = cfg.prepared_splits()
    model_cfg = cfg.model_config(test.d_x)
    ckpt = tr.Checkpoint.load(args.init)
    params = tr.load_finetune_params(ckpt, model_cfg)
    report = ev.rolling_evaluate(params, model_cfg, test)
    ev.emit_report(report, out)
    log.info("evaluated %d windows: MSE %.4f MAE %.4f",
             len(report.window_starts), report.agg_mse, report.agg_mae)
    return 0


def _sweep_one(packed):
    """One sweep value: pretrain, finetune from it, evaluate the test split."""
    raw, value_dir, axis, value = packed
    cfg = RunConfig(raw)
    out = Path(value_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    train, val, test, _ = cfg.prepared_splits()
    model_cfg = cfg.model_config(train.d_x)
    train_ws = dat.make_windows(train, model_cfg.L_x, model_cfg.L_label, model_cfg.L_y)
    val_ws = dat.make_windows(val, model_cfg.L_x, model_cfg.L_label, model_cfg.L_y)
    tlog = tr.TrainLog(out / "log.csv")
    ckpt, _ = tr.pretrain(model_cfg, cfg.pretrain_config(), train_ws, log=tlog)
    ckpt.save(out / "pretrain.ckpt")
    _, best, _ = tr.finetune(model_cfg, cfg.finetune_config(),
                             train_ws, val_ws, init=ckpt, log=tlog)
    best.save(out / "best.ckpt")
    params = tr.load_finetune_params(best, model_cfg)
    report = ev.rolling_evaluate(params, model_cfg, test)
    ev.emit_report(report, out)
    return axis, value, report.agg_mse, report.agg_mae


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    if args.axis not in _SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; "
                          f"choose from {sorted(_SWEEP_AXES)}")
    section, key, cast = _SWEEP_AXES[args.axis]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values: {exc}")
    if not values:
        raise ConfigError("--values is empty")
    out = _prepare_out_dir(args.out, args.force)
    cfg.dump(out / "config.yaml")

    jobs = []
    for v in values:
        raw = {**cfg.raw, section: {**cfg.raw[section], key: v}}
        jobs.append((raw, str(out / f"{args.axis}_{v}"), args.axis, v))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]

    with open(out / "summary.csv", "w") as fh:
        fh.write("axis,value,mse,mae\n")
        for axis, value, m1, m2 in results:
            fh.write(f"{axis},{value},{m1!r},{m2!r}\n")
    log.info("sweep over %s done: %d values", args.axis, len(values))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtsmae",
        description="Masked-autoencoder pretraining and forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=["desk", "full"], default="desk")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")
        if needs_out:
            p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("synth", help="generate a synthetic CSV from a spec file")
    p.add_argument("--config", required=True, help="synthetic spec YAML")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="forecast fine-tuning (no --init: from scratch)")
    common(p)
    p.add_argument("--init", default=None, help="pretraining checkpoint")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="rolling evaluation on the test split")
    common(p)
    p.add_argument("--init", required=True, help="fine-tuned checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the pipeline across one config axis")
    common(p)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except TrainingAborted as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 5
    except MtsmaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
