"""Command-line entry points for training runs and studies.

Every subcommand prints a JSON result on stdout and exits 0; domain errors
print a JSON object {"error", "message"} on stderr and exit nonzero, so
scripts can branch on the exit code and still parse the reason.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigurationError, HarnessError, ReinitLabError
from .harness import (
    DataConfig,
    DistillConfig,
    RunConfig,
    Seeds,
    grid_search,
    noise_study,
    online_sim,
    run_experiment,
    stage_sweep,
)
from .nn import NetworkSpec
from .reinit import ReinitSpec
from .runio import read_metrics

DEFAULT_LR_GRID = (0.005, 0.01, 0.03, 0.05, 0.1)
DEFAULT_WD_GRID = (0.0, 0.0001, 0.0005, 0.001, 0.005)
DEFAULT_T_VALUES = (1, 2, 5, 10, 20, 25)

REINIT_TOKENS = {
    "none": "none",
    "sp": "shrink_perturb",
    "layerwise": "layer_wise",
    "full": "full",
}


def default_network() -> NetworkSpec:
    return NetworkSpec(input_dim=50, hidden_dims=(256, 128), num_classes=10, block_boundaries=(1, 2))


def add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring RunConfig")
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float, help="weight decay (takes effect in setting dcw)")
    p.add_argument("--stages", type=int, metavar="T")
    p.add_argument("--reinit", choices=sorted(REINIT_TOKENS))
    p.add_argument("--lambda", dest="lam", type=float, help="shrink factor for sp")
    p.add_argument("--gamma", type=float, help="perturb factor for sp")
    p.add_argument("--distill-beta", type=float, help="KL weight; 0 disables distillation")
    p.add_argument("--noise-q", type=float, help="label noise fraction on the train split")
    p.add_argument("--setting", choices=["none", "d", "dc", "dcw"])
    p.add_argument("--seed", type=int, help="base seed; derives init/data/noise/shuffle")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--epochs", type=int, help="total epoch budget N")


def build_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = RunConfig.from_dict(json.load(fh))
    else:
        cfg = RunConfig(network=default_network())
    if args.seed is not None:
        cfg = replace(
            cfg, seeds=Seeds(args.seed, args.seed + 1, args.seed + 2, args.seed + 3)
        )
    if args.lr is not None:
        cfg = replace(cfg, lr=args.lr)
    if args.wd is not None:
        cfg = replace(cfg, weight_decay=args.wd)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.setting is not None:
        cfg = replace(cfg, setting=args.setting)
    if args.noise_q is not None:
        cfg = replace(cfg, noise_q=args.noise_q)
    if args.stages is not None:
        cfg = replace(cfg, stages=args.stages, reinit=_restage(cfg.reinit, cfg.network, args.stages))
    if args.distill_beta is not None:
        cfg = replace(
            cfg, distill=DistillConfig(enabled=args.distill_beta > 0, beta=args.distill_beta)
        )
    if args.reinit is not None:
        kind = REINIT_TOKENS[args.reinit]
        if kind == "shrink_perturb":
            rspec = ReinitSpec(kind, lam=args.lam, gamma=args.gamma)
        elif kind == "layer_wise":
            k = cfg.network.num_blocks
            if cfg.stages % k != 0:
                raise ConfigurationError(
                    f"layerwise needs stages divisible by the {k} network blocks, got {cfg.stages}"
                )
            rspec = ReinitSpec(kind, blocks=k, repeats=cfg.stages // k)
        else:
            rspec = ReinitSpec(kind)
        cfg = replace(cfg, reinit=rspec)
    elif args.lam is not None or args.gamma is not None:
        if cfg.reinit.kind != "shrink_perturb":
            raise ConfigurationError("--lambda/--gamma require --reinit sp")
        cfg = replace(cfg, reinit=ReinitSpec("shrink_perturb", lam=args.lam, gamma=args.gamma))
    return cfg


def _restage(rspec: ReinitSpec, network: NetworkSpec, stages: int) -> ReinitSpec:
    """Keep a layer_wise spec consistent when the stage count changes."""
    if rspec.kind != "layer_wise":
        return rspec
    k = network.num_blocks
    if stages % k != 0:
        raise ConfigurationError(f"stages {stages} not divisible by {k} blocks")
    return ReinitSpec("layer_wise", blocks=k, repeats=stages // k)


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> dict:
    cfg = build_config(args)
    res = run_experiment(cfg, out_dir=args.out)
    if res.failed:
        raise HarnessError(f"run {res.run_id} diverged: {res.failure}")
    return {
        "run_id": res.run_id,
        "run_dir": str(res.run_dir),
        "best_val_acc": res.best_val_acc,
        "best_test_acc": res.best_test_acc,
        "best_epoch": res.best_epoch,
        "total_steps": res.total_steps,
        "failed": res.failed,
    }


def cmd_grid(args) -> dict:
    cfg = build_config(args)
    grid = grid_search(cfg, _floats(args.lrs), _floats(args.wds), out_dir=args.out)
    return {
        "chosen_lr": grid.chosen[0],
        "chosen_wd": grid.chosen[1],
        "val_acc": grid.chosen_val_acc,
        "test_acc": grid.chosen_test_acc,
        "robustness": grid.robustness,
        "cells": sorted(
            (v for v in grid.cells.values()), key=lambda v: (v["lr"], v["wd"])
        ),
    }


def cmd_stages(args) -> dict:
    cfg = build_config(args)
    rows = stage_sweep(cfg, _ints(args.t_values), out_dir=args.out)
    return {"sweep": rows}


def cmd_noise(args) -> dict:
    cfg = build_config(args)
    rows = noise_study(cfg, _floats(args.q_values), args.methods.split(","), out_dir=args.out)
    return {"study": rows}


def cmd_online(args) -> dict:
    cfg = build_config(args)
    curves = online_sim(cfg, args.chunks, tuple(args.methods.split(",")), out_dir=args.out)
    return {"curves": curves}


def cmd_inspect(args) -> dict:
    run_dir = Path(args.out) / args.run_id
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigurationError(f"no run named {args.run_id!r} under {args.out}")
    with open(config_path) as fh:
        config = json.load(fh)
    metrics = read_metrics(run_dir / "metrics.jsonl")
    best = max(metrics, key=lambda m: (m["val_acc"], -m["epoch"])) if metrics else None
    return {
        "run_id": args.run_id,
        "config": config,
        "epochs_logged": len(metrics),
        "last": metrics[-1] if metrics else None,
        "best": best,
    }


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reinit-lab",
        description="Staged training with re-initialization between stages",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="one training run")
    add_common_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("grid", help="LR x WD grid search")
    add_common_flags(p)
    p.add_argument("--lrs", default=",".join(map(str, DEFAULT_LR_GRID)))
    p.add_argument("--wds", default=",".join(map(str, DEFAULT_WD_GRID)))
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("stages", help="stage-count sweep at equal compute")
    add_common_flags(p)
    p.add_argument("--t-values", default=",".join(map(str, DEFAULT_T_VALUES)))
    p.set_defaults(fn=cmd_stages)

    p = sub.add_parser("noise", help="label-noise study")
    add_common_flags(p)
    p.add_argument("--q-values", default="0,0.2,0.4")
    p.add_argument("--methods", default="standard,sp,sp_distill")
    p.set_defaults(fn=cmd_noise)

    p = sub.add_parser("online", help="sequential-chunk warm-start simulation")
    add_common_flags(p)
    p.add_argument("--chunks", type=int, default=5)
    p.add_argument("--methods", default="scratch,warm_start,shrink_perturb")
    p.set_defaults(fn=cmd_online)

    p = sub.add_parser("inspect", help="summarize a finished run")
    p.add_argument("run_id")
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        result = args.fn(args)
    except ReinitLabError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
