"""Command-line entry point.

Subcommands: train, evaluate, infer, gradcheck, ablate, gen-data.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, load_config, tiny_config
from .errors import ConfigError
from .pipeline import (ABLATION_AXES, ablate, evaluate, generate_dataset,
                       gradcheck_table, infer, train)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="model config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", type=Path, help="dataset directory")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--steps", type=int, help="training steps")
    p.add_argument("--checkpoint", type=Path, help="checkpoint path")


def _load_cfg(args) -> ModelConfig:
    return load_config(args.config) if args.config else ModelConfig()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tcvos")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a dataset directory")
    _add_common(p_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    _add_common(p_eval)
    p_eval.add_argument("--overlays", action="store_true",
                        help="write prediction overlay PNGs")

    p_infer = sub.add_parser("infer", help="write saliency and mask PNGs")
    _add_common(p_infer)
    p_infer.add_argument("--frames", type=Path, help="frames directory (default <data>/frames)")
    p_infer.add_argument("--flows", type=Path, help="flow directory (default <data>/flows)")
    p_infer.add_argument("--dump-isrm", action="store_true",
                         help="also write per-stream confidence heatmaps")

    p_gc = sub.add_parser("gradcheck", help="finite-difference check per component")
    _add_common(p_gc)
    p_gc.add_argument("--seeds", type=int, default=10, help="number of seeds per component")

    p_abl = sub.add_parser("ablate", help="run one ablation axis")
    _add_common(p_abl)
    p_abl.add_argument("--axis", choices=list(ABLATION_AXES) + ["all"], default="all")

    p_gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_common(p_gen)
    p_gen.add_argument("--count", type=int, default=4)
    p_gen.add_argument("--size", type=int, default=128)
    p_gen.add_argument("--frames-per-seq", type=int, default=8)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "train":
        if not args.data:
            raise ConfigError("train requires --data")
        cfg = _load_cfg(args)
        out = args.out or Path("runs")
        out.mkdir(parents=True, exist_ok=True)
        steps = args.steps if args.steps is not None else 300
        model, opt, log = train(cfg, args.data, steps=steps, seed=args.seed,
                                log_path=out / "runlog.csv")
        ckpt = args.checkpoint or out / "model.ckpt"
        save_checkpoint(ckpt, model, optimizer=opt, train_step=steps)
        print(f"trained {steps} steps; checkpoint -> {ckpt}")
        return 0

    if args.command == "evaluate":
        if not (args.checkpoint and args.data):
            raise ConfigError("evaluate requires --checkpoint and --data")
        model, _, _ = load_checkpoint(args.checkpoint)
        report = evaluate(model, args.data, out_dir=args.out, overlays=args.overlays)
        print(f"J {report.j_mean:.4f}  F {report.f_mean:.4f}  J&F {report.jf_mean:.4f}  "
              f"MAE {report.mae:.4f}  Fm {report.f_max:.4f}  Em {report.e_max:.4f}  "
              f"Sm {report.s_measure:.4f}")
        return 0

    if args.command == "infer":
        if not args.checkpoint:
            raise ConfigError("infer requires --checkpoint")
        frames = args.frames or (args.data / "frames" if args.data else None)
        flows = args.flows or (args.data / "flows" if args.data else None)
        if not (frames and flows):
            raise ConfigError("infer requires --frames/--flows or --data")
        model, _, _ = load_checkpoint(args.checkpoint)
        written = infer(model, frames, flows, args.out or Path("infer_out"),
                        dump_isrm=args.dump_isrm)
        print(f"wrote {len(written)} files")
        return 0

    if args.command == "gradcheck":
        cfg = load_config(args.config) if args.config else tiny_config()
        rows = gradcheck_table(cfg, seeds=range(args.seeds))
        failed = False
        for name, err, ok in rows:
            print(f"{name:28s} max_rel_err={err:.3e}  {'pass' if ok else 'FAIL'}")
            failed = failed or not ok
        return 1 if failed else 0

    if args.command == "ablate":
        if not args.data:
            raise ConfigError("ablate requires --data")
        out = args.out or Path("ablation")
        axes = list(ABLATION_AXES) if args.axis == "all" else [args.axis]
        base = load_config(args.config) if args.config else None
        for axis in axes:
            rows = ablate(axis, args.data, out / f"{axis}.csv", base=base,
                          steps=args.steps if args.steps is not None else 20,
                          seed=args.seed)
            print(f"{axis}: {len(rows)} variants -> {out / (axis + '.csv')}")
        return 0

    if args.command == "gen-data":
        if not args.out:
            raise ConfigError("gen-data requires --out")
        paths = generate_dataset(args.out, seed=args.seed, count=args.count,
                                 size=args.size, frames=args.frames_per_seq)
        print(f"wrote {len(paths)} sequences under {args.out}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
