"""Command-line harness: gradient checks, toy training, benchmark, ERF maps.

Exit codes: 0 success, 1 check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import A2Error, UsageError


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference checks for all ops")
    p.add_argument("--filter", default="all", help="module, op, or module.op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")


def _add_train(sub):
    p = sub.add_parser("train", help="train a toy model on the grating task")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _add_bench(sub):
    p = sub.add_parser("bench", help="forward-pass scaling benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--res", default="64,128,256,512", help="comma-separated sizes")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", required=True, help="CSV path (appended)")
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")


def _add_erf(sub):
    p = sub.add_parser("erf", help="effective receptive field map")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint prefix")
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--out", required=True, help="output prefix (.pgm/.csv)")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)


def cmd_gradcheck(args) -> int:
    from .gradcheck import REL_TOL, run_gradcheck

    csv_text, rows, ok = run_gradcheck(args.filter, args.seed, args.trials)
    if args.out == "-":
        sys.stdout.write(csv_text)
    else:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    for name, _, worst in rows:
        status = "pass" if worst <= REL_TOL else "FAIL"
        print(f"{status} {name} max_rel_err={worst:.3e}")
    return 0 if ok else 1


def cmd_train(args) -> int:
    from .model import ModelConfig
    from .train import train_toy

    cfg = ModelConfig.from_json(args.config)
    result = train_toy(cfg, steps=args.steps, seed=args.seed, out_dir=args.out)
    print(
        f"done: initial_loss={result['initial_loss']:.4f} "
        f"final_test_acc={result['final_test_acc']:.4f}"
    )
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench, write_csv
    from .model import ModelConfig

    try:
        resolutions = [int(r) for r in args.res.split(",") if r]
    except ValueError:
        raise UsageError(f"bad --res list '{args.res}'")
    bad = [r for r in resolutions if r % 32 != 0]
    if bad:
        raise UsageError(f"resolutions must be multiples of 32, got {bad[0]}")
    cfg = ModelConfig.from_json(args.config)
    dtype = np.float32 if args.dtype == "f32" else np.float64
    rows, slopes = run_bench(cfg, resolutions, batch=args.batch, reps=args.reps, dtype=dtype)
    write_csv(args.out, rows)
    for name, slope in slopes.items():
        print(f"slope {name} {slope:.3f}")
    return 0


def cmd_erf(args) -> int:
    from .fixtures import load_checkpoint, write_pgm
    from .model import ModelConfig, build_model, erf_map, erf_support_fraction
    from .util import parallel_map

    cfg = ModelConfig.from_json(args.config)
    model = build_model(cfg, seed=args.seed)
    load_checkpoint(args.ckpt, model.store)

    def one(i: int):
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(i,)))
        x = rng.normal(size=(1, cfg.in_channels, args.res, args.res))
        return erf_map(model, x)

    maps = parallel_map(one, range(args.samples))
    avg = np.mean(maps, axis=0)
    peak = avg.max()
    if peak > 0:
        avg = avg / peak
    write_pgm(f"{args.out}.pgm", avg)
    np.savetxt(f"{args.out}.csv", avg, delimiter=",", fmt="%.8e")
    print(f"support_fraction {erf_support_fraction(avg):.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="a2",
        description="hybrid windowed-attention/selective-scan model harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gradcheck(sub)
    _add_train(sub)
    _add_bench(sub)
    _add_erf(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gradcheck": cmd_gradcheck,
        "train": cmd_train,
        "bench": cmd_bench,
        "erf": cmd_erf,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except A2Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
