"""gascraft command line: gen-data, train, eval, brute-force, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from .config import ConfigError, RunConfig


def _config(args) -> RunConfig:
    overrides = {}
    if args.evaluator:
        overrides["evaluator"] = args.evaluator
    if args.out:
        overrides["output_dir"] = args.out
    return RunConfig.load(args.config, seed=args.seed, overrides=overrides)


def _gen_data(args) -> int:
    from .harness import cmd_gen_data
    counts = cmd_gen_data(_config(args))
    print(f"wrote {counts['train']} train and {counts['test']} test instances")
    return 0


def _train(args) -> int:
    from .harness import cmd_train
    res = cmd_train(_config(args), resume=args.resume)
    print(f"trained {res.steps} steps; phase transition at step {res.transition_step}")
    print(f"metrics: {res.metrics_path}")
    print(f"checkpoints: {res.phase1_ckpt}, {res.final_ckpt}")
    return 0


def _eval(args) -> int:
    from .harness import cmd_eval
    cfg = _config(args)
    rows = cmd_eval(cfg, args.baseline, args.final, emit_dir=args.emit_dir)
    print(f"{'contract type':<18} {'initial':>8} {'optimized':>10} {'delta %':>8} {'fail(i/o)':>10}")
    for r in rows:
        print(f"{r.contract_type:<18} {r.baseline_mean:>8.4f} {r.optimized_mean:>10.4f} {r.delta_pct:>8.2f} "
              f"{r.baseline_failures:>4}/{r.optimized_failures:<4}")
    print(f"written to {cfg.output_dir / 'eval'}")
    return 0


def _brute_force(args) -> int:
    from .harness import SpaceTooLarge, cmd_brute_force
    try:
        res = cmd_brute_force(_config(args), args.instance, cap=args.cap, use_cache=not args.no_cache)
    except SpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(asdict(res), indent=1, sort_keys=True))
    return 0


def _report(args) -> int:
    from .harness import cmd_report
    summary = cmd_report(_config(args), args.metrics)
    print(json.dumps(asdict(summary), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gascraft", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config JSON (see configs/)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--evaluator", choices=("builtin", "external"), default=None)
    common.add_argument("--out", default=None, help="override output_dir")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write train/test CDM instances")
    p.set_defaults(func=_gen_data)

    p = sub.add_parser("train", parents=[common], help="two-phase training")
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/latest.ckpt")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", parents=[common], help="baseline vs optimized on the test split")
    p.add_argument("--baseline", default=None, help="phase-1 checkpoint (default: <out>/checkpoints/phase1.ckpt)")
    p.add_argument("--final", default=None, help="final checkpoint (default: <out>/checkpoints/final.ckpt)")
    p.add_argument("--emit-dir", default=None, help="write optimized .sol sources here")
    p.set_defaults(func=_eval)

    p = sub.add_parser("brute-force", parents=[common], help="exhaustive optimum for one instance")
    p.add_argument("instance", help="instance id, e.g. ES-7-000401")
    p.add_argument("--cap", type=int, default=None, help="maximum selections to enumerate")
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=_brute_force)

    p = sub.add_parser("report", parents=[common], help="plot trailing-mean training curves")
    p.add_argument("--metrics", default=None, help="metrics CSV (default: <out>/metrics.csv)")
    p.set_defaults(func=_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
