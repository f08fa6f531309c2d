"""Command-line entry point: ``drumrl {gen-data,train-surrogate,train-rl,eval,report}``.

Failures print one JSON line ``{"error": kind, "message": ...}`` to stderr
and exit nonzero (1 generic, 2 usage, 3 surrogate quality gate).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import pipeline
from .pipeline import PipelineError, RunConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise PipelineError("usage", message, 2)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--sequential", action="store_true",
                   help="bit-reproducible mode; workers are always stepped in order")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drumrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("gen-data", help="label, split and augment the synthetic dataset"))
    _common(sub.add_parser("train-surrogate", help="search and train one surrogate per burnup step"))
    p = sub.add_parser("train-rl", help="train an A2C or PPO drum controller")
    _common(p)
    p.add_argument("--algo", choices=["ppo", "a2c"], default="ppo")
    p.add_argument("--backing", choices=pipeline.BACKINGS, default="surrogate")
    p = sub.add_parser("eval", help="greedy episode from a checkpoint")
    _common(p)
    p.add_argument("--algo", choices=["ppo", "a2c"], default="ppo")
    p.add_argument("--backing", choices=pipeline.BACKINGS, default="surrogate")
    p.add_argument("--checkpoint", metavar="PATH", help="defaults to <out>/rl/<algo>/checkpoint")
    _common(sub.add_parser("report", help="plot data and a threshold summary"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args)
    if args.command == "gen-data":
        pipeline.gen_data(cfg)
    elif args.command == "train-surrogate":
        metrics = pipeline.train_surrogates(cfg)
        for step, m in metrics.items():
            print(f"{step.name} k_mae_pcm={m.k_mae:.2f} k_r2={m.k_r2:.5f} "
                  f"p_mae={m.p_mae:.2e} p_r2={m.p_r2:.5f}")
    elif args.command == "train-rl":
        res = pipeline.train_rl(cfg, args.algo, args.backing)
        last = res.rows[-1]
        print(f"{args.algo} epochs={len(res.rows)} reward_mean={last['reward_mean']:.6g} "
              f"keff_dev_mean={last['keff_dev_mean']:.6g} hptr_mean={last['hptr_mean']:.6g}")
    elif args.command == "eval":
        for r in pipeline.evaluate(cfg, args.algo, args.backing, args.checkpoint):
            angles = ",".join(str(r[f"theta{i}"]) for i in range(1, 7))
            print(f"YR{r['year']} angles={angles} keff={r['keff']:.5f} hptr={r['hptr']:.5f} "
                  f"keff_oracle={r['keff_oracle']:.5f}")
    elif args.command == "report":
        print(pipeline.report(cfg), end="")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except PipelineError as exc:
        kind, message, code = exc.kind, str(exc), exc.exit_code
    except (OSError, ValueError) as exc:
        kind, message, code = type(exc).__name__, str(exc), 1
    print(json.dumps({"error": kind, "message": message.replace("\n", " ")}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
