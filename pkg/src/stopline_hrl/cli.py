"""Command-line interface.

Subcommands: train, eval, ablate, attention.  All read the flat run
config; outputs are CSV files and checkpoint bundles.  Exit code 0 on
success, 1 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import RunConfig, load_run_config
from .harness import (VARIANTS, ablate, evaluate, export_attention_trace,
                      make_policy, train, train_flat)
from .agent import HRLAgent


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_run_config(path)


def _cmd_train(args) -> int:
    run = _load_config(args.config)
    if args.policy == "flat-ddqn":
        result = train_flat(run, out_dir=args.out)
    else:
        result = train(run, VARIANTS[args.policy], out_dir=args.out)
    print(result.log_csv, end="")
    print(f"checkpoint and log written to {args.out}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    run = _load_config(args.config)
    policy = make_policy(args.policy, run, checkpoint=args.checkpoint)
    res = evaluate(policy, run.env, run.reward, args.episodes, args.seed)
    rates = res.outcome_rates
    print("metric,value")
    for k, v in rates.items():
        print(f"{k},{v:.4f}")
    print(f"mean_ro,{res.mean_r_option:.6f}")
    print(f"mean_ra,{res.mean_r_action:.6f}")
    print(f"mean_steps,{res.mean_steps:.4f}")
    print(f"mean_unsmoothness,{res.mean_unsmoothness:.6f}")
    print(f"mean_unsafe,{res.mean_unsafe:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    run = _load_config(args.config)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    for name in names:
        if name not in VARIANTS:
            raise ValueError(f"unknown variant '{name}'")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    results = ablate(run, names, seeds=seeds)
    print("variant,seed,final_success")
    for name in names:
        for seed, result in zip(seeds, results[name]):
            print(f"{name},{seed},{result.final_success:.4f}")
    return 0


def _cmd_attention(args) -> int:
    run = _load_config(args.config)
    agent = HRLAgent.load(args.checkpoint, run.resolved_agent(),
                          seed=run.run_seed)
    csv_text = export_attention_trace(agent, run.env, args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    else:
        print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopline-hrl",
        description="Hierarchical DDQN stop-line behavior planner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy and write a checkpoint")
    p.add_argument("--config", help="flat key=value run config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--policy", default="hybrid-hrl",
                   choices=sorted(VARIANTS) + ["flat-ddqn"])
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy over seeded episodes")
    p.add_argument("--config", help="flat key=value run config file")
    p.add_argument("--checkpoint", help="agent checkpoint bundle")
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=1_000_000_000)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and compare HRL variants")
    p.add_argument("--config", help="flat key=value run config file")
    p.add_argument("--variants",
                   default="hrl0,hrl1,hrl2,hrl3,hybrid-hrl")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("attention", help="dump an attention trace CSV")
    p.add_argument("--config", help="flat key=value run config file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=_cmd_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
