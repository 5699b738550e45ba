"""Command-line front end: ``pgop {eval,run,landscape,sweep,verify}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from pgop.errors import ConfigError, PgopError
from pgop.experiments import (
    ExperimentConfig,
    PRESETS,
    load_config,
    preset,
    run_experiment,
    run_landscape,
    run_sweep,
    verify,
)
from pgop.experiments.runner import build_env, initial_policy
from pgop.experiments.baselines import vi_optimum
from pgop.experiments.verify import write_report
from pgop.mdp import evaluate_policy
from pgop.policy import SoftmaxPolicy

log = logging.getLogger("pgop")


def _config_from_args(args, default_preset: str | None = None) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    if args.config:
        config = load_config(args.config)
    elif args.preset or default_preset:
        config = preset(args.preset or default_preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _print(doc) -> None:
    print(json.dumps(doc, indent=2))


def cmd_eval(args) -> int:
    config = _config_from_args(args, default_preset="op-reinforce")
    mdp = build_env(config)
    policy = SoftmaxPolicy.load(args.policy) if args.policy else initial_policy(config, mdp)
    ev = evaluate_policy(mdp, policy.probs())
    doc = {"j": ev.j, "vi_optimal_j": vi_optimum(mdp), "n_states": mdp.n_states, "n_actions": mdp.n_actions}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        np.savetxt(Path(args.out) / "values.csv", ev.v, delimiter=",")
        (Path(args.out) / "eval.json").write_text(json.dumps(doc, indent=2) + "\n")
    _print(doc)
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    out = args.out or config.output_dir
    run = run_experiment(config, out)
    _print({"final_j": run.final_j, "vi_optimal_j": run.j_star, "n_iters": config.n_iters,
            "out_dir": None if out is None else str(out)})
    return 0


def cmd_landscape(args) -> int:
    config = _config_from_args(args, default_preset="landscape")
    report = run_landscape(config, args.out, n_points=args.points)
    report.pop("rows")
    _print(report)
    return 0 if report["passed"] else 1


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    axes = {}
    if args.axes:
        text = Path(args.axes).read_text() if os.path.exists(args.axes) else args.axes
        try:
            axes = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--axes: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    summary = run_sweep(config, axes, args.out, jobs=args.jobs, baseline=args.baseline)
    _print({"baseline": summary["baseline"], "cells": summary["cells"]})
    return 0


def cmd_verify(args) -> int:
    selector = args.checks.split(",") if args.checks else "all"
    report = verify(selector)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_report(report, Path(args.out) / "verify.json")
    _print(report)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgop", description="Policy improvement and projection operators on tabular MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named experiment preset")
        p.add_argument("--out", help=out_help)
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("eval", help="evaluate a policy exactly")
    common(p)
    p.add_argument("--policy", help="policy JSON (defaults to the config's initial policy)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run one training experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("landscape", help="bound landscape on the four-room domain")
    common(p)
    p.add_argument("--points", type=int, default=101, help="grid size over t in [0, 1]")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("sweep", help="cross-product sweep over alpha, beta, seed and projection")
    common(p)
    p.add_argument("--axes", help='JSON object or file, e.g. {"alpha": [0.25, 1.0], "projection": ["kl", "alpha"]}')
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--baseline", choices=("vi", "class"), default="vi", help="optimum used for regret")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the identity and bound checks")
    p.add_argument("--out", help="directory for verify.json")
    p.add_argument("--checks", help="comma-separated subset of checks")
    p.add_argument("--jobs", type=int, default=1, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PGOP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PgopError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
