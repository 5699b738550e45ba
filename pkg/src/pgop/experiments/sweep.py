"""Cross-product sweeps over alpha, beta, seeds and projections."""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from pgop.errors import ConfigError
from pgop.experiments.baselines import class_optimum, vi_optimum
from pgop.experiments.config import ExperimentConfig
from pgop.experiments.runner import build_env, iterations_to_fraction, regret_profile, run_experiment
from pgop.operators.improvement import ImprovementSpec, MPO_EXP, PPO_EXP
from pgop.operators.projection import ALPHA, ProjectionSpec, REVERSE_KL_CLIPPED

MAX_CELLS = 10**4
AXES = ("projection", "alpha", "beta", "seed")
SUMMARY_FILE = "summary.json"
BASELINES = ("vi", "class")


def _projection_from_axis(value, base: ProjectionSpec) -> ProjectionSpec:
    if isinstance(value, dict):
        return ProjectionSpec.from_dict(value)
    if value in ("kl", "weighted_kl"):
        return ProjectionSpec.weighted_kl()
    if value in ("alpha", "alpha_div"):
        return ProjectionSpec.alpha_divergence(base.alpha, solver="minka", steps=200)
    raise ConfigError(f"unknown projection axis value {value!r}")


def cell_config(base: ExperimentConfig, params: dict) -> ExperimentConfig:
    """Apply one sweep cell. An alpha value sets Polynomial(1/alpha) and is
    matched by an alpha-divergence projection when one is used."""
    improvement, projection, seed = base.improvement, base.projection, base.seed
    if "projection" in params:
        projection = _projection_from_axis(params["projection"], projection)
    if "alpha" in params:
        alpha = float(params["alpha"])
        improvement = ImprovementSpec.polynomial(1.0 / alpha)
        if projection.kind == ALPHA:
            projection = replace(projection, alpha=alpha)
    if "beta" in params:
        beta = float(params["beta"])
        if improvement.kind in (PPO_EXP, MPO_EXP):
            improvement = replace(improvement, beta=beta)
        if projection.kind == REVERSE_KL_CLIPPED:
            projection = replace(projection, beta=beta)
    if "seed" in params:
        seed = int(params["seed"])
    return ExperimentConfig(base.env, base.policy_mode, improvement, projection, base.n_iters,
                            base.alpha_schedule, base.sampling_policy, base.init, seed, None)


def expand_axes(axes: dict | None) -> list:
    axes = dict(axes or {})
    unknown = set(axes) - set(AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)}")
    names = [a for a in AXES if a in axes]
    lists = [list(axes[a]) for a in names]
    if any(not values for values in lists):
        raise ConfigError("sweep axes must be non-empty lists")
    n_cells = math.prod(len(v) for v in lists)
    if n_cells > MAX_CELLS:
        raise ConfigError(f"sweep has {n_cells} cells, above the limit of {MAX_CELLS}")
    return [dict(zip(names, combo)) for combo in itertools.product(*lists)]


def _run_cell(task):
    config_doc, out_dir = task
    run = run_experiment(ExperimentConfig.from_dict(config_doc), out_dir)
    return run.returns.tolist()


def run_sweep(base: ExperimentConfig, axes: dict | None, out_dir=None, jobs: int = 1, baseline: str = "vi") -> dict:
    """Run every cell of the axis cross-product and summarize.

    Regret and the 90% threshold are measured against ``baseline``: the
    value-iteration optimum (``"vi"``) or the best return in the policy class
    (``"class"``).
    """
    if baseline not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}")
    cells = expand_axes(axes)
    configs = [cell_config(base, params) for params in cells]
    out = Path(out_dir) if out_dir is not None else None
    dirs = [None if out is None else str(out / f"cell_{k:04d}") for k in range(len(cells))]
    tasks = [(cfg.to_dict(), d) for cfg, d in zip(configs, dirs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            curves = list(pool.map(_run_cell, tasks))
    else:
        curves = [_run_cell(task) for task in tasks]

    env_cache = {}
    summary_cells = []
    for params, cfg, curve, d in zip(cells, configs, curves, dirs):
        key = (json.dumps(cfg.env, sort_keys=True), cfg.seed, cfg.policy_mode)
        if key not in env_cache:
            mdp = build_env(cfg)
            env_cache[key] = class_optimum(mdp, cfg.policy_mode)[0] if baseline == "class" else vi_optimum(mdp)
        j_star = env_cache[key]
        cumulative, slope = regret_profile(curve, j_star)
        summary_cells.append({
            "params": params,
            "dir": d,
            "j_star": j_star,
            "final_j": curve[-1],
            "iterations_to_90": iterations_to_fraction(curve, j_star),
            "cumulative_regret": cumulative,
            "regret_slope": slope,
        })
    summary = {"base": base.to_dict(), "axes": axes or {}, "baseline": baseline, "cells": summary_cells}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n")
    return summary
