"""Single training runs and the four-room bound landscape."""
from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

import pgop
from pgop import bounds
from pgop.errors import ConfigError
from pgop.experiments.baselines import vi_optimum
from pgop.experiments.config import ExperimentConfig
from pgop.mdp import TabularMdp, evaluate_policy, load_mdp, optimal_policy
from pgop.operators.compose import TrainResult, train, write_curve_csv
from pgop.policy import SoftmaxPolicy

log = logging.getLogger(__name__)

CURVE_FILE = "curve.csv"
POLICY_FILE = "final_policy.json"
MANIFEST_FILE = "manifest.json"
TIMING_FILE = "timing.json"
PARTIAL_MARKER = "PARTIAL"


@dataclass
class RunResult:
    config: ExperimentConfig
    mdp: TabularMdp
    train: TrainResult
    j_star: float
    out_dir: Path | None

    @property
    def returns(self) -> np.ndarray:
        return self.train.returns

    @property
    def final_j(self) -> float:
        return float(self.train.returns[-1])


def build_env(config: ExperimentConfig) -> TabularMdp:
    env = dict(config.env)
    if env.get("kind") == "random_mdp":
        env.setdefault("seed", config.seed)
    return load_mdp(env)


def initial_policy(config: ExperimentConfig, mdp: TabularMdp) -> SoftmaxPolicy:
    policy = SoftmaxPolicy.uniform(config.policy_mode, mdp.n_states, mdp.n_actions)
    if config.init == "uniform":
        return policy
    rng = np.random.default_rng(config.seed)
    return policy.with_theta(rng.normal(scale=float(config.init.get("scale", 1.0)), size=policy.n_params))


def sampling_matrix(config: ExperimentConfig, mdp: TabularMdp):
    sp = config.sampling_policy
    if sp == "current":
        return None
    if sp == "optimal":
        return optimal_policy(mdp)
    with open(sp["path"]) as fh:
        doc = json.load(fh)
    if "probs" in doc:
        probs = np.asarray(doc["probs"], dtype=float)
    else:
        probs = SoftmaxPolicy.from_dict(doc).probs()
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigError("field 'sampling_policy': policy shape does not match the environment")
    return probs


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunResult:
    """Train per ``config``; when an output directory is given (argument or
    ``config.output_dir``) write the curve, final policy, manifest and timings."""
    out = out_dir if out_dir is not None else config.output_dir
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / PARTIAL_MARKER).write_text("run started\n")
    start = time.perf_counter()
    try:
        mdp = build_env(config)
        result = train(
            mdp,
            initial_policy(config, mdp),
            config.improvement,
            config.projection,
            config.n_iters,
            schedule=config.alpha_schedule,
            sampling=sampling_matrix(config, mdp),
        )
    except Exception as exc:
        if out is not None:
            (out / PARTIAL_MARKER).write_text(f"run aborted: {type(exc).__name__}: {exc}\n")
        raise
    runtime = time.perf_counter() - start
    j_star = vi_optimum(mdp)
    log.info("run finished: final J %.6g (VI optimum %.6g) in %.2fs", result.returns[-1], j_star, runtime)
    run = RunResult(config, mdp, result, j_star, out)
    if out is not None:
        write_curve_csv(out / CURVE_FILE, result.rows)
        result.policy.save(out / POLICY_FILE)
        manifest = {
            "config": config.to_dict(),
            "library_version": pgop.__version__,
            "numpy_version": np.__version__,
            "scipy_version": scipy.__version__,
            "python_version": platform.python_version(),
            "runtime_s": runtime,
            "final_j": run.final_j,
            "vi_optimal_j": j_star,
        }
        (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")
        (out / TIMING_FILE).write_text(json.dumps({"iteration_ms": result.wallclock_ms}) + "\n")
        (out / PARTIAL_MARKER).unlink()
    return run


def rerun_from_manifest(path, out_dir=None) -> RunResult:
    with open(path) as fh:
        doc = json.load(fh)
    return run_experiment(ExperimentConfig.from_dict(doc["config"]), out_dir)


# ---------------------------------------------------------------------------
# Landscape

LANDSCAPE_POINTS = 101
DERIVATIVE_STEP = 1e-4


def landscape_file(anchor: float) -> str:
    return f"landscape_t{anchor:g}.csv"


def _surrogate_values(mdp, anchor, ts):
    mu = bounds.segment_policy(mdp, anchor).probs()
    ev = evaluate_policy(mdp, mu)
    out = []
    for t in ts:
        pi = bounds.segment_policy(mdp, t).probs()
        out.append((evaluate_policy(mdp, pi).j, bounds.operator_lower_bound(ev, mu, pi), bounds.cpi_surrogate(ev, mu, pi)))
    return np.array(out)


def validate_landscape(mdp: TabularMdp, rows_by_anchor: dict, slack: float = 1e-9, tangent_tol: float = 1e-5) -> dict:
    """Bound validity on every row plus value and slope tangency at each anchor."""
    violation = max(row.op_bound - row.j for rows in rows_by_anchor.values() for row in rows)
    value_err, slope_err = 0.0, 0.0
    for anchor in rows_by_anchor:
        vals = _surrogate_values(mdp, anchor, [anchor - DERIVATIVE_STEP, anchor, anchor + DERIVATIVE_STEP])
        value_err = max(value_err, float(np.max(np.abs(vals[1, 1:] - vals[1, 0]))))
        slopes = (vals[2] - vals[0]) / (2 * DERIVATIVE_STEP)
        slope_err = max(slope_err, float(np.max(np.abs(slopes[1:] - slopes[0]))))
    return {
        "max_bound_violation": float(violation),
        "bound_valid": bool(violation <= slack),
        "anchor_value_error": value_err,
        "anchor_slope_error": slope_err,
        "tangent": bool(value_err <= tangent_tol and slope_err <= tangent_tol),
        "passed": bool(violation <= slack and value_err <= tangent_tol and slope_err <= tangent_tol),
    }


def run_landscape(config: ExperimentConfig | None = None, out_dir=None, n_points: int = LANDSCAPE_POINTS,
                  anchors=bounds.DEFAULT_ANCHORS) -> dict:
    """Write one landscape CSV per anchor and a validation report; returns the report."""
    env = config.env if config is not None else {"kind": "four_room"}
    if env.get("kind") != "four_room":
        raise ConfigError("the landscape is defined on the four-room environment only")
    mdp = load_mdp(env)
    grid = np.linspace(0.0, 1.0, n_points)
    rows = bounds.bound_landscape(mdp, grid, anchors)
    report = validate_landscape(mdp, rows)
    report["files"] = [landscape_file(a) for a in anchors]
    report["n_points"] = n_points
    out = out_dir if out_dir is not None else (config.output_dir if config is not None else None)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for anchor, anchor_rows in rows.items():
            bounds.write_landscape_csv(out / landscape_file(anchor), anchor_rows)
        (out / "validation.json").write_text(json.dumps(report, indent=2) + "\n")
    report["rows"] = rows
    return report


def iterations_to_fraction(returns, j_star: float, fraction: float = 0.9):
    """First iteration whose return reaches ``fraction * j_star``, or None."""
    hit = np.flatnonzero(np.asarray(returns) >= fraction * j_star)
    return int(hit[0]) if hit.size else None


def regret_profile(returns, j_star: float):
    """Cumulative regret sum_t (J* - J_t) over iterations 1..T and the slope of
    a linear fit to its second half."""
    regret = np.cumsum(j_star - np.asarray(returns, dtype=float)[1:])
    tail = np.arange(regret.size // 2, regret.size)
    slope = float(np.polyfit(tail, regret[tail], 1)[0]) if tail.size >= 2 else math.nan
    return float(regret[-1]), slope
