"""One-shot runner for the library's identity, bound and fixed-point checks.

Each check returns its measured error and tolerance; the report is JSON.
Bound functions are looked up on the ``bounds`` module at call time so a
test can substitute a broken implementation and watch the report fail.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from pgop import bounds, trajectory
from pgop.errors import ConfigError
from pgop.experiments.instances import q_gap, random_instances, random_layered, random_mdp, random_policy
from pgop.experiments.runner import run_landscape
from pgop.mdp import build_four_room, evaluate_policy, optimal_policy, value_iteration
from pgop.operators import ImprovementSpec, ProjectionSpec, improve, project, projection_gradient
from pgop.policy import SHARED, TABULAR, SoftmaxPolicy, policy_gradient


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    wallclock_s: float = 0.0


def _result(name, measured, tolerance, ok=None, detail=""):
    ok = measured <= tolerance if ok is None else ok
    return CheckResult(name, bool(ok), float(measured), float(tolerance), detail)


def check_gradient_identity(n=25, seed=0):
    worst = 0.0
    for mdp, policy in random_instances(n, seed):
        ev = evaluate_policy(mdp, policy.probs())
        target = improve(ev, policy.probs(), ImprovementSpec.op_reinforce())
        grad = projection_gradient(target, ProjectionSpec.weighted_kl(), policy, weights=ev.occupancy * ev.v)
        worst = max(worst, float(np.max(np.abs(grad + policy_gradient(mdp, policy, ev)))))
    return _result("gradient_identity", worst, 1e-8, detail="weighted-KL projection gradient vs -policy gradient")


def finite_difference_gradient(fn, theta, step=1e-5):
    grad = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        grad[k] = (fn(theta + e) - fn(theta - e)) / (2 * step)
    return grad


def check_policy_gradient_fd(n=15, seed=1):
    worst = 0.0
    for mdp, policy in random_instances(n, seed):
        exact = policy_gradient(mdp, policy)
        fd = finite_difference_gradient(lambda th: evaluate_policy(mdp, policy.with_theta(th).probs()).j, policy.theta)
        worst = max(worst, float(np.max(np.abs(exact - fd)) / max(np.max(np.abs(fd)), 1e-12)))
    return _result("policy_gradient_fd", worst, 1e-5, detail="max-norm error relative to the largest entry, vs central differences")


def check_improvement_identities(n=20, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        mdp = random_layered(rng)
        ens = trajectory.enumerate_trajectories(mdp, random_policy(rng, mdp, TABULAR).probs(), 8)
        p, ret = ens.probs, ens.returns
        mean = p @ ret
        var = p @ (ret - mean) ** 2
        worst = max(worst, abs(trajectory.improve_trajectory(ens).j - mean * (1 + var / mean**2)))
        for f in (np.square, lambda x: np.exp(2 * x)):
            fr = f(ret)
            cov = p @ ((ret - mean) * (fr - p @ fr))
            worst = max(worst, abs(trajectory.improve_trajectory_transformed(ens, f).j - (mean + cov / (p @ fr))))
    return _result("improvement_identities", worst, 1e-10, detail="variance and covariance identities")


def check_operator_bound(n_pairs=2000, seed=3):
    rng = np.random.default_rng(seed)
    min_slack, form_gap, tight_err, cpi_violations = np.inf, 0.0, 0.0, 0
    instances = [random_mdp(rng) for _ in range(50)]
    for k in range(n_pairs):
        mdp = instances[k % len(instances)]
        mode = SHARED if k % 2 else TABULAR
        scale = float(rng.choice([0.5, 1.0, 3.0]))
        mu = random_policy(rng, mdp, mode, scale)
        pi = random_policy(rng, mdp, mode, scale)
        ev = evaluate_policy(mdp, mu.probs())
        j_pi = evaluate_policy(mdp, pi.probs()).j
        op = bounds.operator_lower_bound(ev, mu.probs(), pi.probs())
        min_slack = min(min_slack, j_pi - op)
        form_gap = max(form_gap, abs(op - bounds.kl_form_lower_bound(ev, mu.probs(), pi.probs())))
        if bounds.cpi_surrogate(ev, mu.probs(), pi.probs()) > j_pi + 1e-9:
            cpi_violations += 1
        if k < 200:
            at_mu = bounds.operator_lower_bound(ev, mu.probs(), mu.probs())
            grad = bounds.operator_lower_bound_grad(ev, mu.probs(), mu)
            pg = policy_gradient(mdp, mu, ev)
            tight_err = max(tight_err, abs(at_mu - ev.j) / abs(ev.j),
                            float(np.max(np.abs(grad - pg)) / max(np.max(np.abs(pg)), 1e-12)))
    return [
        _result("operator_bound_valid", max(0.0, -min_slack), 1e-9, ok=min_slack >= -1e-9,
                detail=f"min slack {min_slack:.3e} over {n_pairs} pairs"),
        _result("kl_form_matches_operator_bound", form_gap, 1e-9),
        _result("bound_tight_at_mu", tight_err, 1e-6, detail="value and gradient at pi = mu"),
        _result("cpi_surrogate_not_a_bound", float(cpi_violations), 1.0, ok=cpi_violations >= 1,
                detail=f"{cpi_violations} pairs where the CPI surrogate exceeds J(pi)"),
    ]


def check_trajectory_bounds(n_pairs=300, seed=4):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_pairs):
        mdp = random_layered(rng, max_layers=4)
        scale = float(rng.choice([0.5, 2.0]))
        mu_probs = random_policy(rng, mdp, TABULAR, scale).probs()
        pi_probs = random_policy(rng, mdp, TABULAR, scale).probs()
        ens = trajectory.enumerate_trajectories(mdp, mu_probs, 6)
        pi_ens = ens.with_probs(trajectory.probabilities_under(ens, mdp, pi_probs))
        worst = max(worst, trajectory.lower_bound_trajectory(ens, pi_ens.probs) - pi_ens.j,
                    trajectory.j_mu_bound(ens, pi_ens.prefix_probs) - pi_ens.j)
    return _result("trajectory_bounds_valid", max(worst, 0.0), 1e-10, ok=worst <= 1e-10,
                   detail=f"largest bound excess {worst:.3e}")


def fixed_point_residuals(mdp, improvement, projection, margins=(10, 20, 30)):
    """Projection-objective gradient norm at the composition's target, for
    tabular policies putting logit margin m on the VI-optimal actions."""
    _, actions = value_iteration(mdp)
    out = []
    for m in margins:
        logits = np.zeros((mdp.n_states, mdp.n_actions))
        logits[np.arange(mdp.n_states), actions] = m
        policy = SoftmaxPolicy(TABULAR, mdp.n_states, mdp.n_actions, logits.ravel())
        ev = evaluate_policy(mdp, policy.probs())
        target = improve(ev, policy.probs(), improvement)
        out.append(float(np.linalg.norm(projection_gradient(target, projection, policy))))
    return out


FIXED_POINT_COMPOSITIONS = (
    ("op_reinforce+weighted_kl", ImprovementSpec.op_reinforce(), ProjectionSpec.weighted_kl()),
    ("polynomial4+alpha0.25", ImprovementSpec.polynomial(4.0), ProjectionSpec.alpha_divergence(0.25)),
    ("polynomial2+alpha0.5", ImprovementSpec.polynomial(2.0), ProjectionSpec.alpha_divergence(0.5)),
)


def fixed_point_mdps(seed=5, n_random=5):
    rng = np.random.default_rng(seed)
    return [build_four_room()] + [random_mdp(rng) for _ in range(n_random)]


def check_fixed_points(seed=5):
    worst_final, monotone = 0.0, True
    for mdp in fixed_point_mdps(seed):
        for _, imp, proj in FIXED_POINT_COMPOSITIONS:
            res = fixed_point_residuals(mdp, imp, proj)
            monotone &= all(b < a or b == 0.0 for a, b in zip(res, res[1:]))
            worst_final = max(worst_final, res[-1])
    return _result("fixed_points", worst_final, 1e-4, ok=monotone and worst_final < 1e-4,
                   detail=f"monotone decrease over margins: {monotone}")


def greedification_mismatches(mdp, inv_alpha=64.0, n_iters=30):
    """States where the polynomial conditional's argmax differs from the VI
    greedy action, after tabular polynomial training from uniform."""
    imp, proj = ImprovementSpec.polynomial(inv_alpha), ProjectionSpec.weighted_kl()
    policy = SoftmaxPolicy.uniform(TABULAR, mdp.n_states, mdp.n_actions)
    for _ in range(n_iters):
        ev = evaluate_policy(mdp, policy.probs())
        policy = project(improve(ev, policy.probs(), imp), proj, policy)
    ev = evaluate_policy(mdp, policy.probs())
    target = improve(ev, policy.probs(), imp)
    greedy = np.argmax(optimal_policy(mdp), axis=1)
    return int(np.sum(target.touched & (np.argmax(target.conditionals, axis=1) != greedy)))


def gapped_mdps(n, seed=6, min_gap=1e-3):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        mdp = random_mdp(rng)
        v, _ = value_iteration(mdp)
        q = mdp.reward + mdp.discount * mdp.transition @ v
        if np.all(q_gap(q) > min_gap):
            out.append(mdp)
    return out


def check_greedification(n=10, seed=6):
    bad = sum(greedification_mismatches(mdp) for mdp in gapped_mdps(n, seed))
    return _result("greedification", float(bad), 0.0, detail="states whose argmax differs from VI")


def check_landscape():
    report = run_landscape()
    return [
        _result("landscape_bound_valid", max(report["max_bound_violation"], 0.0), 1e-9, ok=report["bound_valid"]),
        _result("landscape_tangent", max(report["anchor_value_error"], report["anchor_slope_error"]), 1e-5),
    ]


CHECKS = {
    "gradient_identity": check_gradient_identity,
    "policy_gradient_fd": check_policy_gradient_fd,
    "improvement_identities": check_improvement_identities,
    "operator_bound": check_operator_bound,
    "trajectory_bounds": check_trajectory_bounds,
    "fixed_points": check_fixed_points,
    "greedification": check_greedification,
    "landscape": check_landscape,
}


def verify(selector: str | list = "all") -> dict:
    """Run the selected checks (``"all"``, a name, or a list of names)."""
    names = list(CHECKS) if selector == "all" else ([selector] if isinstance(selector, str) else list(selector))
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; available: {sorted(CHECKS)}")
    results = []
    total_start = time.perf_counter()
    for name in names:
        start = time.perf_counter()
        try:
            out = CHECKS[name]()
        except Exception as exc:  # report content, not a crash
            out = CheckResult(name, False, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - start
        out = out if isinstance(out, list) else [out]
        for res in out:
            res.wallclock_s = elapsed / len(out)
        results.extend(out)
    return {
        "passed": all(r.passed for r in results),
        "total_wallclock_s": time.perf_counter() - total_start,
        "checks": [asdict(r) for r in results],
    }


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
