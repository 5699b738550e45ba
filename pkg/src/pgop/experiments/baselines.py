"""Reference optima used for regret and convergence measurements."""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from pgop.mdp import TabularMdp, evaluate_policy, value_iteration
from pgop.policy import SHARED, SoftmaxPolicy, policy_gradient


def vi_optimum(mdp: TabularMdp) -> float:
    """Optimal return over all policies."""
    v, _ = value_iteration(mdp)
    return float(mdp.start_dist @ v)


def class_optimum(mdp: TabularMdp, mode: str, n_starts: int = 8, seed: int = 0):
    """Best return reachable inside the softmax class of ``mode``.

    Tabular softmax reaches the VI optimum in the limit. For shared logits the
    return is maximized by quasi-Newton ascent from several starts. Returns
    ``(j_best, policy_best)``; ``policy_best`` is None in tabular mode.
    """
    if mode != SHARED:
        return vi_optimum(mdp), None
    rng = np.random.default_rng(seed)
    template = SoftmaxPolicy.uniform(SHARED, mdp.n_states, mdp.n_actions)

    def neg_return(theta):
        policy = template.with_theta(theta)
        ev = evaluate_policy(mdp, policy.probs())
        return -ev.j, -policy_gradient(mdp, policy, ev)

    starts = [np.zeros(mdp.n_actions)] + [rng.normal(scale=2.0, size=mdp.n_actions) for _ in range(n_starts - 1)]
    best = None
    for theta0 in starts:
        res = minimize(neg_return, theta0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    return float(-best.fun), template.with_theta(best.x)
