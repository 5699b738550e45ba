"""Seeded random problem instances for property checks."""
from __future__ import annotations

import numpy as np

from pgop.mdp import TabularMdp, build_layered_mdp, build_random_mdp
from pgop.policy import MODES, SoftmaxPolicy


def random_mdp(rng: np.random.Generator, max_states: int = 6, max_actions: int = 4,
               reward_sparsity: float = 0.0) -> TabularMdp:
    n_states = int(rng.integers(2, max_states + 1))
    n_actions = int(rng.integers(2, max_actions + 1))
    return build_random_mdp(n_states, n_actions, reward_sparsity, rng_seed=int(rng.integers(2**31)),
                            discount=float(rng.uniform(0.5, 0.95)))


def random_policy(rng: np.random.Generator, mdp: TabularMdp, mode: str, scale: float = 1.0) -> SoftmaxPolicy:
    policy = SoftmaxPolicy.uniform(mode, mdp.n_states, mdp.n_actions)
    return policy.with_theta(rng.normal(scale=scale, size=policy.n_params))


def random_instances(n: int, seed: int = 0, modes=MODES, **mdp_kw):
    """Yield ``(mdp, policy)`` for ``n`` random MDPs, once per policy mode."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        mdp = random_mdp(rng, **mdp_kw)
        for mode in modes:
            yield mdp, random_policy(rng, mdp, mode)


def random_layered(rng: np.random.Generator, max_layers: int = 4, max_width: int = 2, max_actions: int = 3,
                   ) -> TabularMdp:
    return build_layered_mdp(int(rng.integers(1, max_layers + 1)), int(rng.integers(1, max_width + 1)),
                             int(rng.integers(2, max_actions + 1)), rng_seed=int(rng.integers(2**31)),
                             discount=float(rng.uniform(0.5, 1.0)))


def q_gap(q: np.ndarray) -> np.ndarray:
    """Per-state gap between the best and second-best action value."""
    top = np.sort(q, axis=1)
    return top[:, -1] - top[:, -2]
