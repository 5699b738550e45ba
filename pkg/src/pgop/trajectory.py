"""Exhaustive finite-horizon trajectory enumeration and trajectory-level operators.

Trajectories stop when they enter a terminal state; arrays are padded with -1
after that point. Ensembles are ordered lexicographically by
(s_0, a_0, s_1, a_1, ...).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from pgop.errors import DegenerateError, EnumerationLimitError, InvalidMdpError, PositivityError, SupportError
from pgop.mdp import TabularMdp
from pgop.operators.divergence import kl_divergence
from pgop.policy import SoftmaxPolicy

MAX_TRAJECTORIES = 10**7


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    horizon: int
    discount: float
    states: np.ndarray  # (N, H)
    actions: np.ndarray  # (N, H)
    rewards: np.ndarray  # (N, H), undiscounted
    probs: np.ndarray  # (N,)
    prefix_probs: np.ndarray  # (N, H): mass of trajectories sharing steps 0..h

    def __len__(self):
        return self.probs.size

    @property
    def returns(self) -> np.ndarray:
        return self.rewards @ (self.discount ** np.arange(self.horizon))

    @property
    def j(self) -> float:
        return float(self.probs @ self.returns)

    def with_probs(self, probs) -> TrajectoryEnsemble:
        """Same trajectories under another distribution; prefix masses are re-aggregated."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != self.probs.shape:
            raise ValueError("probability vector does not match the ensemble")
        return replace(self, probs=probs, prefix_probs=aggregate_prefixes(self.states, self.actions, probs))

    def sequence_keys(self) -> list:
        return [_key(s, a) for s, a in zip(self.states, self.actions)]


def _key(states, actions) -> str:
    steps = [f"{s}:{a}" for s, a in zip(states, actions) if s >= 0]
    return "|".join(steps)


def aggregate_prefixes(states: np.ndarray, actions: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Prefix masses by summing over trajectories sharing each prefix (rows must be sorted)."""
    n, horizon = states.shape
    out = np.empty((n, horizon))
    if n == 0:
        return out
    boundary = np.zeros(n, dtype=bool)
    boundary[0] = True
    for h in range(horizon):
        if n > 1:
            boundary[1:] |= (states[1:, h] != states[:-1, h]) | (actions[1:, h] != actions[:-1, h])
        starts = np.flatnonzero(boundary)
        group = np.cumsum(boundary) - 1
        out[:, h] = np.add.reduceat(probs, starts)[group]
    return out


def _policy_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    pi = policy.probs() if isinstance(policy, SoftmaxPolicy) else np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidMdpError("policy shape does not match the MDP")
    return pi


def enumerate_trajectories(mdp: TabularMdp, policy, horizon: int, limit: int = MAX_TRAJECTORIES) -> TrajectoryEnsemble:
    """All positive-probability trajectories of length ``horizon`` (or until termination)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    pi = _policy_matrix(mdp, policy)
    P, r, term = mdp.transition, mdp.reward, mdp.terminal
    starts = np.flatnonzero(mdp.start_dist > 0)
    cur = np.where(term[starts], -1, starts)
    prob = mdp.start_dist[starts].astype(float)
    hist_s, hist_a, hist_r, hist_p = [], [], [], []

    def take(idx):
        for hist in (hist_s, hist_a, hist_r, hist_p):
            for k, col in enumerate(hist):
                hist[k] = col[idx]

    for t in range(horizon):
        alive = cur >= 0
        branch = np.zeros((cur.size, mdp.n_actions), dtype=bool)
        branch[alive] = pi[cur[alive]] > 0
        counts = np.where(alive, branch.sum(axis=1), 1)
        if counts.sum() > limit:
            raise EnumerationLimitError(f"more than {limit} trajectories at step {t}")
        idx = np.repeat(np.arange(cur.size), counts)
        act = np.full(idx.size, -1)
        act[alive[idx]] = np.nonzero(branch)[1]
        take(idx)
        cur, prob = cur[idx], prob[idx]
        live = act >= 0
        step_r = np.zeros(idx.size)
        step_r[live] = r[cur[live], act[live]]
        prob = prob.copy()
        prob[live] *= pi[cur[live], act[live]]
        hist_s.append(cur.copy())
        hist_a.append(act)
        hist_r.append(step_r)
        hist_p.append(prob.copy())
        if t == horizon - 1:
            break
        nxt_mask = np.zeros((cur.size, mdp.n_states), dtype=bool)
        nxt_mask[live] = P[cur[live], act[live]] > 0
        counts = np.where(live, nxt_mask.sum(axis=1), 1)
        if counts.sum() > limit:
            raise EnumerationLimitError(f"more than {limit} trajectories at step {t}")
        idx = np.repeat(np.arange(cur.size), counts)
        nxt = np.full(idx.size, -1)
        nxt[live[idx]] = np.nonzero(nxt_mask)[1]
        take(idx)
        cur, act, prob, live = cur[idx], act[idx], prob[idx].copy(), live[idx]
        prob[live] *= P[cur[live], act[live], nxt[live]]
        # entering a terminal state ends the trajectory; its mass is final from here on
        cur = np.where(live & ~term[np.maximum(nxt, 0)], nxt, -1)
        # a trajectory that terminated keeps its (now complete) probability in later prefixes
    states = np.stack(hist_s, axis=1)
    actions = np.stack(hist_a, axis=1)
    prefix = np.stack(hist_p, axis=1)
    # trajectories that terminated carry the terminal transition in their total mass
    total = _total_probs(mdp, pi, states, actions)
    prefix = np.where(states >= 0, prefix, total[:, None])
    return TrajectoryEnsemble(horizon, mdp.discount, states, actions, np.stack(hist_r, axis=1), total, prefix)


def _total_probs(mdp: TabularMdp, pi: np.ndarray, states, actions) -> np.ndarray:
    """d0(s_0) prod pi(a_t|s_t) prod p(s_t+1|s_t,a_t), including a final move into a terminal state."""
    n, horizon = states.shape
    prob = mdp.start_dist[states[:, 0].clip(0)].copy()
    term_states = np.flatnonzero(mdp.terminal)
    for t in range(horizon):
        live = states[:, t] >= 0
        s, a = states[live, t], actions[live, t]
        prob[live] *= pi[s, a]
        if t + 1 < horizon:
            nxt_live = live & (states[:, t + 1] >= 0)
            prob[nxt_live] *= mdp.transition[states[nxt_live, t], actions[nxt_live, t], states[nxt_live, t + 1]]
            ended = live & (states[:, t + 1] < 0)
        else:
            ended = np.zeros(n, dtype=bool)
        if ended.any():
            prob[ended] *= mdp.transition[states[ended, t], actions[ended, t]][:, term_states].sum(axis=1)
    return prob


def probabilities_under(ensemble: TrajectoryEnsemble, mdp: TabularMdp, policy) -> np.ndarray:
    """Probabilities of the ensemble's trajectories under another policy.

    Raises when the other policy puts mass on trajectories outside the ensemble.
    """
    pi = _policy_matrix(mdp, policy)
    probs = _total_probs(mdp, pi, ensemble.states, ensemble.actions)
    if abs(probs.sum() - 1.0) > 1e-10:
        raise SupportError("policy has mass outside the ensemble's support")
    return probs


def truncation_bound(mdp: TabularMdp, horizon: int) -> float:
    """Upper bound on |J - J_H| from dropping rewards after ``horizon`` steps."""
    return mdp.discount ** horizon * mdp.r_max / (1.0 - mdp.discount)


# ---------------------------------------------------------------------------
# Operators over trajectory distributions


def improve_trajectory(ensemble: TrajectoryEnsemble) -> TrajectoryEnsemble:
    """Reweight each trajectory by its return: R(tau) pi(tau) / J(pi)."""
    return improve_trajectory_transformed(ensemble, lambda x: x, strict=False)


def improve_trajectory_transformed(ensemble: TrajectoryEnsemble, f, strict: bool = True) -> TrajectoryEnsemble:
    """Reweight by f(R(tau)); ``f`` must be positive on the observed returns.

    With ``strict=False`` zero values are allowed (those trajectories get zero
    weight) but negative ones are not.
    """
    returns = ensemble.returns
    if not strict and np.any(returns < 0):
        raise PositivityError("trajectory returns must be nonnegative")
    weight = np.asarray(f(returns), dtype=float)
    if np.any(weight < 0) or (strict and np.any(weight <= 0)) or not np.all(np.isfinite(weight)):
        raise PositivityError("transformed returns must be positive and finite")
    mass = float(ensemble.probs @ weight)
    if mass <= 0:
        raise DegenerateError("expected (transformed) return is zero")
    return ensemble.with_probs(ensemble.probs * weight / mass)


def kl_trajectories(p, q) -> float:
    return float(kl_divergence(p, q))


def lower_bound_trajectory(mu: TrajectoryEnsemble, pi_probs) -> float:
    """J(mu) (1 - KL(R mu || pi) + KL(R mu || mu)), a global lower bound on J(pi)."""
    target = improve_trajectory(mu)
    pi_probs = np.asarray(pi_probs, dtype=float)
    return mu.j * (1.0 - kl_trajectories(target.probs, pi_probs) + kl_trajectories(target.probs, mu.probs))


def j_mu_bound(mu: TrajectoryEnsemble, pi_prefix_probs) -> float:
    """sum_h gamma^h E_mu[r_h (1 + log(pi_h(tau_h) / mu_h(tau_h)))], a lower bound on J_H(pi)."""
    pi_prefix = np.asarray(pi_prefix_probs, dtype=float)
    weight = mu.probs[:, None] * mu.rewards * mu.discount ** np.arange(mu.horizon)
    used = weight > 0
    if np.any(used & (mu.prefix_probs <= 0)):
        raise SupportError("mu prefix mass vanishes on a rewarded prefix")
    with np.errstate(divide="ignore"):
        log_ratio = np.where(used, np.log(pi_prefix) - np.log(mu.prefix_probs), 0.0)
    return float(np.sum(weight * (1.0 + log_ratio)))


def shift_rewards(mdp: TabularMdp, shift: float) -> TabularMdp:
    """Add ``shift`` to every non-terminal reward.

    Makes returns positive when rewards are bounded below, but the shifted
    problem is not equivalent for return-weighted improvement: the shift acts
    like an extra KL pull toward the current policy and can slow learning.
    """
    reward = np.where(mdp.terminal[:, None], 0.0, mdp.reward + shift)
    return TabularMdp(mdp.transition, reward, mdp.start_dist, mdp.discount, mdp.terminal)


def write_ensemble_csv(path, ensemble: TrajectoryEnsemble) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("sequence", "probability", "return"))
        for key, p, ret in zip(ensemble.sequence_keys(), ensemble.probs, ensemble.returns):
            writer.writerow((key, repr(float(p)), repr(float(ret))))
