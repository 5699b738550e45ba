"""Global lower bound on the expected return, the CPI linear surrogate, and the
one-dimensional bound landscape on the four-room domain."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from pgop.errors import ConfigError, SupportError
from pgop.mdp import TabularMdp, evaluate_policy, PolicyEval
from pgop.operators.divergence import kl_divergence
from pgop.operators.improvement import ImprovementSpec, improve
from pgop.policy import SHARED, SoftmaxPolicy


def _log_ratio(evaluation: PolicyEval, mu, pi):
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    weight = evaluation.occupancy[:, None] * evaluation.q * mu
    relevant = weight > 0
    if np.any((mu <= 0) & (pi > 0) & (evaluation.occupancy[:, None] > 0)):
        raise SupportError("support of mu must cover that of pi")
    # pi = 0 where mu has weight gives log 0 = -inf, a valid (vacuous) bound
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(relevant, np.log(pi) - np.log(mu), 0.0)
    return weight, log_ratio


def operator_lower_bound(evaluation: PolicyEval, mu, pi) -> float:
    """J(mu) + sum_s d_mu(s) sum_a Q_mu(s,a) mu(a|s) log(pi(a|s) / mu(a|s)) <= J(pi)."""
    weight, log_ratio = _log_ratio(evaluation, mu, pi)
    return evaluation.j + float(np.sum(weight * log_ratio))


def operator_lower_bound_grad(evaluation: PolicyEval, mu, policy: SoftmaxPolicy) -> np.ndarray:
    """Gradient of the operator bound in ``policy``'s parameters."""
    weight = evaluation.occupancy[:, None] * evaluation.q * np.asarray(mu, dtype=float)
    return policy.pullback(np.where(weight > 0, weight / policy.probs(), 0.0))


@dataclass(frozen=True)
class KlBoundTerms:
    value: float
    mean_value: float  # sum_s d_mu(s) V_mu(s)
    div_to_mu: float  # D_mu(I mu || mu)
    div_to_pi: float  # D_mu(I mu || pi)

    @property
    def implies_improvement(self) -> bool:
        return self.div_to_pi < self.div_to_mu


def kl_form_terms(evaluation: PolicyEval, mu, pi) -> KlBoundTerms:
    target = improve(evaluation, mu, ImprovementSpec.op_reinforce())
    touched = target.touched & (target.state_weights > 0)
    w = target.state_weights[touched]
    cond = target.conditionals[touched]
    div_mu = float(w @ kl_divergence(cond, np.asarray(mu)[touched]))
    div_pi = float(w @ kl_divergence(cond, np.asarray(pi)[touched]))
    mean_value = float(evaluation.occupancy @ evaluation.v)
    return KlBoundTerms(evaluation.j + mean_value * (div_mu - div_pi), mean_value, div_mu, div_pi)


def kl_form_lower_bound(evaluation: PolicyEval, mu, pi) -> float:
    """J(mu) + E_mu[V_mu] (D_mu(I mu || mu) - D_mu(I mu || pi)); same value as the operator bound."""
    return kl_form_terms(evaluation, mu, pi).value


def cpi_surrogate(evaluation: PolicyEval, mu, pi) -> float:
    """Linear CPI expansion J(mu) + sum_s d_mu(s) sum_a Q_mu(s,a) (pi - mu). Not a bound."""
    delta = np.asarray(pi, dtype=float) - np.asarray(mu, dtype=float)
    return evaluation.j + float(np.sum(evaluation.occupancy[:, None] * evaluation.q * delta))


def cpi_surrogate_grad(evaluation: PolicyEval, policy: SoftmaxPolicy) -> np.ndarray:
    return policy.pullback(evaluation.occupancy[:, None] * evaluation.q)


@dataclass(frozen=True)
class BoundReport:
    j_mu: float
    j_pi: float
    operator_bound: float
    cpi_surrogate: float

    @property
    def gap_operator(self) -> float:
        return self.j_pi - self.operator_bound

    @property
    def gap_cpi(self) -> float:
        return self.j_pi - self.cpi_surrogate


def bound_report(mdp: TabularMdp, mu, pi, evaluation: PolicyEval | None = None) -> BoundReport:
    ev = evaluation if evaluation is not None else evaluate_policy(mdp, mu)
    return BoundReport(
        j_mu=ev.j,
        j_pi=evaluate_policy(mdp, pi).j,
        operator_bound=operator_lower_bound(ev, mu, pi),
        cpi_surrogate=cpi_surrogate(ev, mu, pi),
    )


# ---------------------------------------------------------------------------
# Landscape on the segment [0.1, 0.8 t, 0.8 (1 - t), 0.1] (down, left, up, right)

DEFAULT_ANCHORS = (0.2, 0.5, 0.8)
ZERO_CLAMP = 1e-12
LANDSCAPE_HEADER = ("t", "anchor_t", "J", "op_bound", "cpi_surrogate")


def segment_probs(t: float) -> np.ndarray:
    return np.array([0.1, 0.8 * t, 0.8 * (1.0 - t), 0.1])


def segment_policy(mdp: TabularMdp, t: float) -> SoftmaxPolicy:
    return SoftmaxPolicy.from_probs(SHARED, segment_probs(t), n_states=mdp.n_states, floor=ZERO_CLAMP)


@dataclass(frozen=True)
class LandscapeRow:
    t: float
    anchor_t: float
    j: float
    op_bound: float
    cpi_surrogate: float

    def as_tuple(self):
        return (self.t, self.anchor_t, self.j, self.op_bound, self.cpi_surrogate)


def bound_landscape(mdp: TabularMdp, t_grid, anchors=DEFAULT_ANCHORS) -> dict:
    """For each anchor t0, J and both surrogates (taken around the policy at t0)
    along the segment. Returns ``{anchor_t: [LandscapeRow, ...]}``."""
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise ConfigError("t_grid is empty")
    if mdp.n_actions != 4:
        raise ConfigError("the landscape segment needs a four-action MDP")
    if any(not 0.0 <= t <= 1.0 for t in list(t_grid) + list(anchors)):
        raise ConfigError("t values must lie in [0, 1]")
    probs = {t: segment_policy(mdp, t).probs() for t in set(t_grid) | set(anchors)}
    returns = {t: evaluate_policy(mdp, p).j for t, p in probs.items()}
    out = {}
    for t0 in anchors:
        mu = probs[t0]
        ev = evaluate_policy(mdp, mu)
        out[t0] = [
            LandscapeRow(t, t0, returns[t], operator_lower_bound(ev, mu, probs[t]), cpi_surrogate(ev, mu, probs[t]))
            for t in t_grid
        ]
    return out


def write_landscape_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LANDSCAPE_HEADER)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row.as_tuple()])


def read_landscape_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != LANDSCAPE_HEADER:
            raise ConfigError(f"unexpected landscape header {header}")
        return [LandscapeRow(*map(float, row)) for row in reader]
