"""Improvement-then-projection steps, training loops and the alpha line search."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from pgop import bounds
from pgop.errors import ConfigError, SupportError
from pgop.mdp import PolicyEval, TabularMdp, evaluate_policy
from pgop.operators.improvement import POLYNOMIAL, ImprovementSpec, improve
from pgop.operators.projection import ALPHA, ProjectionSpec, project, projection_objective
from pgop.policy import SoftmaxPolicy

CURVE_HEADER = ("iteration", "J", "alpha", "bound_at_mu", "bound_at_new", "divergence_to_target")


@dataclass(frozen=True)
class StepDiagnostics:
    j_before: float
    j_after: float
    bound_at_mu: float
    bound_at_new: float
    divergence_before: float
    divergence_after: float


def _safe_bound(evaluation, mu, pi) -> float:
    try:
        return bounds.operator_lower_bound(evaluation, mu, pi)
    except SupportError:
        return math.nan


def with_alpha(improvement: ImprovementSpec, projection: ProjectionSpec, alpha: float):
    """Polynomial improvement with exponent 1/alpha; an alpha projection is matched to it."""
    imp = ImprovementSpec.polynomial(1.0 / alpha)
    proj = replace(projection, alpha=alpha) if projection.kind == ALPHA else projection
    return imp, proj


def compose_step(mdp: TabularMdp, policy: SoftmaxPolicy, improvement: ImprovementSpec,
                 projection: ProjectionSpec, sampling=None, evaluation: PolicyEval | None = None):
    """Apply projection after improvement once.

    ``sampling`` is an optional fixed (S, A) policy matrix whose evaluation
    drives the improvement instead of the current policy (off-policy mode).
    Returns ``(new_policy, StepDiagnostics)``.
    """
    pi = policy.probs()
    ev = evaluation if evaluation is not None else evaluate_policy(mdp, pi)
    if sampling is None:
        mu_probs, ev_mu = pi, ev
    else:
        mu_probs = np.asarray(sampling, dtype=float)
        ev_mu = evaluate_policy(mdp, mu_probs)
    target = improve(ev_mu, mu_probs, improvement)
    new_policy = project(target, projection, policy)
    new_probs = new_policy.probs()
    diag = StepDiagnostics(
        j_before=ev.j,
        j_after=evaluate_policy(mdp, new_probs).j,
        bound_at_mu=ev_mu.j,
        bound_at_new=_safe_bound(ev_mu, mu_probs, new_probs),
        divergence_before=projection_objective(target, projection, policy),
        divergence_after=projection_objective(target, projection, new_policy, reference=policy),
    )
    return new_policy, diag


def line_search_alpha(mdp: TabularMdp, mu: SoftmaxPolicy, candidates, projection: ProjectionSpec,
                      evaluation: PolicyEval | None = None) -> float:
    """Smallest candidate alpha whose projected polynomial improvement gains at
    least half of the alpha = 1 gain in the operator lower bound around ``mu``."""
    candidates = sorted({float(a) for a in candidates})
    if 1.0 not in candidates or any(not 0.0 < a <= 1.0 for a in candidates):
        raise ConfigError("line-search candidates must lie in (0, 1] and include 1")
    mu_probs = mu.probs()
    ev = evaluation if evaluation is not None else evaluate_policy(mdp, mu_probs)

    def gain(alpha):
        imp, proj = with_alpha(ImprovementSpec.polynomial(1.0), projection, alpha)
        new = project(improve(ev, mu_probs, imp), proj, mu)
        return bounds.operator_lower_bound(ev, mu_probs, new.probs()) - ev.j

    reference = gain(1.0)
    for alpha in candidates[:-1]:
        if gain(alpha) >= 0.5 * reference:
            return alpha
    return 1.0


@dataclass(frozen=True)
class AlphaSchedule:
    """``fixed`` keeps the improvement as given; ``anneal`` uses ``values[t]``
    at iteration t (holding the last value); ``line_search`` picks among
    ``values`` each iteration."""

    kind: str = "fixed"
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("fixed", "anneal", "line_search"):
            raise ConfigError(f"unknown alpha schedule {self.kind!r}")
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if self.kind != "fixed" and not values:
            raise ConfigError(f"{self.kind} schedule needs values")
        if any(not 0.0 < v <= 1.0 for v in values):
            raise ConfigError("schedule alphas must lie in (0, 1]")
        if self.kind == "line_search" and 1.0 not in values:
            raise ConfigError("line_search candidates must contain 1.0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values)}

    @classmethod
    def from_dict(cls, doc) -> AlphaSchedule:
        if doc is None or doc == "fixed":
            return cls()
        return cls(doc.get("kind", "fixed"), tuple(doc.get("values", ())))


@dataclass(frozen=True)
class CurveRow:
    iteration: int
    j: float
    alpha: float
    bound_at_mu: float
    bound_at_new: float
    divergence_to_target: float

    def as_tuple(self):
        return (self.iteration, self.j, self.alpha, self.bound_at_mu, self.bound_at_new, self.divergence_to_target)


@dataclass(frozen=True)
class TrainResult:
    rows: list
    policy: SoftmaxPolicy
    wallclock_ms: list

    @property
    def returns(self) -> np.ndarray:
        return np.array([row.j for row in self.rows])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([row.alpha for row in self.rows[1:]])


def train(mdp: TabularMdp, policy: SoftmaxPolicy, improvement: ImprovementSpec, projection: ProjectionSpec,
          n_iters: int, schedule: AlphaSchedule | None = None, sampling=None) -> TrainResult:
    """Iterate ``compose_step``. Row 0 holds the initial return; row t the
    return after t steps together with the alpha and bound values of step t."""
    if n_iters < 1:
        raise ConfigError("n_iters must be >= 1")
    schedule = schedule or AlphaSchedule()
    ev = evaluate_policy(mdp, policy.probs())
    rows = [CurveRow(0, ev.j, math.nan, math.nan, math.nan, math.nan)]
    times = [0.0]
    for t in range(n_iters):
        start = time.perf_counter()
        imp, proj = improvement, projection
        if schedule.kind == "anneal":
            imp, proj = with_alpha(improvement, projection, schedule.values[min(t, len(schedule.values) - 1)])
        elif schedule.kind == "line_search":
            alpha = line_search_alpha(mdp, policy, schedule.values, projection, evaluation=ev)
            imp, proj = with_alpha(improvement, projection, alpha)
        policy, diag = compose_step(mdp, policy, imp, proj, sampling=sampling, evaluation=ev)
        ev = evaluate_policy(mdp, policy.probs())
        alpha_used = imp.alpha if imp.kind == POLYNOMIAL or imp.kind == "op_reinforce" else math.nan
        rows.append(CurveRow(t + 1, ev.j, alpha_used, diag.bound_at_mu, diag.bound_at_new, diag.divergence_after))
        times.append((time.perf_counter() - start) * 1e3)
    return TrainResult(rows, policy, times)


def write_curve_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for row in rows:
            writer.writerow([row.iteration] + [repr(float(x)) for x in row.as_tuple()[1:]])


def read_curve_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CURVE_HEADER:
            raise ConfigError(f"unexpected curve header {header}")
        return [CurveRow(int(row[0]), *map(float, row[1:])) for row in reader]
