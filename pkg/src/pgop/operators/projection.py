"""Projection operators: best realizable softmax policy for an improved distribution.

Three divergences are supported, all weighted per state:

* ``weighted_kl``: sum_s c(s) KL(mu(.|s) || z(.|s)), the covering direction;
* ``alpha``: sum_s c(s) D_alpha(mu(.|s) || z(.|s)) with Minka's divergence;
* ``reverse_kl_clipped``: the PPO-style mode-seeking surrogate
  -sum_s c(s) [sum_a clip-surrogate(z, A) + H(z(.|s)) / beta].
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from pgop.errors import ConfigError, ProjectionError
from pgop.operators.improvement import ImprovedDistribution
from pgop.policy import LOGIT_FLOOR, SHARED, TABULAR, SoftmaxPolicy

WEIGHTED_KL = "weighted_kl"
ALPHA = "alpha"
REVERSE_KL_CLIPPED = "reverse_kl_clipped"

CLOSED_FORM = "closed_form"
GRADIENT_DESCENT = "gradient_descent"
MINKA = "minka"


@dataclass(frozen=True)
class ProjectionSpec:
    kind: str = WEIGHTED_KL
    alpha: float = 1.0
    beta: float = math.inf
    clip_eps: float | None = 0.2
    solver: str = CLOSED_FORM
    steps: int = 500
    step_size: float = 0.1

    def __post_init__(self):
        if self.kind not in (WEIGHTED_KL, ALPHA, REVERSE_KL_CLIPPED):
            raise ConfigError(f"unknown projection kind {self.kind!r}")
        if self.solver not in (CLOSED_FORM, GRADIENT_DESCENT, MINKA):
            raise ConfigError(f"unknown projection solver {self.solver!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ConfigError("beta must be positive (inf disables the entropy term)")
        if self.clip_eps is not None and not self.clip_eps > 0:
            raise ConfigError("clip_eps must be positive or None")
        if self.steps < 1 or not self.step_size > 0:
            raise ConfigError("steps and step_size must be positive")
        if self.solver == MINKA and self.kind == REVERSE_KL_CLIPPED:
            raise ConfigError("the Minka solver applies to covering divergences only")

    @classmethod
    def weighted_kl(cls, solver: str = CLOSED_FORM, **kw) -> ProjectionSpec:
        return cls(WEIGHTED_KL, solver=solver, **kw)

    @classmethod
    def alpha_divergence(cls, alpha: float, solver: str = GRADIENT_DESCENT, **kw) -> ProjectionSpec:
        return cls(ALPHA, alpha=float(alpha), solver=solver, **kw)

    @classmethod
    def reverse_kl_clipped(cls, beta: float, clip_eps: float | None = 0.2,
                           solver: str = GRADIENT_DESCENT, **kw) -> ProjectionSpec:
        return cls(REVERSE_KL_CLIPPED, beta=float(beta), clip_eps=clip_eps, solver=solver, **kw)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.kind == ALPHA else 1.0

    def to_dict(self) -> dict:
        doc = asdict(self)
        if math.isinf(self.beta):
            doc["beta"] = "inf"
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> ProjectionSpec:
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown projection fields: {sorted(unknown)}")
        doc = dict(doc)
        if "beta" in doc:
            doc["beta"] = float(doc["beta"])
        return cls(**doc)


def projection_weights(mu: ImprovedDistribution, spec: ProjectionSpec) -> np.ndarray:
    """Per-state weights c(s) of the projection objective, summing to one.

    For the alpha-divergence the improved measure is unnormalized per state
    (mass Z(s)); comparing it with the model in that form scales each state's
    divergence by Z(s)^(alpha - 1) relative to the improved state weights. At
    alpha = 1 this is the plain weighted KL.
    """
    w = mu.state_weights
    if spec.kind != ALPHA or spec.alpha == 1.0:
        return w
    with np.errstate(divide="ignore"):
        log_c = np.where(mu.touched & (w > 0), np.log(w) + (spec.alpha - 1.0) * mu.log_scale, -np.inf)
    return np.exp(log_c - logsumexp(log_c))


class _Objective:
    """Projection objective as a function of policy parameters."""

    def __init__(self, mu: ImprovedDistribution, spec: ProjectionSpec, policy: SoftmaxPolicy, weights=None):
        if policy.n_states != mu.n_states or policy.n_actions != mu.conditionals.shape[1]:
            raise ProjectionError("policy and improved distribution have different shapes")
        self.mu = mu
        self.spec = spec
        self.template = policy
        self.weights = projection_weights(mu, spec) if weights is None else weights
        self.active = self.weights > 0
        self.reference = policy.probs()  # ratio-clipping reference

    def logits(self, theta):
        if self.template.mode == TABULAR:
            return theta.reshape(self.template.n_states, self.template.n_actions)
        return np.broadcast_to(theta, (self.template.n_states, self.template.n_actions))

    def reduce(self, logit_grad):
        if self.template.mode == TABULAR:
            return logit_grad.ravel()
        return logit_grad.sum(axis=0)

    def __call__(self, theta):
        """Return (value, gradient) at ``theta``."""
        log_z = log_softmax(self.logits(theta), axis=1)
        z = np.exp(log_z)
        c = self.weights[:, None]
        mu, log_mu = self.mu.conditionals, self.mu.log_conditionals
        act = self.active
        kind = self.spec.kind
        if kind == WEIGHTED_KL or (kind == ALPHA and self.spec.alpha == 1.0):
            with np.errstate(invalid="ignore"):
                cross = np.where(mu > 0, mu * (log_mu - log_z), 0.0)
            value = float(np.sum(c[act] * cross[act]))
            logit_grad = c * (z - mu)
        elif kind == ALPHA:
            a = self.spec.alpha
            mixed = np.exp(a * log_mu + (1.0 - a) * log_z)
            per_state = (a * mu + (1.0 - a) * z - mixed).sum(axis=1) / (a * (1.0 - a))
            value = float(np.sum(self.weights[act] * per_state[act]))
            logit_grad = -(c / a) * (mixed - z * mixed.sum(axis=1, keepdims=True))
        else:
            value, prob_grad = self._surrogate(z, log_z)
            logit_grad = z * (prob_grad - np.sum(z * prob_grad, axis=1, keepdims=True))
        logit_grad = np.where(act[:, None], logit_grad, 0.0)
        return value, self.reduce(logit_grad)

    def _surrogate(self, z, log_z):
        adv = self.mu.advantages
        ref = self.reference
        eps = self.spec.clip_eps
        ratio = z / ref
        if eps is None:
            gain = z * adv
            slope = adv
        else:
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
            unclipped_term = ratio * adv
            clipped_term = clipped * adv
            use_unclipped = unclipped_term <= clipped_term
            gain = ref * np.minimum(unclipped_term, clipped_term)
            slope = np.where(use_unclipped, adv, 0.0)
        per_state = gain.sum(axis=1)
        prob_grad = slope.copy()
        if math.isfinite(self.spec.beta):
            per_state = per_state - np.sum(z * log_z, axis=1) / self.spec.beta
            prob_grad = prob_grad - (log_z + 1.0) / self.spec.beta
        act = self.active
        value = -float(np.sum(self.weights[act] * per_state[act]))
        return value, -self.weights[:, None] * prob_grad


def projection_objective(mu: ImprovedDistribution, spec: ProjectionSpec, policy: SoftmaxPolicy,
                         reference: SoftmaxPolicy | None = None) -> float:
    obj = _Objective(mu, spec, policy if reference is None else reference)
    return obj(policy.theta)[0]


def projection_gradient(mu: ImprovedDistribution, spec: ProjectionSpec, policy: SoftmaxPolicy,
                        weights=None) -> np.ndarray:
    """Gradient of the projection objective in the policy's parameters.

    ``weights`` overrides the normalized per-state weights, e.g. with the
    unnormalized d(s) V(s) of the REINFORCE equivalence.
    """
    return _Objective(mu, spec, policy, weights=weights)(policy.theta)[1]


@dataclass(frozen=True)
class DescentTrace:
    values: list
    accepted_steps: int


def gradient_descent(objective, theta0, steps: int, step_size: float):
    """Fixed-budget descent with step halving on objective increase.

    Returns the final parameters and the objective after each accepted step,
    which is non-increasing by construction.
    """
    theta = np.array(theta0, dtype=float)
    value, grad = objective(theta)
    if not np.isfinite(value):
        raise ProjectionError("projection objective is not finite at the initial policy")
    values = [value]
    eta = step_size
    accepted = 0
    for _ in range(steps):
        if not np.any(grad):
            break
        while True:
            cand = theta - eta * grad
            cand_value, cand_grad = objective(cand)
            if np.isfinite(cand_value) and cand_value <= value:
                break
            eta *= 0.5
            if eta < 1e-20:
                return theta, DescentTrace(values, accepted)
        theta, value, grad = cand, cand_value, cand_grad
        values.append(value)
        accepted += 1
    return theta, DescentTrace(values, accepted)


def _closed_form(mu: ImprovedDistribution, spec: ProjectionSpec, policy: SoftmaxPolicy,
                 weights: np.ndarray) -> SoftmaxPolicy:
    active = weights > 0
    if spec.kind == REVERSE_KL_CLIPPED:
        if policy.mode != TABULAR or spec.clip_eps is not None or math.isinf(spec.beta):
            raise ProjectionError("reverse-KL closed form needs a tabular policy, no clipping and finite beta")
        target = spec.beta * mu.advantages
    else:
        target = mu.log_conditionals
    if policy.mode == TABULAR:
        logits = policy.logits().copy()
        logits[active] = np.maximum(target[active], LOGIT_FLOOR)
        return policy.with_theta(logits.ravel())
    if spec.kind == ALPHA and spec.alpha != 1.0:
        raise ProjectionError("no closed form for an alpha-divergence projection onto shared logits")
    # Moment matching: the shared softmax equals the weighted average conditional.
    mixture = weights[active] @ mu.conditionals[active]
    with np.errstate(divide="ignore"):
        return policy.with_theta(np.log(mixture))


def minka_kl_iteration(mu: ImprovedDistribution, z_t: SoftmaxPolicy, alpha: float,
                       solver: ProjectionSpec | None = None) -> SoftmaxPolicy:
    """One step of the iterative alpha-projection.

    Projects the per-state geometric mixture mu^alpha z_t^(1-alpha) under the
    weighted KL. Each state's weight is multiplied by the mixture's mass
    G(s) = sum_a mu^alpha z_t^(1-alpha), which makes the fixed points of the
    iteration the stationary points of the weighted alpha-divergence.
    """
    solver = solver or ProjectionSpec.weighted_kl()
    base = projection_weights(mu, ProjectionSpec(ALPHA, alpha=alpha, solver=MINKA))
    log_z = z_t.log_probs()
    log_mixed = alpha * mu.log_conditionals + (1.0 - alpha) * log_z
    log_mass = logsumexp(log_mixed, axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.where(base > 0, np.log(base) + log_mass, -np.inf)
    weights = np.exp(log_w - logsumexp(log_w))
    log_m = log_mixed - log_mass[:, None]
    mixed = replace(mu, state_weights=weights, conditionals=np.exp(log_m), log_conditionals=log_m,
                    log_scale=np.zeros_like(mu.log_scale))
    kl_spec = replace(solver, kind=WEIGHTED_KL, alpha=1.0)
    if kl_spec.solver == MINKA:
        kl_spec = replace(kl_spec, solver=CLOSED_FORM)
    return project(mixed, kl_spec, z_t)


def project(mu: ImprovedDistribution, spec: ProjectionSpec, policy_init: SoftmaxPolicy) -> SoftmaxPolicy:
    """Project ``mu`` onto the softmax class of ``policy_init``.

    States with zero weight keep ``policy_init``'s logits in tabular mode.
    """
    return project_with_trace(mu, spec, policy_init)[0]


def project_with_trace(mu: ImprovedDistribution, spec: ProjectionSpec, policy_init: SoftmaxPolicy):
    weights = projection_weights(mu, spec)
    if spec.solver == CLOSED_FORM:
        if spec.kind == ALPHA and spec.alpha != 1.0 and policy_init.mode == SHARED:
            raise ProjectionError("use the gradient_descent or minka solver for shared alpha projections")
        return _closed_form(mu, spec, policy_init, weights), None
    if spec.solver == MINKA:
        if spec.kind == WEIGHTED_KL or spec.alpha == 1.0:
            return _closed_form(mu, spec, policy_init, weights), None
        z = policy_init
        values = [projection_objective(mu, spec, z)]
        for _ in range(spec.steps):
            nxt = minka_kl_iteration(mu, z, spec.alpha)
            values.append(projection_objective(mu, spec, nxt))
            done = np.max(np.abs(nxt.probs() - z.probs())) < 1e-14
            z = nxt
            if done:
                break
        return z, DescentTrace(values, len(values) - 1)
    objective = _Objective(mu, spec, policy_init, weights=weights)
    theta, trace = gradient_descent(objective, policy_init.theta, spec.steps, spec.step_size)
    return policy_init.with_theta(theta), trace
