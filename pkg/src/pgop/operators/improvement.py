"""Improvement operators in the state-action formulation.

Each operator maps a policy and its exact evaluation to an
:class:`ImprovedDistribution`: a distribution over states together with one
action distribution per state.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from pgop.errors import ConfigError, DegenerateError, PositivityError
from pgop.mdp import PolicyEval

# States whose value is at or below this are left untouched by improvement.
VALUE_FLOOR = 1e-12

OP_REINFORCE = "op_reinforce"
POLYNOMIAL = "polynomial"
PPO_EXP = "ppo_exp"
MPO_EXP = "mpo_exp"


@dataclass(frozen=True)
class ImprovementSpec:
    kind: str = OP_REINFORCE
    inv_alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in (OP_REINFORCE, POLYNOMIAL, PPO_EXP, MPO_EXP):
            raise ConfigError(f"unknown improvement kind {self.kind!r}")
        if not (self.inv_alpha > 0 and math.isfinite(self.inv_alpha)):
            raise ConfigError("inv_alpha must be positive and finite")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be positive and finite")

    @classmethod
    def op_reinforce(cls) -> ImprovementSpec:
        return cls(OP_REINFORCE)

    @classmethod
    def polynomial(cls, inv_alpha: float) -> ImprovementSpec:
        return cls(POLYNOMIAL, inv_alpha=float(inv_alpha))

    @classmethod
    def ppo_exp(cls, beta: float) -> ImprovementSpec:
        return cls(PPO_EXP, beta=float(beta))

    @classmethod
    def mpo_exp(cls, beta: float) -> ImprovementSpec:
        return cls(MPO_EXP, beta=float(beta))

    @property
    def alpha(self) -> float:
        """Equivalent polynomial alpha (1 for Op-REINFORCE, nan for exponential kinds)."""
        if self.kind == OP_REINFORCE:
            return 1.0
        if self.kind == POLYNOMIAL:
            return 1.0 / self.inv_alpha
        return math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> ImprovementSpec:
        unknown = set(doc) - {"kind", "inv_alpha", "beta", "alpha"}
        if unknown:
            raise ConfigError(f"unknown improvement fields: {sorted(unknown)}")
        doc = dict(doc)
        if "alpha" in doc:
            doc["inv_alpha"] = 1.0 / float(doc.pop("alpha"))
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class ImprovedDistribution:
    """Output of an improvement operator.

    ``state_weights`` sums to one over touched states. ``log_scale`` holds the
    per-state normalizer log Z(s) of the tilted conditional whenever it enters
    the state weights (zero otherwise); the alpha-divergence projection needs it.
    """

    state_weights: np.ndarray
    conditionals: np.ndarray
    log_conditionals: np.ndarray
    log_scale: np.ndarray
    touched: np.ndarray
    advantages: np.ndarray
    provenance: dict

    @property
    def n_states(self) -> int:
        return self.conditionals.shape[0]

    def joint(self) -> np.ndarray:
        return self.state_weights[:, None] * self.conditionals


def improve(evaluation: PolicyEval, pi, spec: ImprovementSpec) -> ImprovedDistribution:
    pi = np.asarray(pi, dtype=float)
    v, q, d = evaluation.v, evaluation.q, evaluation.occupancy
    touched = v > VALUE_FLOOR
    if not touched.any():
        raise DegenerateError("every state has value below the floor; nothing to improve")
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_d = np.log(np.maximum(d, 0.0))
        if spec.kind in (OP_REINFORCE, POLYNOMIAL):
            if np.any(q[touched] < -VALUE_FLOOR):
                raise PositivityError("Q-values must be nonnegative on improved states")
            power = 1.0 if spec.kind == OP_REINFORCE else spec.inv_alpha
            tilted = log_pi + power * np.log(np.maximum(q, 0.0))
        elif spec.kind == PPO_EXP:
            tilted = spec.beta * q
        else:
            tilted = log_pi + spec.beta * q

    log_norm = logsumexp(tilted, axis=1)
    if spec.kind in (OP_REINFORCE, POLYNOMIAL):
        log_scale = np.where(touched, log_norm, 0.0)
    else:
        log_scale = np.zeros_like(log_norm)
    with np.errstate(invalid="ignore"):
        log_mu = np.where(touched[:, None], tilted - log_norm[:, None], log_pi)

    log_w = np.where(touched, log_d + log_scale, -np.inf)
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise DegenerateError("improved state weights vanish")
    weights = np.exp(log_w - total)
    return ImprovedDistribution(
        state_weights=weights,
        conditionals=np.exp(log_mu),
        log_conditionals=log_mu,
        log_scale=log_scale,
        touched=touched,
        advantages=q - v[:, None],
        provenance=spec.to_dict(),
    )
