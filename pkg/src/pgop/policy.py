"""Softmax policies (tabular or state-independent shared logits) and exact policy gradients."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from pgop.errors import InvalidPolicyError
from pgop.mdp import TabularMdp, evaluate_policy

TABULAR = "tabular"
SHARED = "shared"
MODES = (TABULAR, SHARED)

# Logits below this are clamped so every action keeps strictly positive mass.
LOGIT_FLOOR = -700.0


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Softmax over action logits.

    ``tabular`` mode holds one logit per (s, a), flattened row-major;
    ``shared`` mode holds one logit per action used in every state.
    """

    mode: str
    n_states: int
    n_actions: int
    theta: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidPolicyError(f"mode must be one of {MODES}, got {self.mode!r}")
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise InvalidPolicyError(f"{self.mode} policy needs {self.n_params} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise InvalidPolicyError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n_params(self) -> int:
        return self.n_actions * (self.n_states if self.mode == TABULAR else 1)

    @classmethod
    def uniform(cls, mode: str, n_states: int, n_actions: int) -> SoftmaxPolicy:
        size = n_actions * (n_states if mode == TABULAR else 1)
        return cls(mode, n_states, n_actions, np.zeros(size))

    @classmethod
    def from_probs(cls, mode: str, probs, n_states: int | None = None, floor: float = 0.0) -> SoftmaxPolicy:
        """Policy whose probabilities match ``probs`` (up to softmax gauge).

        ``probs`` is (S, A) for tabular mode or (A,) for shared mode. Entries at
        or below ``floor`` are clamped before taking logs.
        """
        probs = np.asarray(probs, dtype=float)
        with np.errstate(divide="ignore"):
            logits = np.log(np.maximum(probs, floor))
        logits = np.maximum(logits, LOGIT_FLOOR)
        if mode == SHARED:
            if probs.ndim != 1 or n_states is None:
                raise InvalidPolicyError("shared mode needs a 1-d action distribution and n_states")
            return cls(SHARED, n_states, probs.size, logits)
        if probs.ndim != 2:
            raise InvalidPolicyError("tabular mode needs an (S, A) matrix")
        return cls(TABULAR, probs.shape[0], probs.shape[1], logits.ravel())

    def with_theta(self, theta) -> SoftmaxPolicy:
        return replace(self, theta=np.maximum(np.asarray(theta, dtype=float), LOGIT_FLOOR))

    def logits(self) -> np.ndarray:
        """(S, A) logit matrix."""
        if self.mode == TABULAR:
            return self.theta.reshape(self.n_states, self.n_actions)
        return np.broadcast_to(self.theta, (self.n_states, self.n_actions))

    def probs(self) -> np.ndarray:
        return softmax(self.logits(), axis=1)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits(), axis=1)

    def action_probs(self, s: int) -> np.ndarray:
        self._check_state(s)
        return softmax(self.logits()[s])

    def log_prob_grad(self, s: int, a: int) -> np.ndarray:
        """d log pi(a|s) / d theta."""
        self._check_state(s)
        if not 0 <= a < self.n_actions:
            raise InvalidPolicyError(f"action {a} out of range")
        local = -self.action_probs(s)
        local[a] += 1.0
        if self.mode == SHARED:
            return local
        grad = np.zeros(self.n_params)
        grad[s * self.n_actions:(s + 1) * self.n_actions] = local
        return grad

    def pullback(self, prob_grad: np.ndarray) -> np.ndarray:
        """Chain rule from d f / d pi(a|s), an (S, A) array, to d f / d theta."""
        z = self.probs()
        logit_grad = z * (prob_grad - np.sum(z * prob_grad, axis=1, keepdims=True))
        return self.reduce_logit_grad(logit_grad)

    def reduce_logit_grad(self, logit_grad: np.ndarray) -> np.ndarray:
        """Map d f / d logits(s, a) to d f / d theta."""
        if self.mode == TABULAR:
            return logit_grad.ravel()
        return logit_grad.sum(axis=0)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "n_states": self.n_states, "n_actions": self.n_actions,
                "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> SoftmaxPolicy:
        try:
            return cls(doc["mode"], int(doc["n_states"]), int(doc["n_actions"]), np.asarray(doc["theta"], dtype=float))
        except KeyError as exc:
            raise InvalidPolicyError(f"policy document missing field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> SoftmaxPolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def _check_state(self, s: int):
        if not 0 <= s < self.n_states:
            raise InvalidPolicyError(f"state {s} out of range")


def action_probs(policy: SoftmaxPolicy, s: int) -> np.ndarray:
    return policy.action_probs(s)


def log_prob_grad(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    return policy.log_prob_grad(s, a)


def policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, evaluation=None) -> np.ndarray:
    """Exact dJ/dtheta = sum_s d(s) sum_a pi(a|s) Q(s,a) dlog pi(a|s)/dtheta."""
    pi = policy.probs()
    ev = evaluation if evaluation is not None else evaluate_policy(mdp, pi)
    weight = ev.occupancy[:, None] * pi * ev.q
    # the score of softmax is e_a - pi(.|s)
    logit_grad = weight - pi * weight.sum(axis=1, keepdims=True)
    return policy.reduce_logit_grad(logit_grad)


def policy_return(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    return evaluate_policy(mdp, policy.probs()).j
