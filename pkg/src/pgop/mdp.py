"""Tabular MDPs, environment builders, exact policy evaluation and value iteration."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from pgop.errors import InvalidMdpError

PROB_TOL = 1e-12

# Standard four-room layout: 13x13 including the outer wall, 11x11 interior.
FOUR_ROOM_LAYOUT = """\
wwwwwwwwwwwww
w     w     w
w     w     w
w           w
w     w     w
w     w     w
ww wwww     w
w     www www
w     w     w
w     w     w
w           w
w     w     w
wwwwwwwwwwwww"""

# Action order used by the four-room builder and the landscape segment.
DOWN, LEFT, UP, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("down", "left", "up", "right")
_MOVES = {DOWN: (1, 0), LEFT: (0, -1), UP: (-1, 0), RIGHT: (0, 1)}


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP with nonnegative rewards.

    ``transition[s, a, s']`` is the next-state distribution, ``reward[s, a]`` the
    immediate reward, ``start_dist`` the initial state distribution. Terminal
    states self-loop with probability one and pay nothing.
    """

    transition: np.ndarray
    reward: np.ndarray
    start_dist: np.ndarray
    discount: float
    terminal: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        d0 = np.array(self.start_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidMdpError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise InvalidMdpError("need at least one state and one action")
        if r.shape != (S, A):
            raise InvalidMdpError(f"reward must have shape {(S, A)}, got {r.shape}")
        if d0.shape != (S,):
            raise InvalidMdpError(f"start_dist must have shape {(S,)}, got {d0.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_TOL):
            raise InvalidMdpError("transition rows must be distributions")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise InvalidMdpError("rewards must be finite and nonnegative")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_TOL:
            raise InvalidMdpError("start_dist must be a distribution")
        if not 0.0 <= float(self.discount) < 1.0:
            raise InvalidMdpError(f"discount must lie in [0, 1), got {self.discount}")
        term = np.zeros(S, dtype=bool) if self.terminal is None else np.array(self.terminal, dtype=bool)
        if term.shape != (S,):
            raise InvalidMdpError(f"terminal must have shape {(S,)}")
        for s in np.flatnonzero(term):
            if np.any(r[s] != 0) or np.any(P[s, :, s] != 1.0):
                raise InvalidMdpError(f"terminal state {s} must self-loop with zero reward")
        for name, value in (("transition", P), ("reward", r), ("start_dist", d0), ("terminal", term)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        return float(self.reward.max())

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "d0": self.start_dist.tolist(),
            "terminal": self.terminal.tolist(),
            "P": self.transition.tolist(),
            "r": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TabularMdp:
        missing = {"n_states", "n_actions", "gamma", "d0", "P", "r"} - set(doc)
        if missing:
            raise InvalidMdpError(f"MDP document missing fields: {sorted(missing)}")
        mdp = cls(
            transition=np.asarray(doc["P"], dtype=float),
            reward=np.asarray(doc["r"], dtype=float),
            start_dist=np.asarray(doc["d0"], dtype=float),
            discount=doc["gamma"],
            terminal=doc.get("terminal"),
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise InvalidMdpError("n_states/n_actions disagree with array shapes")
        return mdp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> TabularMdp:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PolicyEval:
    """Exact values of a policy: V, Q, unnormalized discounted occupancy, and J.

    ``occupancy[s] = sum_t gamma^t Pr(s_t = s)`` sums to ``1 / (1 - gamma)``.
    """

    v: np.ndarray
    q: np.ndarray
    occupancy: np.ndarray
    j: float


def check_policy_matrix(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidMdpError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-10):
        raise InvalidMdpError("policy rows must be distributions")
    return pi


def state_transition(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """State-to-state kernel under ``pi``."""
    return np.einsum("sa,sat->st", pi, mdp.transition)


def evaluate_policy(mdp: TabularMdp, pi) -> PolicyEval:
    pi = check_policy_matrix(mdp, pi)
    gamma = mdp.discount
    system = np.eye(mdp.n_states) - gamma * state_transition(mdp, pi)
    try:
        lu = linalg.lu_factor(system, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:  # pragma: no cover - impossible for gamma < 1
        raise InvalidMdpError("singular evaluation system; MDP invariants violated") from exc
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    v = linalg.lu_solve(lu, r_pi)
    occupancy = linalg.lu_solve(lu, mdp.start_dist, trans=1)
    q = mdp.reward + gamma * mdp.transition @ v
    return PolicyEval(v=v, q=q, occupancy=occupancy, j=float(mdp.start_dist @ v))


def q_from_v(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * mdp.transition @ v


def greedy_actions(q: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    """Greedy action per state; near-ties go to the lowest index."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol * np.maximum(1.0, np.abs(best)), axis=1)


def deterministic_policy(actions: np.ndarray, n_actions: int) -> np.ndarray:
    pi = np.zeros((len(actions), n_actions))
    pi[np.arange(len(actions)), actions] = 1.0
    return pi


def value_iteration(mdp: TabularMdp, tolerance: float = 1e-10, max_iter: int = 1_000_000):
    """Return ``(v, actions)`` with sup-norm Bellman residual of ``v`` at most ``tolerance``."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        tv = q_from_v(mdp, v).max(axis=1)
        if np.max(np.abs(tv - v)) <= tolerance:
            break
        v = tv
    else:  # pragma: no cover
        raise RuntimeError("value iteration did not converge")
    return v, greedy_actions(q_from_v(mdp, v))


def optimal_policy(mdp: TabularMdp, tolerance: float = 1e-10) -> np.ndarray:
    """VI-greedy deterministic policy as a probability matrix."""
    _, actions = value_iteration(mdp, tolerance)
    return deterministic_policy(actions, mdp.n_actions)


# ---------------------------------------------------------------------------
# Builders


@dataclass(frozen=True)
class GridInfo:
    cells: tuple  # (row, col) per state index
    start: int
    goal: int

    def index(self, row: int, col: int) -> int:
        return self.cells.index((row, col))


def four_room_grid(layout: str = FOUR_ROOM_LAYOUT) -> GridInfo:
    rows = layout.splitlines()
    cells = tuple((i, j) for i, line in enumerate(rows) for j, ch in enumerate(line) if ch != "w")
    # lower-left and upper-right interior corners
    start = max(cells, key=lambda c: (c[0], -c[1]))
    goal = min(cells, key=lambda c: (c[0], -c[1]))
    return GridInfo(cells=cells, start=cells.index(start), goal=cells.index(goal))


def build_four_room(discount: float = 0.99, layout: str = FOUR_ROOM_LAYOUT) -> TabularMdp:
    """Deterministic four-room gridworld.

    Start in the lower-left interior corner; the goal is the upper-right corner.
    Moving into the goal pays +1 and the goal is absorbing. Bumping into a wall
    leaves the agent in place.
    """
    grid = four_room_grid(layout)
    lookup = {c: i for i, c in enumerate(grid.cells)}
    S, A = len(grid.cells), len(_MOVES)
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for s, (i, j) in enumerate(grid.cells):
        for a, (di, dj) in _MOVES.items():
            if s == grid.goal:
                P[s, a, s] = 1.0
                continue
            nxt = lookup.get((i + di, j + dj), s)
            P[s, a, nxt] = 1.0
            if nxt == grid.goal:
                r[s, a] = 1.0
    d0 = np.zeros(S)
    d0[grid.start] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[grid.goal] = True
    return TabularMdp(P, r, d0, discount, terminal)


def build_random_mdp(n_states: int, n_actions: int, reward_sparsity: float = 0.0,
                     rng_seed: int = 0, discount: float = 0.9) -> TabularMdp:
    """Random dense MDP: Dirichlet(1) transition rows and start distribution,
    uniform [0, 1) rewards with ``reward_sparsity`` of the entries zeroed."""
    if n_states < 1 or n_actions < 1:
        raise InvalidMdpError("n_states and n_actions must be >= 1")
    if not 0.0 <= reward_sparsity <= 1.0:
        raise InvalidMdpError("reward_sparsity must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    n_zero = int(round(reward_sparsity * r.size))
    r.flat[rng.permutation(r.size)[:n_zero]] = 0.0
    d0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P, r, d0 / d0.sum(), discount)


def build_layered_mdp(n_layers: int, width: int, n_actions: int, rng_seed: int = 0,
                      discount: float = 0.9, branching: int = 2) -> TabularMdp:
    """Random layered MDP that reaches its terminal state in exactly ``n_layers`` steps.

    Every (s, a) in layer k moves to at most ``branching`` states of layer k+1;
    the last layer moves to the terminal state. Rewards are uniform in
    (0.1, 1] so every trajectory has a positive return. Used as an
    enumeration-friendly test instance.
    """
    if n_layers < 1 or width < 1 or n_actions < 1 or branching < 1:
        raise InvalidMdpError("sizes must be >= 1")
    rng = np.random.default_rng(rng_seed)
    S = n_layers * width + 1
    term = S - 1
    P = np.zeros((S, n_actions, S))
    r = np.zeros((S, n_actions))
    for layer in range(n_layers):
        for k in range(width):
            s = layer * width + k
            r[s] = rng.uniform(0.1, 1.0, size=n_actions)
            for a in range(n_actions):
                if layer == n_layers - 1:
                    P[s, a, term] = 1.0
                    continue
                nxt = (layer + 1) * width + rng.choice(width, size=min(branching, width), replace=False)
                P[s, a, nxt] = rng.dirichlet(np.ones(len(nxt)))
                P[s, a] /= P[s, a].sum()
    P[term, :, term] = 1.0
    d0 = np.zeros(S)
    d0[:width] = rng.dirichlet(np.ones(width))
    d0 /= d0.sum()
    terminal = np.zeros(S, dtype=bool)
    terminal[term] = True
    return TabularMdp(P, r, d0, discount, terminal)


def load_mdp(spec: str | dict, discount: float | None = None) -> TabularMdp:
    """Resolve an environment reference: ``"four_room"``, a JSON path, or a config dict."""
    if isinstance(spec, dict):
        kind = spec.get("kind", "four_room")
        if kind == "four_room":
            return build_four_room(discount=spec.get("gamma", 0.99 if discount is None else discount))
        if kind == "random_mdp":
            return build_random_mdp(spec["n_states"], spec["n_actions"], spec.get("reward_sparsity", 0.0),
                                    spec.get("seed", 0), spec.get("gamma", 0.9))
        if kind == "file":
            return TabularMdp.load(spec["path"])
        raise InvalidMdpError(f"unknown environment kind {kind!r}")
    if spec == "four_room":
        return build_four_room() if discount is None else build_four_room(discount)
    return TabularMdp.load(spec)
