"""Experiment configuration: JSON schema, validation and presets."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from pgop.errors import ConfigError
from pgop.operators.compose import AlphaSchedule
from pgop.operators.improvement import ImprovementSpec
from pgop.operators.projection import ProjectionSpec
from pgop.policy import MODES

CONFIG_FIELDS = ("env", "policy_mode", "improvement", "projection", "n_iters", "alpha_schedule",
                 "sampling_policy", "init", "seed", "output_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    env: dict = field(default_factory=lambda: {"kind": "four_room", "gamma": 0.99})
    policy_mode: str = "shared"
    improvement: ImprovementSpec = field(default_factory=ImprovementSpec.op_reinforce)
    projection: ProjectionSpec = field(default_factory=ProjectionSpec.weighted_kl)
    n_iters: int = 100
    alpha_schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    # "current", "optimal" (value-iteration policy) or {"path": <policy json>}
    sampling_policy: str | dict = "current"
    # "uniform" or {"kind": "random", "scale": float}; random logits are drawn from ``seed``
    init: str | dict = "uniform"
    seed: int = 0
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "env": copy.deepcopy(self.env),
            "policy_mode": self.policy_mode,
            "improvement": self.improvement.to_dict(),
            "projection": self.projection.to_dict(),
            "n_iters": self.n_iters,
            "alpha_schedule": self.alpha_schedule.to_dict(),
            "sampling_policy": copy.deepcopy(self.sampling_policy),
            "init": copy.deepcopy(self.init),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(CONFIG_FIELDS))
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        kw = {}
        for name, parse in _PARSERS.items():
            if name not in doc:
                continue
            try:
                kw[name] = parse(doc[name])
            except ConfigError as exc:
                raise ConfigError(f"field {name!r}: {exc}") from None
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"field {name!r}: {type(exc).__name__}: {exc}") from None
        config = cls(**kw)
        config.validate()
        return config

    def validate(self) -> None:
        if self.policy_mode not in MODES:
            raise ConfigError(f"field 'policy_mode': expected one of {MODES}, got {self.policy_mode!r}")
        if self.n_iters < 1:
            raise ConfigError("field 'n_iters': must be >= 1")
        kind = self.env.get("kind")
        if kind not in ("four_room", "random_mdp", "file"):
            raise ConfigError(f"field 'env.kind': unknown environment {kind!r}")
        if kind == "file" and "path" not in self.env:
            raise ConfigError("field 'env.path': required for file environments")
        if kind == "random_mdp" and not {"n_states", "n_actions"} <= set(self.env):
            raise ConfigError("field 'env': random_mdp needs n_states and n_actions")
        sp = self.sampling_policy
        if not (sp in ("current", "optimal") or (isinstance(sp, dict) and "path" in sp)):
            raise ConfigError("field 'sampling_policy': expected 'current', 'optimal' or {'path': ...}")
        init = self.init
        if not (init == "uniform" or (isinstance(init, dict) and init.get("kind") == "random")):
            raise ConfigError("field 'init': expected 'uniform' or {'kind': 'random', 'scale': ...}")

    def replace(self, **changes) -> ExperimentConfig:
        doc = self.to_dict()
        doc.update(changes)
        return ExperimentConfig.from_dict(doc)


def _int(value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}")
    return value


def _env(value):
    if isinstance(value, str):
        return {"kind": "four_room"} if value == "four_room" else {"kind": "file", "path": value}
    if not isinstance(value, dict):
        raise ConfigError("expected an object or a string")
    return copy.deepcopy(value)


_PARSERS = {
    "env": _env,
    "policy_mode": str,
    "improvement": ImprovementSpec.from_dict,
    "projection": ProjectionSpec.from_dict,
    "n_iters": _int,
    "alpha_schedule": AlphaSchedule.from_dict,
    "sampling_policy": copy.deepcopy,
    "init": copy.deepcopy,
    "seed": _int,
    "output_dir": lambda v: None if v is None else str(v),
}


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


# Iteration counts are fixed choices: long enough for every curve to flatten.
FOUR_ROOM = {"kind": "four_room", "gamma": 0.99}
LINE_SEARCH_GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(11))

PRESETS = {
    "fig1-left": {
        "env": FOUR_ROOM, "policy_mode": "shared",
        "improvement": {"kind": "polynomial", "inv_alpha": 4.0},
        "projection": {"kind": "weighted_kl", "solver": "closed_form"},
        "n_iters": 200,
    },
    "fig1-middle": {
        "env": FOUR_ROOM, "policy_mode": "shared",
        "improvement": {"kind": "polynomial", "inv_alpha": 4.0},
        "projection": {"kind": "alpha", "alpha": 0.25, "solver": "minka", "steps": 200},
        "n_iters": 200,
    },
    "fig1-anneal": {
        "env": FOUR_ROOM, "policy_mode": "shared",
        "improvement": {"kind": "polynomial", "inv_alpha": 1.0},
        "projection": {"kind": "weighted_kl", "solver": "closed_form"},
        "alpha_schedule": {"kind": "line_search", "values": list(LINE_SEARCH_GRID)},
        "n_iters": 100,
    },
    "op-reinforce": {
        "env": FOUR_ROOM, "policy_mode": "shared",
        "improvement": {"kind": "op_reinforce"},
        "projection": {"kind": "weighted_kl", "solver": "closed_form"},
        "n_iters": 200,
    },
    "offpolicy-optimal": {
        "env": FOUR_ROOM, "policy_mode": "tabular",
        "improvement": {"kind": "op_reinforce"},
        "projection": {"kind": "weighted_kl", "solver": "closed_form"},
        "sampling_policy": "optimal",
        "n_iters": 50,
    },
    "landscape": {
        "env": FOUR_ROOM, "policy_mode": "shared",
        "n_iters": 1,
    },
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    doc = copy.deepcopy(PRESETS[name])
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)
