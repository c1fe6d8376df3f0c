"""Stationary finite-memory policies: a distribution over actions per window."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .history import WindowSpace, enumerate_windows
from .model import TOL, PomgModel


class PolicyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteMemoryPolicy:
    """``table[w, a]`` = probability of action ``a`` in window ``space[w]``."""

    agent: str
    space: WindowSpace
    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2 or t.shape[0] != len(self.space):
            raise PolicyError(f"policy table shape {t.shape} does not cover "
                              f"{len(self.space)} windows")
        if np.any(t < -TOL) or np.any(np.abs(t.sum(axis=1) - 1.0) > TOL):
            bad = int(np.argmax(np.abs(t.sum(axis=1) - 1.0)))
            raise PolicyError(f"row {bad} ({self.space.names[bad]}) is not a distribution")
        t = np.clip(t, 0.0, None)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.table == 0) | (self.table == 1)))

    def key(self) -> bytes:
        return self.table.tobytes()

    def __eq__(self, other):
        if not isinstance(other, FiniteMemoryPolicy):
            return NotImplemented
        return (self.agent == other.agent and self.space is other.space
                and np.array_equal(self.table, other.table))

    __hash__ = object.__hash__


def deterministic_policy(space: WindowSpace, n_actions: int, actions) -> FiniteMemoryPolicy:
    actions = np.asarray(actions, dtype=np.intp)
    t = np.zeros((len(space), n_actions))
    t[np.arange(len(space)), actions] = 1.0
    return FiniteMemoryPolicy(space.agent, space, t)


def uniform_policy(space: WindowSpace, n_actions: int) -> FiniteMemoryPolicy:
    return FiniteMemoryPolicy(space.agent, space, np.full((len(space), n_actions), 1.0 / n_actions))


def policy_to_dict(policy: FiniteMemoryPolicy, model: PomgModel) -> dict:
    return {
        "agent": policy.agent,
        "actions": list(model.actions(policy.agent)),
        "rows": {name: [float(p) for p in row]
                 for name, row in zip(policy.space.names, policy.table)},
    }


def dumps_policy(policy: FiniteMemoryPolicy, model: PomgModel) -> str:
    return json.dumps(policy_to_dict(policy, model), indent=1) + "\n"


def save_policy(policy: FiniteMemoryPolicy, model: PomgModel, path) -> None:
    Path(path).write_text(dumps_policy(policy, model))


def policy_from_dict(doc: dict, model: PomgModel) -> FiniteMemoryPolicy:
    try:
        agent = doc["agent"]
        rows = doc["rows"]
    except KeyError as exc:
        raise PolicyError(f"policy file missing key {exc}") from None
    if agent not in ("leader", "follower"):
        raise PolicyError(f"unknown agent {agent!r}")
    acts = tuple(doc.get("actions", model.actions(agent)))
    if acts != model.actions(agent):
        raise PolicyError(f"policy actions {acts} do not match model actions "
                          f"{model.actions(agent)}")
    space = enumerate_windows(model, agent)
    table = np.zeros((len(space), len(acts)))
    missing = [n for n in space.names if n not in rows]
    if missing:
        raise PolicyError(f"policy has no row for window(s) {missing[:5]}")
    for i, name in enumerate(space.names):
        table[i] = rows[name]
    return FiniteMemoryPolicy(agent, space, table)


def load_policy(path, model: PomgModel) -> FiniteMemoryPolicy:
    return policy_from_dict(json.loads(Path(path).read_text()), model)
