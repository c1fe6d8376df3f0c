"""Two-agent partially observed Markov game definition, file I/O and checks.

Array layout used throughout the package::

    dynamics[s_l, s_f, a_l, a_f, z_l', z_f', s_l', s_f']
    follower_cost[s_l, s_f, a_l, a_f]
    leader_costs[i, s_l, s_f, a_l, a_f]
    initial[s_l, s_f]

Names are kept as ordered tuples; an element's index is its position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TOL = 1e-9

LEADER = "leader"
FOLLOWER = "follower"


class ModelParseError(ValueError):
    """Model file is not valid JSON or is missing required structure."""


class ModelValidationError(ValueError):
    """One or more model invariants are violated.

    ``violations`` lists a human readable message per failed check, with the
    offending index coordinates spelled out by name.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PomgModel:
    leader_states: tuple[str, ...]
    follower_states: tuple[str, ...]
    leader_actions: tuple[str, ...]
    follower_actions: tuple[str, ...]
    leader_observations: tuple[str, ...]
    follower_observations: tuple[str, ...]
    dynamics: np.ndarray
    follower_cost: np.ndarray
    leader_costs: np.ndarray
    beta: float
    tau: int
    initial: np.ndarray
    criteria: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("leader_states", "follower_states", "leader_actions",
                     "follower_actions", "leader_observations", "follower_observations"):
            object.__setattr__(self, name, tuple(str(x) for x in getattr(self, name)))
        object.__setattr__(self, "dynamics", _frozen(self.dynamics))
        object.__setattr__(self, "follower_cost", _frozen(self.follower_cost))
        lc = np.asarray(self.leader_costs, dtype=float)
        if lc.ndim == 4:
            lc = lc[None]
        object.__setattr__(self, "leader_costs", _frozen(lc))
        object.__setattr__(self, "initial", _frozen(self.initial))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "tau", int(self.tau))
        if not self.criteria:
            object.__setattr__(self, "criteria",
                               tuple(f"criterion_{i + 1}" for i in range(lc.shape[0])))
        else:
            object.__setattr__(self, "criteria", tuple(str(c) for c in self.criteria))
        validate(self)

    # -- sizes -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int, int, int, int, int]:
        """(|S^L|, |S^F|, |A^L|, |A^F|, |Z^L|, |Z^F|)."""
        return (len(self.leader_states), len(self.follower_states),
                len(self.leader_actions), len(self.follower_actions),
                len(self.leader_observations), len(self.follower_observations))

    @property
    def n_criteria(self) -> int:
        return self.leader_costs.shape[0]

    def states(self, agent: str) -> tuple[str, ...]:
        return self.leader_states if agent == LEADER else self.follower_states

    def actions(self, agent: str) -> tuple[str, ...]:
        return self.leader_actions if agent == LEADER else self.follower_actions

    def observations(self, agent: str) -> tuple[str, ...]:
        return self.leader_observations if agent == LEADER else self.follower_observations

    @property
    def transition(self) -> np.ndarray:
        """State transition probabilities P(s'|s,a) as [s_l, s_f, a_l, a_f, s_l', s_f']."""
        t = self._cache.get("transition")
        if t is None:
            t = _frozen(self.dynamics.sum(axis=(4, 5)))
            self._cache["transition"] = t
        return t

    def cost(self, which) -> np.ndarray:
        """Cost table for a leader criterion index or ``"follower"``."""
        if which == FOLLOWER:
            return self.follower_cost
        return self.leader_costs[int(which)]

    def replace(self, **changes) -> "PomgModel":
        kw = {k: getattr(self, k) for k in (
            "leader_states", "follower_states", "leader_actions", "follower_actions",
            "leader_observations", "follower_observations", "dynamics", "follower_cost",
            "leader_costs", "beta", "tau", "initial", "criteria")}
        kw.update(changes)
        return PomgModel(**kw)

    def __eq__(self, other):
        if not isinstance(other, PomgModel):
            return NotImplemented
        names = ("leader_states", "follower_states", "leader_actions", "follower_actions",
                 "leader_observations", "follower_observations", "beta", "tau", "criteria")
        if any(getattr(self, n) != getattr(other, n) for n in names):
            return False
        arrays = ("dynamics", "follower_cost", "leader_costs", "initial")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in arrays)

    __hash__ = object.__hash__


def validate(m: PomgModel) -> None:
    """Raise :class:`ModelValidationError` listing every violated invariant."""
    errs: list[str] = []
    sets = {
        "leader states": m.leader_states, "follower states": m.follower_states,
        "leader actions": m.leader_actions, "follower actions": m.follower_actions,
        "leader observations": m.leader_observations,
        "follower observations": m.follower_observations,
    }
    for label, names in sets.items():
        if len(names) == 0:
            errs.append(f"{label} must be nonempty")
        if len(set(names)) != len(names):
            errs.append(f"{label} contain duplicate names")
    if errs:
        raise ModelValidationError(errs)

    nsl, nsf, nal, naf, nzl, nzf = m.shape
    exp = (nsl, nsf, nal, naf, nzl, nzf, nsl, nsf)
    if m.dynamics.shape != exp:
        errs.append(f"dynamics has shape {m.dynamics.shape}, expected {exp}")
    if m.follower_cost.shape != exp[:4]:
        errs.append(f"follower_cost has shape {m.follower_cost.shape}, expected {exp[:4]}")
    if m.leader_costs.ndim != 5 or m.leader_costs.shape[1:] != exp[:4]:
        errs.append(f"leader_costs has shape {m.leader_costs.shape}, expected (N,)+{exp[:4]}")
    elif m.leader_costs.shape[0] < 1:
        errs.append("at least one leader criterion is required")
    if m.initial.shape != (nsl, nsf):
        errs.append(f"initial has shape {m.initial.shape}, expected {(nsl, nsf)}")
    if len(m.criteria) != m.leader_costs.shape[0]:
        errs.append("criteria names do not match the number of leader cost tables")
    if errs:
        raise ModelValidationError(errs)

    if not (0.0 <= m.beta < 1.0):
        errs.append(f"beta={m.beta} outside [0, 1)")
    if m.tau < 1:
        errs.append(f"tau={m.tau} must be >= 1")
    for label, arr in (("dynamics", m.dynamics), ("follower_cost", m.follower_cost),
                       ("leader_costs", m.leader_costs), ("initial", m.initial)):
        if not np.all(np.isfinite(arr)):
            errs.append(f"{label} contains non-finite values")

    neg = np.argwhere(m.dynamics < 0)
    for idx in neg[:20]:
        errs.append(f"dynamics entry {_coord(m, idx)} is negative ({m.dynamics[tuple(idx)]!r})")
    sums = m.dynamics.sum(axis=(4, 5, 6, 7))
    bad = np.argwhere(np.abs(sums - 1.0) > TOL)
    for idx in bad[:20]:
        sl, sf, al, af = idx
        errs.append(
            f"dynamics slice (s_l={m.leader_states[sl]}, s_f={m.follower_states[sf]}, "
            f"a_l={m.leader_actions[al]}, a_f={m.follower_actions[af]}) sums to "
            f"{sums[tuple(idx)]:.12g}")
    if len(bad) > 20:
        errs.append(f"... and {len(bad) - 20} more dynamics slices off by more than {TOL}")
    if np.any(m.initial < 0):
        errs.append("initial distribution has negative entries")
    if abs(m.initial.sum() - 1.0) > TOL:
        errs.append(f"initial distribution sums to {m.initial.sum():.12g}")
    if errs:
        raise ModelValidationError(errs)


def _coord(m: PomgModel, idx) -> str:
    sl, sf, al, af, zl, zf, sl2, sf2 = (int(i) for i in idx)
    return (f"(s_l={m.leader_states[sl]}, s_f={m.follower_states[sf]}, "
            f"a_l={m.leader_actions[al]}, a_f={m.follower_actions[af]}, "
            f"z_l'={m.leader_observations[zl]}, z_f'={m.follower_observations[zf]}, "
            f"s_l'={m.leader_states[sl2]}, s_f'={m.follower_states[sf2]})")


# -- observation channel factorization -----------------------------------

@dataclass(frozen=True, eq=False)
class FactoredObservation:
    """Per-joint-action observation channels.

    leader_channel[a_l, a_f, s_f', z_l'] = P(z_l' | s_f', a)
    follower_channel[a_l, a_f, s_l', z_f'] = P(z_f' | s_l', a)
    """

    leader_channel: np.ndarray
    follower_channel: np.ndarray


def compose_dynamics(transition, leader_channel, follower_channel) -> np.ndarray:
    """Joint kernel from P(s'|s,a) and the two independent observation channels."""
    t = np.asarray(transition, dtype=float)
    lc = np.asarray(leader_channel, dtype=float)
    fc = np.asarray(follower_channel, dtype=float)
    # t[sl,sf,al,af,sl2,sf2] lc[al,af,sf2,zl] fc[al,af,sl2,zf]
    return np.einsum("abcdef,cdfg,cdeh->abcdghef", t, lc, fc)


def validate_factorization(model: PomgModel) -> FactoredObservation | None:
    """Recover the follower/leader observation channels, or ``None``.

    The joint observation kernel must equal P(z_f'|s_l',a) P(z_l'|s_f',a) for
    every positive-probability transition, within ``TOL``.
    """
    D = model.dynamics
    T = model.transition
    nsl, nsf, nal, naf, nzl, nzf = model.shape
    lc = np.zeros((nal, naf, nsf, nzl))
    fc = np.zeros((nal, naf, nsl, nzf))
    lw = np.zeros((nal, naf, nsf))
    fw = np.zeros((nal, naf, nsl))
    # conditional joint observation law, defined where T > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = D / T[:, :, :, :, None, None, :, :]
    pos = T > TOL
    for sl, sf, al, af, sl2, sf2 in np.argwhere(pos):
        o = cond[sl, sf, al, af, :, :, sl2, sf2]
        lc[al, af, sf2] += o.sum(axis=1)
        lw[al, af, sf2] += 1
        fc[al, af, sl2] += o.sum(axis=0)
        fw[al, af, sl2] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        lc = np.where(lw[..., None] > 0, lc / np.maximum(lw, 1)[..., None], 1.0 / nzl)
        fc = np.where(fw[..., None] > 0, fc / np.maximum(fw, 1)[..., None], 1.0 / nzf)
    rebuilt = compose_dynamics(T, lc, fc)
    if np.max(np.abs(rebuilt - D)) > TOL:
        return None
    return FactoredObservation(_frozen(lc), _frozen(fc))


# -- file format ----------------------------------------------------------

_DYN_KEYS = ("s_l", "s_f", "a_l", "a_f", "z_l'", "z_f'", "s_l'", "s_f'")
_COST_KEYS = ("s_l", "s_f", "a_l", "a_f")


def _index(names: tuple[str, ...], value, what: str) -> int:
    try:
        return names.index(str(value))
    except ValueError:
        raise ModelParseError(f"unknown {what} {value!r}") from None


def model_from_dict(doc: dict) -> PomgModel:
    try:
        states, actions, obs = doc["states"], doc["actions"], doc["observations"]
        SL, SF = tuple(states["leader"]), tuple(states["follower"])
        AL, AF = tuple(actions["leader"]), tuple(actions["follower"])
        ZL, ZF = tuple(obs["leader"]), tuple(obs["follower"])
        beta, tau = float(doc["beta"]), int(doc["tau"])
        dyn_entries = doc["dynamics"]
        fcost_entries = doc["follower_cost"]
        lcost_tables = doc["leader_costs"]
        init_entries = doc["initial"]
    except (KeyError, TypeError) as exc:
        raise ModelParseError(f"missing or malformed key: {exc}") from None

    sets = {
        "s_l": (SL, "leader state"), "s_f": (SF, "follower state"),
        "a_l": (AL, "leader action"), "a_f": (AF, "follower action"),
        "z_l'": (ZL, "leader observation"), "z_f'": (ZF, "follower observation"),
        "s_l'": (SL, "leader state"), "s_f'": (SF, "follower state"),
    }
    shape4 = (len(SL), len(SF), len(AL), len(AF))
    D = np.zeros(shape4 + (len(ZL), len(ZF), len(SL), len(SF)))
    for e in dyn_entries:
        try:
            idx = tuple(_index(sets[k][0], e[k], sets[k][1]) for k in _DYN_KEYS)
            D[idx] += float(e["p"])
        except KeyError as exc:
            raise ModelParseError(f"dynamics entry missing key {exc}: {e!r}") from None

    def cost_table(entries, label):
        C = np.zeros(shape4)
        for e in entries:
            try:
                idx = tuple(_index(sets[k][0], e[k], sets[k][1]) for k in _COST_KEYS)
                C[idx] += float(e["c"])
            except KeyError as exc:
                raise ModelParseError(f"{label} entry missing key {exc}: {e!r}") from None
        return C

    FC = cost_table(fcost_entries, "follower_cost")
    if not isinstance(lcost_tables, list) or not lcost_tables:
        raise ModelParseError("leader_costs must be a nonempty list of sparse tables")
    LC = np.stack([cost_table(t, f"leader_costs[{i}]") for i, t in enumerate(lcost_tables)])
    init = np.zeros((len(SL), len(SF)))
    for e in init_entries:
        try:
            init[_index(SL, e["s_l"], "leader state"), _index(SF, e["s_f"], "follower state")] += float(e["p"])
        except KeyError as exc:
            raise ModelParseError(f"initial entry missing key {exc}: {e!r}") from None
    return PomgModel(SL, SF, AL, AF, ZL, ZF, D, FC, LC, beta, tau, init,
                     criteria=tuple(doc.get("criteria", ())))


def model_to_dict(m: PomgModel) -> dict:
    names = (m.leader_states, m.follower_states, m.leader_actions, m.follower_actions,
             m.leader_observations, m.follower_observations, m.leader_states, m.follower_states)
    dyn = []
    for idx in np.argwhere(m.dynamics != 0):
        e = {k: names[j][int(i)] for j, (k, i) in enumerate(zip(_DYN_KEYS, idx))}
        e["p"] = float(m.dynamics[tuple(idx)])
        dyn.append(e)

    def sparse(C):
        out = []
        for idx in np.argwhere(C != 0):
            e = {k: names[j][int(i)] for j, (k, i) in enumerate(zip(_COST_KEYS, idx))}
            e["c"] = float(C[tuple(idx)])
            out.append(e)
        return out

    return {
        "states": {"leader": list(m.leader_states), "follower": list(m.follower_states)},
        "actions": {"leader": list(m.leader_actions), "follower": list(m.follower_actions)},
        "observations": {"leader": list(m.leader_observations),
                         "follower": list(m.follower_observations)},
        "criteria": list(m.criteria),
        "beta": m.beta,
        "tau": m.tau,
        "initial": [{"s_l": m.leader_states[i], "s_f": m.follower_states[j],
                     "p": float(m.initial[i, j])} for i, j in np.argwhere(m.initial != 0)],
        "follower_cost": sparse(m.follower_cost),
        "leader_costs": [sparse(C) for C in m.leader_costs],
        "dynamics": dyn,
    }


def load_model(path) -> PomgModel:
    """Read and validate a model file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelParseError(f"{path}: top level must be an object")
    return model_from_dict(doc)


def dumps_model(m: PomgModel) -> str:
    return json.dumps(model_to_dict(m), indent=1) + "\n"


def save_model(m: PomgModel, path) -> None:
    Path(path).write_text(dumps_model(m))


def random_model(rng, n_sl=2, n_sf=2, n_al=2, n_af=2, n_zl=2, n_zf=2, beta=0.9, tau=1,
                 n_criteria=1, factored=True, sparsity=0.0, cost_scale=1.0) -> PomgModel:
    """Random valid instance; with ``factored`` the observation kernel splits
    into independent leader/follower channels.  ``sparsity`` zeroes that
    fraction of transition entries (each row keeps at least one)."""
    rng = np.random.default_rng(rng)

    def simplex(shape, k):
        x = rng.random(shape + (k,))
        if sparsity > 0:
            mask = rng.random(x.shape) < sparsity
            keep = rng.integers(0, k, size=shape)
            np.put_along_axis(mask, keep[..., None], False, axis=-1)
            x = np.where(mask, 0.0, x)
        return x / x.sum(axis=-1, keepdims=True)

    T = simplex((n_sl, n_sf, n_al, n_af), n_sl * n_sf).reshape(
        n_sl, n_sf, n_al, n_af, n_sl, n_sf)
    if factored:
        lc = simplex((n_al, n_af, n_sf), n_zl)
        fc = simplex((n_al, n_af, n_sl), n_zf)
        D = compose_dynamics(T, lc, fc)
    else:
        obs = simplex((n_sl, n_sf, n_al, n_af, n_sl, n_sf), n_zl * n_zf).reshape(
            n_sl, n_sf, n_al, n_af, n_sl, n_sf, n_zl, n_zf)
        D = np.einsum("abcdef,abcdefgh->abcdghef", T, obs)
    init = rng.random((n_sl, n_sf))
    init /= init.sum()
    return PomgModel(
        [f"L{i}" for i in range(n_sl)], [f"F{i}" for i in range(n_sf)],
        [f"la{i}" for i in range(n_al)], [f"fa{i}" for i in range(n_af)],
        [f"lz{i}" for i in range(n_zl)], [f"fz{i}" for i in range(n_zf)],
        D, cost_scale * rng.random((n_sl, n_sf, n_al, n_af)),
        cost_scale * rng.random((n_criteria, n_sl, n_sf, n_al, n_af)), beta, tau, init)
