"""Information windows, window spaces and beliefs over the opponent's window.

A window holds the agent's last ``tau`` triples ``(z(t-k), s(t-k), a(t-k-1))``,
newest first.  Epoch 0 contributes the triple ``(NULL, s(0), NULL)``; slots
older than epoch 0 are ``(NULL, NULL, NULL)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .model import FOLLOWER, LEADER, TOL, PomgModel

NULL = -1
DEFAULT_WINDOW_CAP = 10**6


class WindowSpaceTooLarge(RuntimeError):
    pass


class ImpossibleObservation(ValueError):
    """Observed step has (numerically) zero probability under the belief."""


def other(agent: str) -> str:
    return FOLLOWER if agent == LEADER else LEADER


@dataclass(frozen=True)
class Window:
    agent: str
    triples: tuple[tuple[int, int, int], ...]

    @property
    def tau(self) -> int:
        return len(self.triples)

    @property
    def state(self) -> int:
        return self.triples[0][1]

    @property
    def observations(self) -> tuple[int, ...]:
        return tuple(t[0] for t in self.triples)

    @property
    def states(self) -> tuple[int, ...]:
        return tuple(t[1] for t in self.triples)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(t[2] for t in self.triples)

    @property
    def is_startup(self) -> bool:
        return any(t[0] == NULL for t in self.triples)

    @property
    def depth(self) -> int:
        """Number of complete triples (epochs elapsed, capped at tau)."""
        return sum(1 for t in self.triples if t[0] != NULL)


def startup_window(agent: str, state: int, tau: int) -> Window:
    return Window(agent, ((NULL, int(state), NULL),) + ((NULL, NULL, NULL),) * (tau - 1))


def advance_window(w: Window, step: tuple[int, int, int]) -> Window:
    """Prepend ``(z(t+1), s(t+1), a(t))`` and drop the oldest triple."""
    z, s, a = step
    return Window(w.agent, ((int(z), int(s), int(a)),) + w.triples[:-1])


def window_string(w: Window, model: PomgModel) -> str:
    Z, S, A = model.observations(w.agent), model.states(w.agent), model.actions(w.agent)

    def nm(names, i):
        return "-" if i == NULL else names[i]

    return ("z:" + ",".join(nm(Z, i) for i in w.observations)
            + "|s:" + ",".join(nm(S, i) for i in w.states)
            + "|a:" + ",".join(nm(A, i) for i in w.actions))


def _sort_key(w: Window):
    return (w.depth, w.triples)


class WindowSpace:
    """Deterministically ordered set of windows for one agent.

    Besides the window list this carries the lookup tables the solvers use:
    ``state_of[w]`` (current state), ``succ[w, z, s, a]`` (index of the
    advanced window, ``-1`` when outside the space) and ``startup[s]``.
    """

    def __init__(self, model: PomgModel, agent: str, windows: Iterable[Window]):
        self.agent = agent
        self.tau = model.tau
        self.windows: tuple[Window, ...] = tuple(sorted(set(windows), key=_sort_key))
        self.index = {w: i for i, w in enumerate(self.windows)}
        self.names = tuple(window_string(w, model) for w in self.windows)
        nz, ns, na = (len(model.observations(agent)), len(model.states(agent)),
                      len(model.actions(agent)))
        self.state_of = np.array([w.state for w in self.windows], dtype=np.intp)
        succ = np.full((len(self.windows), nz, ns, na), -1, dtype=np.intp)
        for i, w in enumerate(self.windows):
            for z in range(nz):
                for s in range(ns):
                    for a in range(na):
                        succ[i, z, s, a] = self.index.get(advance_window(w, (z, s, a)), -1)
        self.succ = succ
        self.startup = np.array(
            [self.index.get(startup_window(agent, s, self.tau), -1) for s in range(ns)],
            dtype=np.intp)
        for arr in (self.state_of, self.succ, self.startup):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self) -> Iterator[Window]:
        return iter(self.windows)

    def __getitem__(self, i: int) -> Window:
        return self.windows[i]

    def index_of(self, w: Window) -> int:
        return self.index[w]

    def __repr__(self):
        return f"WindowSpace({self.agent}, tau={self.tau}, size={len(self)})"


def full_window_count(model: PomgModel, agent: str) -> int:
    ns, nz, na = (len(model.states(agent)), len(model.observations(agent)),
                  len(model.actions(agent)))
    k = ns * nz * na
    return ns * sum(k**t for t in range(model.tau)) + k**model.tau


def enumerate_windows(model: PomgModel, agent: str, reachable: bool = True,
                      cap: int = DEFAULT_WINDOW_CAP) -> WindowSpace:
    """All windows of ``agent``.

    With ``reachable`` only windows that can occur with positive probability
    under some action sequence and some opponent state are kept; the result
    is closed under every positive-probability step.
    """
    key = ("windows", agent, reachable)
    cached = model._cache.get(key)
    if cached is not None:
        return cached
    total = full_window_count(model, agent)
    if total > cap and not reachable:
        raise WindowSpaceTooLarge(f"{agent} window space has {total} windows (cap {cap})")
    ns, nz, na = (len(model.states(agent)), len(model.observations(agent)),
                  len(model.actions(agent)))
    tau = model.tau
    if not reachable:
        wins = []
        frontier = [startup_window(agent, s, tau) for s in range(ns)]
        wins.extend(frontier)
        for _ in range(tau):
            frontier = [advance_window(w, (z, s, a)) for w in frontier
                        for z in range(nz) for s in range(ns) for a in range(na)]
            wins.extend(frontier)
        space = WindowSpace(model, agent, wins)
    else:
        steps = _possible_steps(model, agent)
        init_marg = model.initial.sum(axis=1 if agent == LEADER else 0)
        seen = {startup_window(agent, s, tau) for s in range(ns) if init_marg[s] > 0}
        stack = sorted(seen, key=_sort_key)
        while stack:
            w = stack.pop()
            for z, s2, a in steps[w.state]:
                w2 = advance_window(w, (z, s2, a))
                if w2 not in seen:
                    seen.add(w2)
                    if len(seen) > cap:
                        raise WindowSpaceTooLarge(
                            f"{agent} reachable window space exceeds cap {cap}")
                    stack.append(w2)
        space = WindowSpace(model, agent, seen)
    model._cache[key] = space
    return space


def _possible_steps(model: PomgModel, agent: str) -> list[list[tuple[int, int, int]]]:
    """For each own state: the (z', s', a) steps with positive probability for
    some opponent state and some opponent action."""
    D = model.dynamics
    if agent == LEADER:
        # [sl, sf, al, af, zl, zf, sl2, sf2] -> [sl, al, zl, sl2]
        pos = D.sum(axis=(5, 7)).max(axis=(1, 3)) > 0
        out = []
        for sl in range(pos.shape[0]):
            out.append([(z, s2, a) for a, z, s2 in np.argwhere(pos[sl])])
    else:
        pos = D.sum(axis=(4, 6)).max(axis=(0, 2)) > 0  # [sf, af, zf, sf2]
        out = []
        for sf in range(pos.shape[0]):
            out.append([(z, s2, a) for a, z, s2 in np.argwhere(pos[sf])])
    return [[tuple(int(v) for v in t) for t in lst] for lst in out]


# -- beliefs -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Belief:
    """Distribution over the opponent's window space, held by ``owner``."""

    owner: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < -TOL) or abs(w.sum() - 1.0) > TOL:
            raise ValueError("belief weights must be a nonnegative vector summing to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)


def uniform_belief(space: WindowSpace, owner: str | None = None) -> Belief:
    n = len(space)
    if n == 0:
        raise ValueError("empty window space")
    return Belief(owner or other(space.agent), np.full(n, 1.0 / n))


def point_belief(space: WindowSpace, index: int, owner: str | None = None) -> Belief:
    w = np.zeros(len(space))
    w[index] = 1.0
    return Belief(owner or other(space.agent), w)


def leader_step_kernel(model: PomgModel, leader_policy) -> np.ndarray:
    """Joint kernel over leader windows seen from the follower's side.

    Returns ``K[s_f, a_f, z_f', s_f', w, w']`` =
    sum over a_l, z_l', s_l' with advance(w, (z_l', s_l', a_l)) = w' of
    pi^L(a_l|w) P(z', s' | s_l(w), s_f, a).  The follower's Bayes update is
    ``y' ∝ y @ K[s_f, a_f, z_f', s_f']``.
    """
    space = leader_policy.space
    table = leader_policy.table
    nsl, nsf, nal, naf, nzl, nzf = model.shape
    nw = len(space)
    # [w, sf, al, af, zl, zf, sl2, sf2]
    Dw = model.dynamics[space.state_of] * table[:, None, :, None, None, None, None, None]
    K = np.zeros((nsf, naf, nzf, nsf, nw, nw))
    rows = np.arange(nw)
    for al in range(nal):
        for zl in range(nzl):
            for sl2 in range(nsl):
                tgt = space.succ[:, zl, sl2, al]
                contrib = Dw[:, :, al, :, zl, :, sl2, :]  # [w, sf, af, zf, sf2]
                live = np.any(contrib > 0, axis=(1, 2, 3, 4))
                if np.any(live & (tgt < 0)):
                    raise RuntimeError("leader window space is not closed under the dynamics")
                src = rows[live]
                # (w, tgt[w]) pairs are distinct, so plain fancy assignment accumulates safely
                K[:, :, :, :, src, tgt[src]] += np.moveaxis(contrib[src], 0, -1)
    return K


def belief_update(model: PomgModel, leader_policy, y: Belief, s_f: int, a_f: int,
                  obs: tuple[int, int], kernel: np.ndarray | None = None):
    """Follower's Bayes step after acting ``a_f`` in ``s_f`` and observing
    ``obs = (z_f', s_f')``.  Returns ``(posterior, likelihood)``."""
    z_f, s_f2 = obs
    if kernel is None:
        kernel = leader_step_kernel(model, leader_policy)
    unnorm = y.weights @ kernel[s_f, a_f, z_f, s_f2]
    lik = float(unnorm.sum())
    if lik < 1e-12:
        raise ImpossibleObservation(
            f"observation (z_f'={z_f}, s_f'={s_f2}) has likelihood {lik:.3g}")
    return Belief(y.owner, unnorm / lik), lik


def initial_follower_belief(model: PomgModel, space: WindowSpace, s_f: int) -> Belief:
    """Exact epoch-0 belief over leader startup windows given the follower's state."""
    col = model.initial[:, s_f]
    tot = col.sum()
    if tot <= 0:
        raise ValueError(f"follower state {s_f} has zero initial probability")
    w = np.zeros(len(space))
    for sl, p in enumerate(col):
        if p > 0:
            w[space.startup[sl]] += p / tot
    return Belief(FOLLOWER, w)


def dumps_belief_csv(space: WindowSpace, belief: Belief) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["index", "window", "weight"])
    for i, (name, p) in enumerate(zip(space.names, belief.weights)):
        wr.writerow([i, name, repr(float(p))])
    return buf.getvalue()
