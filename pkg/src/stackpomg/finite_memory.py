"""Turn the follower's perfect-memory best response into a finite-memory policy.

For each follower window the belief over leader windows is rebuilt by
replaying the window's own steps through Bayes' rule.  Startup windows are
replayed exactly from epoch 0.  Full windows have lost the oldest prior, so
the replay starts from a uniform distribution over leader windows (and over
the follower state preceding the oldest recorded triple).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .follower import BestResponseProblem, GammaSet, greedy_action
from .history import NULL, Window, enumerate_windows, initial_follower_belief
from .model import FOLLOWER, PomgModel
from .policy import FiniteMemoryPolicy

LIKELIHOOD_FLOOR = 1e-12


@dataclass(frozen=True)
class Approximation:
    policy: FiniteMemoryPolicy
    beliefs: np.ndarray  # [w_f, w_l], NaN rows for unreachable windows
    unreachable: tuple[int, ...]


def _steps_oldest_first(w: Window) -> list[tuple[int, int, int]]:
    return [t for t in reversed(w.triples) if t[0] != NULL]


def replay_belief(model: PomgModel, kernel: np.ndarray, leader_space, w: Window):
    """Belief over leader windows at the end of ``w``; ``None`` if the replay
    hits a zero-likelihood step."""
    nsf = model.shape[1]
    steps = _steps_oldest_first(w)
    if w.depth < w.tau:
        oldest = w.triples[w.depth]
        s_prev = oldest[1]
        if model.initial[:, s_prev].sum() <= 0:
            return None
        y = initial_follower_belief(model, leader_space, s_prev).weights.copy()
        prior_states = None
    else:
        y = np.full(len(leader_space), 1.0 / len(leader_space))
        prior_states = np.full(nsf, 1.0 / nsf)
    for z, s_next, a in steps:
        if prior_states is not None:
            # unknown follower state before the oldest triple: average it out
            M = np.einsum("s,svw->vw", prior_states, kernel[:, a, z, s_next])
            prior_states = None
        else:
            M = kernel[s_prev, a, z, s_next]
        u = y @ M
        lik = u.sum()
        if lik < LIKELIHOOD_FLOOR:
            return None
        y = u / lik
        s_prev = s_next
    return y


def approximate(model: PomgModel, leader_policy, gamma: GammaSet,
                problem: BestResponseProblem | None = None) -> Approximation:
    """Finite-memory follower policy plus the replayed beliefs and the list
    of windows flagged unreachable.  Actions come from a one-step lookahead
    on ``gamma`` at each replayed belief."""
    fspace = enumerate_windows(model, FOLLOWER)
    lspace = leader_policy.space
    pb = problem or BestResponseProblem(model, leader_policy)
    kernel = pb.kernel
    naf = model.shape[3]
    table = np.empty((len(fspace), naf))
    beliefs = np.full((len(fspace), len(lspace)), np.nan)
    bad = []
    for i, w in enumerate(fspace):
        y = replay_belief(model, kernel, lspace, w)
        if y is None:
            table[i] = 1.0 / naf
            bad.append(i)
            continue
        beliefs[i] = y
        table[i] = greedy_action(pb, gamma, w.state, y)
    return Approximation(FiniteMemoryPolicy(FOLLOWER, fspace, table), beliefs, tuple(bad))


def approximate_policy(model: PomgModel, leader_policy, gamma: GammaSet) -> FiniteMemoryPolicy:
    return approximate(model, leader_policy, gamma).policy
