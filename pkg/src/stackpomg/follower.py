"""Follower best response to a fixed finite-memory leader policy.

The follower's value is a minimum of linear functions of its belief over
leader windows, one collection of gamma vectors per follower state.  Value
iteration applies the exact backup (cross-sum over next follower state and
observation, union over follower actions) followed by PURGE, which keeps
the smallest subset with the same lower envelope.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import highspy
import numpy as np
from scipy.optimize import linprog

from . import kernels
from .history import (WindowSpace, enumerate_windows, initial_follower_belief,
                      leader_step_kernel)
from .model import FOLLOWER, LEADER, PomgModel

log = logging.getLogger(__name__)

TIE_TOL = 1e-9
DOMINANCE_TOL = 1e-10
WITNESS_TOL = 1e-10
DEFAULT_CANDIDATE_CAP = 10**7



class PurgeError(RuntimeError):
    pass


class CandidateCapExceeded(RuntimeError):
    pass


class NotConverged(RuntimeError):
    def __init__(self, gamma: "GammaSet", report: "SolveReport"):
        self.gamma = gamma
        self.report = report
        super().__init__(f"value iteration stopped after {report.iterations} iterations "
                         f"with residual {report.final_residual:.3e} "
                         f"(target {report.threshold:.3e})")


@dataclass(frozen=True, eq=False)
class GammaVector:
    values: np.ndarray
    action: int
    provenance: dict = field(default_factory=dict)


class GammaSet:
    """Per follower state, a list of gamma vectors over leader windows."""

    def __init__(self, vectors):
        self.vectors: tuple[tuple[GammaVector, ...], ...] = tuple(tuple(v) for v in vectors)
        for s, vs in enumerate(self.vectors):
            if not vs:
                raise ValueError(f"empty gamma set for follower state {s}")
        self._mats = [np.array([g.values for g in vs]) for vs in self.vectors]
        for m in self._mats:
            m.setflags(write=False)

    def __getitem__(self, s_f: int) -> tuple[GammaVector, ...]:
        return self.vectors[s_f]

    def __len__(self):
        return len(self.vectors)

    def matrix(self, s_f: int) -> np.ndarray:
        return self._mats[s_f]

    def actions(self, s_f: int) -> np.ndarray:
        return np.array([g.action for g in self.vectors[s_f]], dtype=np.intp)

    def counts(self) -> list[int]:
        return [len(v) for v in self.vectors]

    @property
    def dim(self) -> int:
        return self._mats[0].shape[1]

    @classmethod
    def zeros(cls, n_follower_states: int, dim: int) -> "GammaSet":
        return cls([[GammaVector(np.zeros(dim), -1)] for _ in range(n_follower_states)])


@dataclass
class SolveReport:
    epsilon: float
    threshold: float
    iterations: int = 0
    residuals: list = field(default_factory=list)
    gamma_counts: list = field(default_factory=list)
    converged: bool = False
    prune_tol: float = WITNESS_TOL

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("inf")

    @property
    def sup_norm_residual(self) -> float:
        return self.final_residual

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual", "gamma_counts"])
        for k, (r, c) in enumerate(zip(self.residuals, self.gamma_counts), start=1):
            w.writerow([k, repr(float(r)), ";".join(str(x) for x in c)])
        return buf.getvalue()


# -- PURGE ---------------------------------------------------------------------

def canonical_order(V: np.ndarray) -> np.ndarray:
    """Lexicographic row order; makes pruning independent of arrival order."""
    if V.shape[0] <= 1:
        return np.arange(V.shape[0])
    return np.lexsort(V.T[::-1])


def _seed_beliefs(d: int) -> np.ndarray:
    rng = np.random.default_rng(12345)
    pts = [np.eye(d), np.full((1, d), 1.0 / d), rng.dirichlet(np.ones(d), size=2 * d)]
    return np.vstack(pts)


_SEED_CACHE: dict[int, np.ndarray] = {}


class _WitnessLP:
    """Lark filtering LP kept alive across candidates of one purge call.

    Variables are the belief ``y`` and the envelope height ``h``; rows are
    ``h <= u.y`` for every vector ``u`` accepted so far.  A candidate ``v``
    has a witness when ``max h - v.y`` exceeds the tolerance, so only the
    objective changes from candidate to candidate.
    """

    KEEP = object()

    def __init__(self, d: int, tol: float):
        self.d = d
        self.tol = tol
        self.U: list[np.ndarray] = []
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("primal_feasibility_tolerance", 1e-10)
        h.setOptionValue("dual_feasibility_tolerance", 1e-10)
        inf = highspy.kHighsInf
        h.addVars(d + 1, np.r_[np.zeros(d), -inf], np.r_[np.ones(d), inf])
        h.addRow(1.0, 1.0, d, np.arange(d, dtype=np.int32), np.ones(d))
        self.h = h
        self._cols = np.arange(d + 1, dtype=np.int32)

    def add(self, u: np.ndarray) -> None:
        self.h.addRow(-highspy.kHighsInf, 0.0, self.d + 1, self._cols, np.r_[-u, 1.0])
        self.U.append(u)

    def _fallback(self, v: np.ndarray):
        """Fresh solve through scipy when the warm-started model stalls."""
        d = self.d
        U = np.array(self.U)
        res = linprog(np.r_[v, -1.0], A_ub=np.hstack([-U, np.ones((len(U), 1))]),
                      b_ub=np.zeros(len(U)), A_eq=np.r_[np.ones(d), 0.0][None, :], b_eq=[1.0],
                      bounds=[(0, None)] * d + [(None, None)], method="highs")
        return res.x if res.status == 0 else None

    def witness(self, v: np.ndarray, idx: int):
        """A belief where ``v`` beats every accepted vector by more than the
        tolerance, ``None`` if there is none, or :attr:`KEEP` when neither LP
        solver returns an answer (keeping ``v`` is always safe)."""
        if not self.U:
            y = np.zeros(self.d)
            y[int(np.argmin(v))] = 1.0
            return y
        h = self.h
        h.changeColsCost(self.d + 1, self._cols, np.r_[v, -1.0])
        h.run()
        if h.getModelStatus() == highspy.HighsModelStatus.kOptimal:
            x = np.asarray(h.getSolution().col_value)
        else:
            h.clearSolver()
            x = self._fallback(v)
            if x is None:
                log.warning("witness LP for vector %d failed; keeping it", idx)
                return self.KEEP
        margin = x[-1] - float(v @ x[:-1])
        if margin <= self.tol:
            return None
        y = np.clip(x[:-1], 0.0, None)
        return y / y.sum()


def purge_indices(V: np.ndarray, presorted: bool = False,
                  support: np.ndarray | None = None, tol: float = WITNESS_TOL) -> np.ndarray:
    """Indices (ascending) of the minimal subset of rows of ``V`` with the same
    lower envelope over the probability simplex.

    With ``support`` the envelope is only preserved on the face of beliefs
    concentrated on those coordinates.  A ``tol`` above the default turns
    this into tolerance pruning: vectors that lower the envelope by at most
    ``tol`` against the final kept set are dropped, so the envelope rises by
    at most ``tol``.
    """
    V = np.asarray(V, dtype=float)
    if support is not None and len(support) < V.shape[1]:
        V = V[:, support]
    n = V.shape[0]
    if n == 0:
        raise ValueError("purge of an empty set")
    order = np.arange(n) if presorted else canonical_order(V)
    Vs = np.ascontiguousarray(V[order])
    keep = kernels.dominance_keep_mask(Vs, DOMINANCE_TOL)
    cand = np.flatnonzero(keep)
    if cand.size <= 1:
        return np.sort(order[cand])
    C = Vs[cand]
    d = C.shape[1]
    seeds = _SEED_CACHE.get(d)
    if seeds is None:
        seeds = _SEED_CACHE[d] = _seed_beliefs(d)
    vals = C @ seeds.T
    chosen: list[int] = []
    in_w = np.zeros(len(cand), dtype=bool)
    part = np.partition(vals, 1, axis=0)[:2]
    best = np.argmin(vals, axis=0)
    strict = part[1] - part[0] > max(TIE_TOL, tol)
    for b in best[strict]:
        if not in_w[b]:
            in_w[b] = True
            chosen.append(int(b))
    remaining = [i for i in range(len(cand)) if not in_w[i]]
    lp = _WitnessLP(d, max(WITNESS_TOL, tol))
    for b in chosen:
        lp.add(C[b])
    while remaining:
        i = remaining[0]
        y = lp.witness(C[i], int(order[cand[i]]))
        if y is None:
            remaining.pop(0)
            continue
        if y is _WitnessLP.KEEP:
            b = i
        else:
            rv = C[remaining] @ y
            b = remaining[int(np.argmin(rv))]
        chosen.append(b)
        lp.add(C[b])
        remaining.remove(b)
    return np.sort(order[cand[np.array(chosen, dtype=np.intp)]])


def purge(vectors):
    """PURGE a list of :class:`GammaVector` (or rows of an array)."""
    if isinstance(vectors, np.ndarray):
        return vectors[purge_indices(vectors)]
    vectors = list(vectors)
    V = np.array([g.values for g in vectors])
    return [vectors[i] for i in purge_indices(V)]


# -- the best-response problem ---------------------------------------------------

class BestResponseProblem:
    """Precomputed quantities for one (model, leader policy) pair."""

    def __init__(self, model: PomgModel, leader_policy, restrict: bool = True):
        if leader_policy.agent != LEADER:
            raise ValueError("best response needs a leader policy")
        self.model = model
        self.policy = leader_policy
        self.space: WindowSpace = leader_policy.space
        self.kernel = leader_step_kernel(model, leader_policy)
        nsl, nsf, nal, naf, nzl, nzf = model.shape
        nw = len(self.space)
        self.n_states = nsf
        self.n_actions = naf
        # cbar[s_f, a_f, w] expected immediate cost
        c = model.follower_cost[self.space.state_of]  # [w, sf, al, af]
        self.cbar = np.einsum("wa,wsab->sbw", leader_policy.table, c)
        live = np.any(self.kernel != 0, axis=(4, 5))  # [sf, af, zf, sf2]
        self.live = [[[(int(i), int(j)) for j, i in np.argwhere(live[s, a])]
                      for a in range(naf)] for s in range(nsf)]
        self.support = reachable_leader_windows(model, self.space, self.kernel) \
            if restrict else np.arange(nw)
        # canonical (i, j) order: by next state then observation
        for s in range(nsf):
            for a in range(naf):
                self.live[s][a].sort()


def reachable_leader_windows(model: PomgModel, space: WindowSpace,
                             kernel: np.ndarray) -> np.ndarray:
    """Leader windows reachable from epoch 0 under the policy behind ``kernel``."""
    step = np.any(kernel > 0, axis=(0, 1, 2, 3))
    init = model.initial.sum(axis=1)
    seen = np.zeros(len(space), dtype=bool)
    seen[[space.startup[s] for s in np.flatnonzero(init > 0)]] = True
    frontier = np.flatnonzero(seen)
    while frontier.size:
        nxt = np.flatnonzero(step[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def _problem(model, leader_policy, problem):
    if problem is None:
        problem = BestResponseProblem(model, leader_policy)
    return problem


def _action_candidates(pb: BestResponseProblem, gamma: GammaSet, s: int, a: int,
                       incremental: bool, cap: int, tol: float = WITNESS_TOL):
    beta = pb.model.beta
    base = pb.cbar[s, a][None, :]
    choices = np.zeros((1, 0), dtype=np.intp)
    pairs = pb.live[s][a]
    projections = []
    for i, j in pairs:
        G = gamma.matrix(i)
        P = beta * (G @ pb.kernel[s, a, j, i].T)
        idx = np.arange(G.shape[0])
        if incremental and P.shape[0] > 1:
            k = purge_indices(P, support=pb.support, tol=tol)
            P, idx = P[k], idx[k]
        projections.append((P, idx))
    if not incremental:
        total = 1
        for P, _ in projections:
            total *= P.shape[0]
        if total > cap:
            raise CandidateCapExceeded(
                f"cross-sum for (s_f={s}, a_f={a}) has {total} candidates (cap {cap})")
    S = base
    for P, idx in projections:
        m, n = S.shape[0], P.shape[0]
        S = (S[:, None, :] + P[None, :, :]).reshape(m * n, -1)
        choices = np.hstack([np.repeat(choices, n, axis=0), np.tile(idx, m)[:, None]])
        if incremental and S.shape[0] > 1:
            k = purge_indices(S, support=pb.support, tol=tol)
            S, choices = S[k], choices[k]
    return S, choices, pairs


def backup(model: PomgModel, leader_policy, gamma: GammaSet, incremental: bool = True,
           cap: int = DEFAULT_CANDIDATE_CAP, threads: int = 1,
           problem: BestResponseProblem | None = None,
           prune_tol: float = WITNESS_TOL) -> GammaSet:
    """One dynamic-programming step on the follower's gamma sets.

    Exact with the default ``prune_tol``; a larger value raises the
    envelope by at most ``prune_tol`` per PURGE in the chain, see
    :func:`pruning_budget`.
    """
    pb = _problem(model, leader_policy, problem)
    tasks = [(s, a) for s in range(pb.n_states) for a in range(pb.n_actions)]

    def run(task):
        s, a = task
        return _action_candidates(pb, gamma, s, a, incremental, cap, prune_tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    out = []
    for s in range(pb.n_states):
        mats, tags, provs = [], [], []
        for a in range(pb.n_actions):
            S, choices, pairs = results[s * pb.n_actions + a]
            mats.append(S)
            tags.extend([a] * S.shape[0])
            for row in choices:
                provs.append({pair: int(c) for pair, c in zip(pairs, row)})
        V = np.vstack(mats)
        keep = purge_indices(V, support=pb.support, tol=prune_tol)
        out.append([GammaVector(V[k].copy(), tags[k], provs[k]) for k in keep])
    return GammaSet(out)


# -- evaluation of a gamma set -----------------------------------------------------

def value_at(gamma: GammaSet, s_f: int, y) -> float:
    w = getattr(y, "weights", y)
    if len(gamma[s_f]) == 0:
        raise ValueError(f"empty gamma set for follower state {s_f}")
    return float(np.min(gamma.matrix(s_f) @ np.asarray(w, dtype=float)))


def extract_action(gamma: GammaSet, s_f: int, y, n_actions: int | None = None) -> np.ndarray:
    """Point mass on the minimizing vector's action; uniform over actions
    whose vectors tie within ``TIE_TOL``."""
    w = np.asarray(getattr(y, "weights", y), dtype=float)
    vals = gamma.matrix(s_f) @ w
    acts = gamma.actions(s_f)
    if n_actions is None:
        n_actions = int(acts.max()) + 1
    tied = np.unique(acts[vals <= vals.min() + TIE_TOL])
    tied = tied[tied >= 0]
    dist = np.zeros(n_actions)
    if tied.size == 0:
        dist[:] = 1.0 / n_actions
    else:
        dist[tied] = 1.0 / tied.size
    return dist


def lookahead_values(pb: BestResponseProblem, gamma: GammaSet, s_f: int, y) -> np.ndarray:
    """Expected cost of each follower action at ``(s_f, y)`` followed by
    ``gamma``: ``y.cbar[a] + beta * sum_{z, s'} min_g g.(y K[s_f, a, z, s'])``."""
    w = np.asarray(getattr(y, "weights", y), dtype=float)
    q = pb.cbar[s_f] @ w
    beta = pb.model.beta
    if beta == 0:
        return q
    for a in range(pb.n_actions):
        for s2, z in pb.live[s_f][a]:
            u = w @ pb.kernel[s_f, a, z, s2]
            if u.any():
                q[a] += beta * float(np.min(gamma.matrix(s2) @ u))
    return q


def greedy_action(pb: BestResponseProblem, gamma: GammaSet, s_f: int, y) -> np.ndarray:
    """Uniform over the actions whose lookahead value is within ``TIE_TOL``
    of the best.  Unlike :func:`extract_action` this still sees ties after
    PURGE has merged equal vectors carrying different actions."""
    q = lookahead_values(pb, gamma, s_f, y)
    best = q <= q.min() + TIE_TOL
    return best / best.sum()


def probe_beliefs(dim: int, support: np.ndarray | None = None) -> np.ndarray:
    """Simplex vertices and the uniform belief (on the face of ``support``)."""
    if support is None:
        support = np.arange(dim)
    P = np.zeros((len(support) + 1, dim))
    P[np.arange(len(support)), support] = 1.0
    P[-1, support] = 1.0 / len(support)
    return P


def _probe_values(gamma: GammaSet, probes: np.ndarray) -> np.ndarray:
    return np.array([np.min(gamma.matrix(s) @ probes.T, axis=0) for s in range(len(gamma))])


def _envelope_gap(A: np.ndarray, B: np.ndarray) -> float:
    """sup over the simplex of min_a A.y - min_b B.y (via one LP per row of B)."""
    d = A.shape[1]
    best = -np.inf
    for b in B:
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-(A - b), np.ones((A.shape[0], 1))])
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(A.shape[0]),
                      A_eq=np.hstack([np.ones((1, d)), np.zeros((1, 1))]), b_eq=[1.0],
                      bounds=[(0, None)] * d + [(None, None)], method="highs")
        if res.status != 0:
            raise PurgeError(f"residual LP failed: {res.message}")
        best = max(best, -res.fun)
    return best


def exact_residual(new: GammaSet, old: GammaSet, support: np.ndarray | None = None) -> float:
    r = 0.0
    for s in range(len(new)):
        A, B = new.matrix(s), old.matrix(s)
        if support is not None:
            A, B = A[:, support], B[:, support]
        r = max(r, _envelope_gap(A, B), _envelope_gap(B, A))
    return r


def stopping_threshold(epsilon: float, beta: float) -> float:
    if beta == 0:
        return float("inf")
    return epsilon * (1.0 - beta) / (2.0 * beta)


def pruning_budget(pb: BestResponseProblem, epsilon: float) -> float:
    """Per-PURGE tolerance keeping the total pruning error within ``epsilon / 2``.

    A backup chains at most ``2k + 1`` purges (k = number of live
    (next state, observation) pairs), so it is off by at most
    ``(2k + 1) tol``; a contraction turns that into ``(2k + 1) tol / (1 - beta)``
    at the fixed point.
    """
    k = max((len(p) for row in pb.live for p in row), default=0)
    return max(WITNESS_TOL, epsilon * (1.0 - pb.model.beta) / (2.0 * (2 * k + 1)))


def value_iteration(model: PomgModel, leader_policy, epsilon: float = 1e-4,
                    max_iter: int = 1000, incremental: bool = True,
                    exact: bool = False, threads: int = 1,
                    cap: int = DEFAULT_CANDIDATE_CAP, raise_on_failure: bool = True,
                    problem: BestResponseProblem | None = None, restrict: bool = True,
                    prune_tol="auto"):
    """Iterate :func:`backup` from zero vectors until the sup-norm change at the
    probe beliefs (simplex vertices and uniform) drops below
    ``epsilon (1 - beta) / (2 beta)``.  Returns ``(gamma, report)``.

    ``prune_tol="auto"`` uses :func:`pruning_budget`; pass ``0`` for exact
    PURGE throughout.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pb = problem or BestResponseProblem(model, leader_policy, restrict=restrict)
    if prune_tol == "auto":
        prune_tol = pruning_budget(pb, epsilon)
    prune_tol = max(WITNESS_TOL, float(prune_tol))
    dim = len(pb.space)
    gamma = GammaSet.zeros(pb.n_states, dim)
    probes = probe_beliefs(dim, pb.support)
    report = SolveReport(epsilon=epsilon, threshold=stopping_threshold(epsilon, model.beta),
                         prune_tol=prune_tol)
    prev = _probe_values(gamma, probes)
    for it in range(1, max_iter + 1):
        new = backup(model, leader_policy, gamma, incremental=incremental, cap=cap,
                     threads=threads, problem=pb, prune_tol=prune_tol)
        cur = _probe_values(new, probes)
        res = exact_residual(new, gamma, pb.support) if exact else float(np.max(np.abs(cur - prev)))
        report.iterations = it
        report.residuals.append(res)
        report.gamma_counts.append(new.counts())
        log.debug("iteration %d residual %.3e counts %s", it, res, new.counts())
        gamma, prev = new, cur
        if res < report.threshold:
            report.converged = True
            break
    if not report.converged and raise_on_failure:
        raise NotConverged(gamma, report)
    return gamma, report


def initial_value(model: PomgModel, gamma: GammaSet, space: WindowSpace | None = None) -> float:
    """Follower's optimal value at epoch 0, averaged over its initial state."""
    space = space or enumerate_windows(model, LEADER)
    pf = model.initial.sum(axis=0)
    total = 0.0
    for s_f, p in enumerate(pf):
        if p > 0:
            total += p * value_at(gamma, s_f, initial_follower_belief(model, space, s_f))
    return total


# -- persistence -----------------------------------------------------------------

def gamma_to_dict(gamma: GammaSet, model: PomgModel, space: WindowSpace) -> dict:
    SF, AF, ZF = model.follower_states, model.follower_actions, model.follower_observations
    sets = {}
    for s, vs in enumerate(gamma.vectors):
        sets[SF[s]] = [{
            "action": AF[g.action] if g.action >= 0 else None,
            "values": [float(x) for x in g.values],
            "provenance": {f"{SF[i]}|{ZF[j]}": int(k) for (i, j), k in sorted(g.provenance.items())},
        } for g in vs]
    return {"leader_windows": list(space.names), "sets": sets}


def dumps_gamma(gamma: GammaSet, model: PomgModel, space: WindowSpace) -> str:
    return json.dumps(gamma_to_dict(gamma, model, space), indent=1) + "\n"


def gamma_from_dict(doc: dict, model: PomgModel) -> GammaSet:
    SF, AF, ZF = model.follower_states, model.follower_actions, model.follower_observations
    out = []
    for s in SF:
        vs = []
        for e in doc["sets"][s]:
            prov = {}
            for key, k in e.get("provenance", {}).items():
                si, zj = key.split("|")
                prov[(SF.index(si), ZF.index(zj))] = int(k)
            a = AF.index(e["action"]) if e["action"] is not None else -1
            vs.append(GammaVector(np.array(e["values"], dtype=float), a, prov))
        out.append(vs)
    return GammaSet(out)
