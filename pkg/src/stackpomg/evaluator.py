"""Value determination for a pair of finite-memory policies.

The expected discounted cost of a fixed pair satisfies a linear fixed point
over (leader window, follower window) pairs, ``g = c + beta M g``.  Small
systems are solved directly; larger ones by successive substitution.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import kernels
from .finite_memory import approximate
from .follower import BestResponseProblem, initial_value, value_iteration
from .history import enumerate_windows
from .model import FOLLOWER, LEADER, PomgModel
from .policy import FiniteMemoryPolicy

log = logging.getLogger(__name__)

DIRECT_LIMIT = 20_000
PAIR_CAP = 10**7
FOLLOWER_COST = "follower"
# Fitness values carry linear-solve noise around 1e-12.  Comparisons between
# fitness tuples (sorting, deduplication, tables) use values rounded to this
# many decimals, so two policies with the same true fitness never dominate
# each other by accident.
FITNESS_DECIMALS = 9


def rounded(values) -> tuple[float, ...]:
    return tuple(float(x) for x in np.round(np.asarray(values, dtype=float), FITNESS_DECIMALS))


class DimensionCapExceeded(RuntimeError):
    pass


class SingularSystem(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GTable:
    criterion: object  # int for a leader criterion, "follower" otherwise
    values: np.ndarray  # [w_l, w_f]
    residual: float
    method: str

    def __getitem__(self, idx):
        return self.values[idx]


@dataclass(frozen=True)
class FitnessTuple:
    values: tuple[float, ...]
    follower_value: float = float("nan")
    perfect_value: float = float("nan")
    residuals: tuple[float, ...] = ()
    provenance: dict = field(default_factory=dict, compare=False, hash=False)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def approximation_gap(self) -> float:
        return self.follower_value - self.perfect_value


@dataclass(frozen=True, eq=False)
class PairSystem:
    """Sparse transition matrix and stacked one-step costs over window pairs."""

    M: sp.csr_matrix
    cbar: np.ndarray  # [criteria + 1, pairs]; last row is the follower cost
    shape: tuple[int, int]


def pair_system(model: PomgModel, leader_policy: FiniteMemoryPolicy,
                follower_policy: FiniteMemoryPolicy) -> PairSystem:
    ls, fs = leader_policy.space, follower_policy.space
    n = len(ls) * len(fs)
    if n > PAIR_CAP:
        raise DimensionCapExceeded(f"{n} window pairs exceed the cap {PAIR_CAP}")
    costs = np.concatenate([model.leader_costs, model.follower_cost[None]], axis=0)
    rows, cols, vals, cbar = kernels.pair_transitions(
        ls.state_of, fs.state_of, leader_policy.table, follower_policy.table,
        ls.succ, fs.succ, model.dynamics, costs)
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    return PairSystem(M, cbar, (len(ls), len(fs)))


def _criterion_row(model: PomgModel, cost) -> int:
    if cost == FOLLOWER_COST:
        return model.n_criteria
    i = int(cost)
    if not 0 <= i < model.n_criteria:
        raise IndexError(f"criterion {i} out of range")
    return i


def solve_linear(M: sp.csr_matrix, c: np.ndarray, beta: float, method: str = "auto",
                 tol: float = 1e-12, max_iter: int = 100_000) -> tuple[np.ndarray, float, str]:
    """Solve ``g = c + beta M g``; returns (g, residual, method used)."""
    n = M.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "iterative"
    if beta == 0:
        g = c.copy()
    elif method == "direct":
        A = (sp.identity(n, format="csc") - beta * M.tocsc())
        g = spsolve(A, c) if n > 1 else c / A.toarray()[0]
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if not np.all(np.isfinite(g)):
            raise SingularSystem("linear solve returned non-finite values")
    elif method == "iterative":
        thr = tol * (1 - beta) / (2 * beta)
        g = c.copy()
        for _ in range(max_iter):
            g2 = c + beta * (M @ g)
            delta = np.max(np.abs(g2 - g)) if n else 0.0
            g = g2
            if delta < thr:
                break
    else:
        raise ValueError(f"unknown method {method!r}")
    residual = float(np.max(np.abs(g - c - beta * (M @ g)))) if n else 0.0
    return g, residual, method


def solve_g(model: PomgModel, leader_policy: FiniteMemoryPolicy,
            follower_policy: FiniteMemoryPolicy, cost=0, method: str = "auto",
            tol: float = 1e-12, system: PairSystem | None = None) -> GTable:
    """Expected discounted cost of ``cost`` (a leader criterion index or
    ``"follower"``) from every window pair."""
    system = system or pair_system(model, leader_policy, follower_policy)
    row = _criterion_row(model, cost)
    g, res, used = solve_linear(system.M, system.cbar[row], model.beta, method, tol)
    return GTable(cost, g.reshape(system.shape), res, used)


def fixed_point_residual(model: PomgModel, system: PairSystem, table: GTable) -> float:
    g = table.values.ravel()
    c = system.cbar[_criterion_row(model, table.criterion)]
    return float(np.max(np.abs(g - c - model.beta * (system.M @ g))))


def leader_value(g: GTable | np.ndarray, weighting: np.ndarray) -> float:
    vals = getattr(g, "values", g)
    w = np.asarray(weighting, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weighting must sum to 1")
    return float(np.sum(w * vals))


def initial_weighting(model: PomgModel, leader_space=None, follower_space=None) -> np.ndarray:
    """Epoch-0 distribution over window pairs: the model's initial joint
    state distribution placed on the startup windows."""
    ls = leader_space if leader_space is not None else enumerate_windows(model, LEADER)
    fs = follower_space if follower_space is not None else enumerate_windows(model, FOLLOWER)
    mu = np.zeros((len(ls), len(fs)))
    for sl, sf in np.argwhere(model.initial > 0):
        mu[ls.startup[sl], fs.startup[sf]] += model.initial[sl, sf]
    return mu


def evaluate_pair(model: PomgModel, leader_policy: FiniteMemoryPolicy,
                  follower_policy: FiniteMemoryPolicy, method: str = "auto"):
    """Leader criterion values and the follower's value at epoch 0.

    Returns ``(leader_values, follower_value, residuals)``.
    """
    system = pair_system(model, leader_policy, follower_policy)
    mu = initial_weighting(model, leader_policy.space, follower_policy.space)
    vals, res = [], []
    for i in list(range(model.n_criteria)) + [FOLLOWER_COST]:
        g = solve_g(model, leader_policy, follower_policy, i, method, system=system)
        vals.append(leader_value(g, mu))
        res.append(g.residual)
    return tuple(vals[:-1]), vals[-1], tuple(res)


def fitness(model: PomgModel, leader_policy: FiniteMemoryPolicy, epsilon: float = 1e-4,
            max_iter: int = 1000, threads: int = 1, chromosome_id=None):
    """Leader fitness tuple given the follower's (approximate) best response.

    Returns ``(FitnessTuple, follower_policy)``.
    """
    pb = BestResponseProblem(model, leader_policy)
    gamma, report = value_iteration(model, leader_policy, epsilon=epsilon, max_iter=max_iter,
                                    threads=threads, problem=pb)
    approx = approximate(model, leader_policy, gamma, problem=pb)
    lv, fv, res = evaluate_pair(model, leader_policy, approx.policy)
    perfect = initial_value(model, gamma, leader_policy.space)
    prov = {"chromosome": chromosome_id, "initial_distribution": "epoch0-startup",
            "vi_iterations": report.iterations, "unreachable_windows": len(approx.unreachable)}
    return FitnessTuple(lv, fv, perfect, res, prov), approx.policy


@dataclass
class EquilibriumReport:
    star_value: float
    slack: float
    alternative_values: list = field(default_factory=list)
    gaps: list = field(default_factory=list)  # v(rho) - v(star), negative means rho is better
    violations: list = field(default_factory=list)  # (index, magnitude beyond slack)

    @property
    def ok(self) -> bool:
        return not self.violations


def equilibrium_check(model: PomgModel, leader_policy: FiniteMemoryPolicy,
                      follower_star: FiniteMemoryPolicy, alternatives,
                      epsilon: float = 1e-4, approximation_gap: float | None = None
                      ) -> EquilibriumReport:
    """Compare the follower's value under ``follower_star`` with each
    alternative follower policy.  Slack is the value-iteration tolerance plus
    the finite-memory approximation gap (computed when not supplied)."""
    _, star, _ = evaluate_pair(model, leader_policy, follower_star)
    if approximation_gap is None:
        gamma, _ = value_iteration(model, leader_policy, epsilon=epsilon)
        approximation_gap = star - initial_value(model, gamma, leader_policy.space)
    slack = epsilon + max(0.0, approximation_gap)
    rep = EquilibriumReport(star, slack)
    for k, rho in enumerate(alternatives):
        _, v, _ = evaluate_pair(model, leader_policy, rho)
        rep.alternative_values.append(v)
        gap = v - star
        rep.gaps.append(gap)
        if star > v + slack:
            rep.violations.append((k, star - v - slack))
    return rep


def fitness_csv(rows) -> str:
    """``rows``: iterable of (chromosome id, FitnessTuple)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    rows = list(rows)
    n = len(rows[0][1]) if rows else 0
    w.writerow(["chromosome"] + [f"v{i + 1}" for i in range(n)]
               + ["follower_value", "max_residual"])
    for cid, f in rows:
        w.writerow([cid] + [repr(float(v)) for v in f.values]
                   + [repr(float(f.follower_value)),
                      repr(float(max(f.residuals, default=0.0)))])
    return buf.getvalue()


__all__ = ["rounded", "FITNESS_DECIMALS", "GTable", "FitnessTuple", "PairSystem", "pair_system", "solve_g", "solve_linear",
           "leader_value", "initial_weighting", "evaluate_pair", "fitness",
           "equilibrium_check", "EquilibriumReport", "fitness_csv", "fixed_point_residual",
           "DimensionCapExceeded", "SingularSystem"]
