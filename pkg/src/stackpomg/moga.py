"""NSGA-II over finite-memory leader policies.

A chromosome holds one gene block per leader window: an action index in
deterministic mode, a probability vector in stochastic mode.  Fitness is
the leader's criterion tuple under the follower's best response, so
evaluations dominate the runtime and are cached by gene content.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .evaluator import FitnessTuple, fitness, rounded
from .history import enumerate_windows
from .model import LEADER, PomgModel
from .policy import FiniteMemoryPolicy, deterministic_policy

log = logging.getLogger(__name__)

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"
CUBOID = "cuboid"
MEAN_EUCLIDEAN = "mean-euclidean"


class EvaluationError(RuntimeError):
    """A fitness evaluation failed; the checkpoint of the last completed
    generation stays on disk."""


# -- dominance and sorting ----------------------------------------------------

def dominates(f1: Sequence[float], f2: Sequence[float]) -> bool:
    """Pareto dominance for minimization, without tolerance."""
    a, b = tuple(f1), tuple(f2)
    if len(a) != len(b):
        raise ValueError(f"fitness lengths differ ({len(a)} vs {len(b)})")
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(pop: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fronts as lists of indices into ``pop``, best front first."""
    if len(pop) == 0:
        return []
    F = np.array([tuple(f) for f in pop], dtype=float)
    ranks = kernels.nondominated_ranks(F)
    return [list(np.flatnonzero(ranks == r)) for r in range(int(ranks.max()) + 1)]


def crowding_distance(front: Sequence[Sequence[float]], method: str = CUBOID) -> np.ndarray:
    F = np.array([tuple(f) for f in front], dtype=float)
    n = F.shape[0]
    if n == 0:
        raise ValueError("empty front")
    if n == 1:
        return np.array([math.inf])
    if method == MEAN_EUCLIDEAN:
        D = np.sqrt(((F[:, None, :] - F[None, :, :]) ** 2).sum(axis=2))
        return D.sum(axis=1) / (n - 1)
    if method != CUBOID:
        raise ValueError(f"unknown crowding method {method!r}")
    dist = np.zeros(n)
    for k in range(F.shape[1]):
        order = np.argsort(F[:, k], kind="stable")
        col = F[order, k]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = col[-1] - col[0]
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


# -- chromosomes ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Chromosome:
    genes: np.ndarray
    mode: str = DETERMINISTIC
    fitness: FitnessTuple | None = None
    rank: int = -1
    crowding: float = 0.0

    def key(self) -> bytes:
        return self.genes.tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.key()).hexdigest()[:16]


@dataclass
class Population:
    members: list
    generation: int = 0
    seed: int = 0


@dataclass
class MogaParams:
    M: int = 16
    generations: int = 5
    p_c: float = 0.9
    p_m: float | None = None  # default 1 / number of leader windows
    seed: int = 0
    mode: str = DETERMINISTIC
    crowding: str = CUBOID
    epsilon: float = 1e-4
    threads: int = 1

    def violations(self) -> list[str]:
        out = []
        if self.M < 2 or self.M % 2:
            out.append(f"M={self.M} must be an even number >= 2")
        if self.generations < 0:
            out.append("generations must be nonnegative")
        for name in ("p_c", "p_m"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                out.append(f"{name}={v} outside [0, 1]")
        if self.mode not in (DETERMINISTIC, STOCHASTIC):
            out.append(f"unknown mode {self.mode!r}")
        if self.crowding not in (CUBOID, MEAN_EUCLIDEAN):
            out.append(f"unknown crowding method {self.crowding!r}")
        if self.epsilon <= 0:
            out.append("epsilon must be positive")
        return out


class Encoding:
    """Maps gene vectors to leader policies on the model's window space."""

    def __init__(self, model: PomgModel, mode: str):
        self.model = model
        self.mode = mode
        self.space = enumerate_windows(model, LEADER)
        self.n_blocks = len(self.space)
        self.n_actions = len(model.leader_actions)

    @property
    def block(self) -> int:
        return 1 if self.mode == DETERMINISTIC else self.n_actions

    def policy(self, genes: np.ndarray) -> FiniteMemoryPolicy:
        if self.mode == DETERMINISTIC:
            return deterministic_policy(self.space, self.n_actions, genes)
        return FiniteMemoryPolicy(LEADER, self.space, genes.reshape(self.n_blocks, self.n_actions))

    def genes_of(self, policy: FiniteMemoryPolicy) -> np.ndarray:
        if self.mode == DETERMINISTIC:
            return policy.table.argmax(axis=1).astype(np.int64)
        return policy.table.ravel().copy()

    def random_block(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == DETERMINISTIC:
            return np.array([rng.integers(self.n_actions)], dtype=np.int64)
        return rng.dirichlet(np.ones(self.n_actions))

    def random_genes(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([self.random_block(rng) for _ in range(self.n_blocks)])

    def check(self, genes: np.ndarray) -> None:
        if self.mode == DETERMINISTIC:
            if genes.shape != (self.n_blocks,) or genes.min() < 0 or genes.max() >= self.n_actions:
                raise ValueError("deterministic genes must be valid action indices")
        else:
            B = genes.reshape(self.n_blocks, self.n_actions)
            if np.any(B < 0) or np.any(np.abs(B.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("stochastic gene blocks must be distributions")


class FitnessCache:
    """Fitness by gene content; shareable across runs on the same model."""

    def __init__(self, model: PomgModel, encoding: Encoding, epsilon: float = 1e-4,
                 evaluate: Callable | None = None):
        self.encoding = encoding
        self.model = model
        self.epsilon = epsilon
        self._evaluate = evaluate or (lambda pol: fitness(model, pol, epsilon=epsilon)[0])
        self.store: dict[bytes, FitnessTuple] = {}
        self.evaluations = 0

    def get(self, genes: np.ndarray) -> FitnessTuple:
        k = genes.tobytes()
        f = self.store.get(k)
        if f is None:
            try:
                f = self._evaluate(self.encoding.policy(genes))
            except Exception as exc:  # noqa: BLE001 - surfaced as a resumable failure
                raise EvaluationError(f"fitness evaluation failed: {exc}") from exc
            self.store[k] = f
            self.evaluations += 1
        return f

    def evaluate_all(self, genes_list, threads: int = 1) -> list[FitnessTuple]:
        todo, seen = [], set()
        for g in genes_list:
            k = g.tobytes()
            if k not in self.store and k not in seen:
                seen.add(k)
                todo.append(g)
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(self.get, todo))
        else:
            for g in todo:
                self.get(g)
        return [self.store[g.tobytes()] for g in genes_list]


def fitness_key(c: Chromosome) -> tuple:
    return rounded(c.fitness.values)


def assign_rank_crowding(members: list[Chromosome], method: str) -> list[Chromosome]:
    fits = [fitness_key(m) for m in members]
    out = list(members)
    for r, front in enumerate(fast_nondominated_sort(fits)):
        cd = crowding_distance([fits[i] for i in front], method)
        for i, c in zip(front, cd):
            out[i] = replace(out[i], rank=r, crowding=float(c))
    return out


def _tournament(members: list[Chromosome], rng: np.random.Generator) -> Chromosome:
    i, j = rng.integers(len(members), size=2)
    a, b = members[i], members[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def _crossover(g1, g2, enc: Encoding, p_c: float, rng: np.random.Generator):
    if enc.n_blocks < 2 or rng.random() >= p_c:
        return g1.copy(), g2.copy()
    cut = int(rng.integers(1, enc.n_blocks)) * enc.block
    return np.concatenate([g1[:cut], g2[cut:]]), np.concatenate([g2[:cut], g1[cut:]])


def _mutate(g, enc: Encoding, p_m: float, rng: np.random.Generator):
    g = g.copy()
    for b in range(enc.n_blocks):
        if rng.random() < p_m:
            g[b * enc.block:(b + 1) * enc.block] = enc.random_block(rng)
    return g


def survivors(combined: list[Chromosome], M: int, method: str) -> list[Chromosome]:
    """Elitist selection of ``M`` members from parents followed by offspring.

    Members with the same objective vector are counted once (the earliest
    copy), so distinct policies that score identically cannot crowd the
    front.  Duplicates only fill slots left over when fewer than ``M``
    distinct objective vectors exist.
    """
    seen, uniq, dups = set(), [], []
    for c in combined:
        k = fitness_key(c)
        (dups if k in seen else uniq).append(c)
        seen.add(k)
    ranked = assign_rank_crowding(uniq, method)
    order = sorted(range(len(ranked)), key=lambda i: (ranked[i].rank, -ranked[i].crowding, i))
    chosen = [ranked[i] for i in order[:M]]
    chosen.extend(dups[:M - len(chosen)])
    return assign_rank_crowding(chosen, method)


def next_generation(pop: Population, params: MogaParams, enc: Encoding, cache: FitnessCache,
                    rng: np.random.Generator) -> Population:
    p_m = params.p_m if params.p_m is not None else 1.0 / enc.n_blocks
    parents = pop.members
    kids = []
    while len(kids) < params.M:
        a, b = _tournament(parents, rng), _tournament(parents, rng)
        c1, c2 = _crossover(a.genes, b.genes, enc, params.p_c, rng)
        kids.extend([_mutate(c1, enc, p_m, rng), _mutate(c2, enc, p_m, rng)])
    kids = kids[:params.M]
    for g in kids:
        enc.check(g)
    fits = cache.evaluate_all(kids, params.threads)
    offspring = [Chromosome(g, enc.mode, f) for g, f in zip(kids, fits)]
    members = survivors(list(parents) + offspring, params.M, params.crowding)
    return Population(members, pop.generation + 1, pop.seed)


def initial_population(params: MogaParams, enc: Encoding, cache: FitnessCache,
                       rng: np.random.Generator) -> Population:
    genes = [enc.random_genes(rng) for _ in range(params.M)]
    fits = cache.evaluate_all(genes, params.threads)
    members = [Chromosome(g, enc.mode, f) for g, f in zip(genes, fits)]
    return Population(assign_rank_crowding(members, params.crowding), 0, params.seed)


def front_one(pop: Population) -> list[Chromosome]:
    """Distinct (by genes) members of the first front, in population order."""
    seen, out = set(), []
    for m in pop.members:
        if m.rank == 0 and m.key() not in seen:
            seen.add(m.key())
            out.append(m)
    return out


# -- logging and checkpoints -----------------------------------------------------

LOG_HEADER = ["generation", "member", "genes_hash", "fitness", "rank", "crowding"]


def log_rows(pop: Population) -> list[list[str]]:
    rows = []
    for i, m in enumerate(pop.members):
        rows.append([str(pop.generation), str(i), m.digest(),
                     ";".join(repr(float(v)) for v in m.fitness.values),
                     str(m.rank), repr(float(m.crowding))])
    return rows


def _genes_to_json(g: np.ndarray, mode: str):
    return [int(x) for x in g] if mode == DETERMINISTIC else [float(x) for x in g]


def save_checkpoint(path: Path, pop: Population, rng: np.random.Generator, params: MogaParams,
                    log_lines: list) -> None:
    doc = {
        "generation": pop.generation,
        "seed": params.seed,
        "mode": params.mode,
        "rng_state": rng.bit_generator.state,
        "members": [_genes_to_json(m.genes, m.mode) for m in pop.members],
        "log": log_lines,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True) + "\n")
    tmp.replace(path)


def load_checkpoint(path: Path, params: MogaParams, enc: Encoding, cache: FitnessCache):
    doc = json.loads(Path(path).read_text())
    if doc["seed"] != params.seed or doc["mode"] != params.mode:
        raise ValueError("checkpoint was written with a different seed or mode")
    dtype = np.int64 if params.mode == DETERMINISTIC else float
    genes = [np.array(g, dtype=dtype) for g in doc["members"]]
    fits = cache.evaluate_all(genes, params.threads)
    members = [Chromosome(g, enc.mode, f) for g, f in zip(genes, fits)]
    pop = Population(assign_rank_crowding(members, params.crowding), doc["generation"],
                     params.seed)
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return pop, rng, doc["log"]


@dataclass
class MogaResult:
    population: Population
    front: list  # list of (Chromosome, FitnessTuple)
    log_csv: str
    history: list = field(default_factory=list)  # per generation: best value per criterion
    encoding: Encoding | None = None

    def policies(self) -> list[FiniteMemoryPolicy]:
        return [self.encoding.policy(c.genes) for c, _ in self.front]


def run_moga(model: PomgModel, params: MogaParams | None = None, cache: FitnessCache | None = None,
             checkpoint: Path | None = None, resume: bool = False) -> MogaResult:
    """Seeded NSGA-II run.  With ``checkpoint`` the state after every
    generation is written there; ``resume`` continues from it."""
    params = params or MogaParams()
    bad = params.violations()
    if bad:
        raise ValueError("; ".join(bad))
    enc = cache.encoding if cache is not None else Encoding(model, params.mode)
    if enc.mode != params.mode:
        raise ValueError("fitness cache was built for a different gene mode")
    cache = cache or FitnessCache(model, enc, params.epsilon)
    if resume and checkpoint is not None and Path(checkpoint).exists():
        pop, rng, lines = load_checkpoint(checkpoint, params, enc, cache)
    else:
        rng = np.random.default_rng(params.seed)
        pop = initial_population(params, enc, cache, rng)
        lines = log_rows(pop)
        if checkpoint is not None:
            save_checkpoint(Path(checkpoint), pop, rng, params, lines)
    history = [np.min([m.fitness.values for m in pop.members], axis=0)]
    while pop.generation < params.generations:
        pop = next_generation(pop, params, enc, cache, rng)
        lines.extend(log_rows(pop))
        history.append(np.min([m.fitness.values for m in pop.members], axis=0))
        if checkpoint is not None:
            save_checkpoint(Path(checkpoint), pop, rng, params, lines)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    w.writerows(lines)
    front = [(c, c.fitness) for c in front_one(pop)]
    return MogaResult(pop, front, buf.getvalue(), history, enc)


def pareto_set(fits: Sequence[Sequence[float]]) -> list[int]:
    """Indices of non-dominated entries (brute force, for reference use),
    compared at the same rounding as the genetic loop."""
    F = [rounded(f) for f in fits]
    return [i for i, f in enumerate(F) if not any(dominates(g, f) for g in F)]
