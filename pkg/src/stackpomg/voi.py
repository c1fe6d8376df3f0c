"""Value of information for the follower: garble its observation channel.

A garbling is a stochastic matrix ``R`` over follower observations, one per
joint action.  The garbled channel sends the true observation through ``R``:
``Q[s_l', :] = P[s_l', :] @ R``.  A Blackwell-inferior channel can never
help the follower, so its optimal cost under ``Q`` is no lower than under
``P``.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .follower import BestResponseProblem, value_at, value_iteration
from .history import initial_follower_belief
from .model import TOL, ModelValidationError, PomgModel, compose_dynamics, validate_factorization


class NotFactorizable(ModelValidationError):
    def __init__(self):
        super().__init__(["observation kernel does not factor into independent "
                          "leader and follower channels"])


@dataclass(frozen=True, eq=False)
class Garbling:
    """``R[a_l, a_f, z, z']`` = probability that true observation ``z`` is
    reported as ``z'``."""

    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        if R.ndim != 4 or R.shape[2] != R.shape[3]:
            raise ValueError("garbling must have shape [a_l, a_f, z, z]")
        if np.any(R < -TOL) or np.any(np.abs(R.sum(axis=3) - 1.0) > TOL):
            raise ValueError("garbling rows must be probability distributions")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @classmethod
    def uniform(cls, model: PomgModel, matrix) -> "Garbling":
        """Same matrix for every joint action."""
        nal, naf = model.shape[2], model.shape[3]
        return cls(np.broadcast_to(np.asarray(matrix, float), (nal, naf) + np.shape(matrix)))

    @classmethod
    def identity(cls, model: PomgModel) -> "Garbling":
        return cls.uniform(model, np.eye(model.shape[5]))

    def then(self, other: "Garbling") -> "Garbling":
        """Apply ``self`` first, then ``other``."""
        return Garbling(self.R @ other.R)


def random_garbling(model: PomgModel, rng, concentration: float = 1.0,
                    blocks: list[list[int]] | None = None, per_action: bool = True) -> Garbling:
    """Random garbling with Dirichlet rows.  With ``blocks`` only observations
    within the same block are mixed (the rest of the structure is kept)."""
    rng = np.random.default_rng(rng)
    nal, naf, nz = model.shape[2], model.shape[3], model.shape[5]
    blocks = blocks or [list(range(nz))]

    def one():
        R = np.zeros((nz, nz))
        for b in blocks:
            for z in b:
                R[z, b] = rng.dirichlet(np.full(len(b), concentration))
        return R

    if per_action:
        return Garbling(np.array([[one() for _ in range(naf)] for _ in range(nal)]))
    return Garbling.uniform(model, one())


def garble(model: PomgModel, garbling: Garbling) -> PomgModel:
    fo = validate_factorization(model)
    if fo is None:
        raise NotFactorizable()
    R = garbling.R
    if R.shape != (model.shape[2], model.shape[3], model.shape[5], model.shape[5]):
        raise ValueError(f"garbling shape {R.shape} does not match the model")
    if np.array_equal(R, np.broadcast_to(np.eye(R.shape[2]), R.shape)):
        return model
    fc = fo.follower_channel @ R  # [al, af, sl', zf] @ [al, af, zf, zf']
    return model.replace(dynamics=compose_dynamics(model.transition, fo.leader_channel, fc))


@dataclass
class VoiResult:
    v_p: float
    v_q: float
    probes_p: np.ndarray
    probes_q: np.ndarray
    slack: float

    @property
    def difference(self) -> float:
        return self.v_q - self.v_p

    @property
    def ordering_ok(self) -> bool:
        return bool(self.v_p <= self.v_q + self.slack
                    and np.all(self.probes_p <= self.probes_q + self.slack))


def _initial_and_probes(model: PomgModel, leader_policy, epsilon: float, max_iter: int):
    pb = BestResponseProblem(model, leader_policy)
    gamma, _ = value_iteration(model, leader_policy, epsilon=epsilon, max_iter=max_iter,
                               problem=pb)
    space = leader_policy.space
    pf = model.initial.sum(axis=0)
    v0 = sum(p * value_at(gamma, s, initial_follower_belief(model, space, s))
             for s, p in enumerate(pf) if p > 0)
    probes = []
    for s in range(model.shape[1]):
        probes.append([value_at(gamma, s, np.eye(len(space))[w]) for w in pb.support])
    return float(v0), np.array(probes)


def baseline(model: PomgModel, leader_policy, epsilon: float = 1e-4,
             max_iter: int = 1000) -> tuple[float, np.ndarray]:
    """Follower value and probe values under the ungarbled channel.  Pass the
    result to :func:`compare_information` to reuse it across garblings."""
    return _initial_and_probes(model, leader_policy, epsilon, max_iter)


def compare_information(model: PomgModel, garbling: Garbling, leader_policy,
                        epsilon: float = 1e-4, max_iter: int = 1000,
                        threads: int = 1, reference=None) -> VoiResult:
    """Follower's optimal value under the original and the garbled channel.

    Values are compared at the epoch-0 statistic and, per follower state, at
    the point-mass belief on every leader window the policy can reach.  The
    slack is ``2 epsilon``.
    """
    garbled = garble(model, garbling)
    if reference is not None:
        vp, pp = reference
        vq, pq = _initial_and_probes(garbled, leader_policy, epsilon, max_iter)
    elif threads > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            (vp, pp), (vq, pq) = ex.map(
                lambda m: _initial_and_probes(m, leader_policy, epsilon, max_iter),
                [model, garbled])
    else:
        (vp, pp), (vq, pq) = [_initial_and_probes(m, leader_policy, epsilon, max_iter)
                              for m in (model, garbled)]
    return VoiResult(vp, vq, pp, pq, 2 * epsilon)


def voi_csv(results) -> str:
    """``results``: iterable of (garbling id, VoiResult)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["garbling", "v_P", "v_Q", "difference", "ordering_ok"])
    for gid, r in results:
        w.writerow([gid, repr(r.v_p), repr(r.v_q), repr(r.difference), int(r.ordering_ok)])
    return buf.getvalue()
