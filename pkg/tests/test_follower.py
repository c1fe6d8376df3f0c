import numpy as np
import pytest
from conftest import singleton_model
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import envelope, follower_costs, horizon_dp, lp_prune

from stackpomg.follower import (BestResponseProblem, GammaSet, GammaVector, NotConverged, backup,
                                extract_action, purge, purge_indices, value_at, value_iteration)
from stackpomg.history import enumerate_windows, uniform_belief
from stackpomg.model import random_model
from stackpomg.policy import FiniteMemoryPolicy, deterministic_policy, uniform_policy


def _gset(rows, actions=None):
    rows = np.asarray(rows, dtype=float)
    actions = actions if actions is not None else [0] * len(rows)
    return GammaSet([[GammaVector(r, a) for r, a in zip(rows, actions)]])


def _instance(seed, nsl=2, nsf=2, beta=0.9, nzl=1, stochastic=True):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_sl=nsl, n_sf=nsf, n_zl=nzl, beta=beta)
    space = enumerate_windows(m, "leader")
    if stochastic:
        pol = FiniteMemoryPolicy("leader", space, rng.dirichlet(np.ones(2), len(space)))
    else:
        pol = deterministic_policy(space, 2, rng.integers(2, size=len(space)))
    return m, pol, rng


# -- backup ----------------------------------------------------------------------

def test_singleton_backup_from_zero():
    m = singleton_model(c=1.0, beta=0.5)
    pol = uniform_policy(enumerate_windows(m, "leader"), 1)
    g = backup(m, pol, GammaSet.zeros(1, len(pol.space)))
    assert g.counts() == [1]
    assert np.allclose(g.matrix(0)[:, pol.space.startup], 1.0)


@pytest.mark.parametrize("seed", range(3))
def test_myopic_backup_is_cost_envelope(seed):
    m, pol, rng = _instance(seed, beta=0.0)
    pb = BestResponseProblem(m, pol, restrict=False)
    g = backup(m, pol, GammaSet.zeros(2, len(pol.space)), problem=pb)
    cbar = follower_costs(m, pol)
    for s in range(2):
        assert all(any(np.allclose(v, c) for c in cbar[s]) for v in g.matrix(s))
        for y in rng.dirichlet(np.ones(len(pol.space)), 50):
            assert value_at(g, s, y) == pytest.approx(np.min(cbar[s] @ y), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_one_backup_equals_horizon_one(seed):
    m, pol, rng = _instance(seed, nzl=2)
    pb = BestResponseProblem(m, pol, restrict=False)
    g = backup(m, pol, GammaSet.zeros(2, len(pol.space)), problem=pb)
    G = horizon_dp(m, pol, 1, tol=1e-12)
    for s in range(2):
        for y in rng.dirichlet(np.ones(len(pol.space)), 50):
            assert value_at(g, s, y) == pytest.approx(envelope(G[s], y), abs=1e-10)


@pytest.mark.parametrize("seed", range(2))
def test_incremental_and_enumerated_cross_sums_agree(seed):
    m, pol, rng = _instance(seed, nzl=2)
    pb = BestResponseProblem(m, pol, restrict=False)
    g = GammaSet.zeros(2, len(pol.space))
    a = b = g
    for _ in range(3):
        a = backup(m, pol, a, incremental=True, problem=pb)
        b = backup(m, pol, b, incremental=False, problem=pb)
    for s in range(2):
        for y in rng.dirichlet(np.ones(len(pol.space)), 100):
            assert value_at(a, s, y) == pytest.approx(value_at(b, s, y), abs=1e-10)


def test_threaded_backup_matches_serial():
    m, pol, _ = _instance(4, nzl=2)
    g = GammaSet.zeros(2, len(pol.space))
    one = backup(m, pol, backup(m, pol, g))
    four = backup(m, pol, backup(m, pol, g, threads=4), threads=4)
    for s in range(2):
        assert np.array_equal(one.matrix(s), four.matrix(s))


# -- purge -----------------------------------------------------------------------

def test_purge_pointwise_dominance():
    assert np.array_equal(purge(np.array([[1.0, 1.0], [2.0, 2.0]])), [[1.0, 1.0]])


def test_purge_keeps_vertex_winners():
    V = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert sorted(map(tuple, purge(V))) == [(0.0, 2.0), (2.0, 0.0)]


def test_purge_drops_vector_above_envelope():
    V = np.array([[0.0, 2.0], [2.0, 0.0], [1.5, 1.5]])
    kept = purge(V)
    assert sorted(map(tuple, kept)) == [(0.0, 2.0), (2.0, 0.0)]
    p = np.linspace(0, 1, 10001)
    env = np.minimum(2 - 2 * p, 2 * p)
    assert env.max() <= 1.0 + 1e-12 < 1.5
    assert len(lp_prune(V)) == 2


def test_purge_gamma_vector_list_keeps_objects():
    vs = [GammaVector(np.array([0.0, 2.0]), 0), GammaVector(np.array([3.0, 3.0]), 1)]
    assert purge(vs) == [vs[0]]


def test_purge_of_nothing_is_an_error():
    with pytest.raises(ValueError):
        purge_indices(np.zeros((0, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5), st.integers(2, 30))
def test_purge_matches_lp_oracle_cardinality(seed, d, n):
    V = np.random.default_rng(seed).random((n, d))
    assert len(purge_indices(V)) == len(lp_prune(V, tol=1e-10))


# -- value iteration ---------------------------------------------------------------

def test_singleton_converges_to_geometric_sum():
    m = singleton_model(c=1.0, beta=0.5)
    pol = uniform_policy(enumerate_windows(m, "leader"), 1)
    g, rep = value_iteration(m, pol, epsilon=1e-6)
    assert rep.converged
    assert value_at(g, 0, uniform_belief(pol.space)) == pytest.approx(2.0, abs=1e-6)


def test_zero_cost_stops_after_one_iteration():
    m = random_model(0).replace(follower_cost=np.zeros((2, 2, 2, 2)))
    pol = uniform_policy(enumerate_windows(m, "leader"), 2)
    g, rep = value_iteration(m, pol)
    assert rep.iterations == 1
    assert g.counts() == [1, 1]
    assert not np.any(g.matrix(0)) and not np.any(g.matrix(1))


def test_two_by_two_uniform_belief_matches_truncated_dp():
    m, pol, _ = _instance(0, stochastic=False)
    eps = 1e-4
    g, _ = value_iteration(m, pol, epsilon=eps, restrict=False)
    G = horizon_dp(m, pol, 60)
    y = uniform_belief(pol.space).weights
    tol = eps + m.beta**60 * np.abs(m.follower_cost).max() / (1 - m.beta)
    for s in range(2):
        assert abs(value_at(g, s, y) - envelope(G[s], y)) < tol


def test_not_converged_carries_report():
    m, pol, _ = _instance(1)
    with pytest.raises(NotConverged) as err:
        value_iteration(m, pol, epsilon=1e-8, max_iter=2)
    gamma, report = err.value.gamma, err.value.report
    assert report.iterations == 2 and not report.converged
    assert isinstance(gamma, GammaSet)


def test_bad_epsilon():
    m, pol, _ = _instance(0)
    with pytest.raises(ValueError):
        value_iteration(m, pol, epsilon=0.0)


# -- value_at and extract_action -------------------------------------------------------

def test_value_at_single_vector():
    assert value_at(_gset([[1.0, 3.0]]), 0, [0.5, 0.5]) == 2.0


def test_value_at_symmetric_envelope():
    assert value_at(_gset([[0.0, 2.0], [2.0, 0.0]]), 0, [0.5, 0.5]) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_value_at_is_exhaustive_min(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(7, 4))
    g = _gset(V)
    for y in rng.dirichlet(np.ones(4), 100):
        assert value_at(g, 0, y) == pytest.approx(min(float(v @ y) for v in V), abs=1e-12)


def test_extract_unique_minimizer():
    g = _gset([[0.0, 0.0], [1.0, 1.0]], actions=[2, 0])
    assert np.array_equal(extract_action(g, 0, [0.5, 0.5], 3), [0.0, 0.0, 1.0])


def test_extract_exact_tie_splits():
    g = _gset([[1.0, 1.0], [1.0, 1.0]], actions=[0, 1])
    assert np.array_equal(extract_action(g, 0, [0.3, 0.7], 2), [0.5, 0.5])


@pytest.mark.parametrize("seed", range(3))
def test_myopic_action_is_one_step_argmin(seed):
    m, pol, rng = _instance(seed, beta=0.0)
    g, _ = value_iteration(m, pol, restrict=False)
    cbar = follower_costs(m, pol)
    for s in range(2):
        for y in rng.dirichlet(np.ones(len(pol.space)), 30):
            costs = cbar[s] @ y
            if abs(costs[0] - costs[1]) < 1e-9:
                continue
            expect = np.eye(2)[int(np.argmin(costs))]
            assert np.array_equal(extract_action(g, s, y, 2), expect)
