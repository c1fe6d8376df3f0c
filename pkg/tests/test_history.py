import itertools

import numpy as np
import pytest
from conftest import singleton_model
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_posterior, window_key

from stackpomg.history import (NULL, Belief, ImpossibleObservation, Window, advance_window,
                               belief_update, enumerate_windows, initial_follower_belief,
                               WindowSpace, leader_step_kernel, startup_window,
                               uniform_belief)
from stackpomg.model import PomgModel, compose_dynamics, random_model
from stackpomg.policy import FiniteMemoryPolicy, deterministic_policy, uniform_policy


def _keys(space):
    return {tuple(zip(w.observations, w.states, w.actions)) for w in space}


def test_tau1_full_product_plus_startup():
    m = random_model(0, n_sl=2, n_al=2, n_zl=2)
    space = enumerate_windows(m, "leader")
    full = [w for w in space if not w.is_startup]
    assert len(full) == 8
    assert len(space) == 8 + 2
    assert all(w.triples[0][1] in (0, 1) for w in space if w.is_startup)


def test_singleton_has_one_full_window():
    space = enumerate_windows(singleton_model(), "follower")
    assert sum(not w.is_startup for w in space) == 1


def test_tau2_matches_nested_enumeration():
    m = random_model(1, n_sl=2, n_sf=2, n_al=2, n_zl=2, tau=2)
    space = enumerate_windows(m, "leader", reachable=False)
    ref = set()
    for s0 in range(2):
        ref.add(window_key([(NULL, s0, NULL)], 2))
        for z1, s1, a0 in itertools.product(range(2), repeat=3):
            ref.add(window_key([(z1, s1, a0), (NULL, s0, NULL)], 2))
            for z2, s2, a1 in itertools.product(range(2), repeat=3):
                ref.add(window_key([(z2, s2, a1), (z1, s1, a0)], 2))
    assert _keys(space) == ref
    # dense dynamics: every window is reachable as well
    assert _keys(enumerate_windows(m, "leader")) == ref


def test_advance_tau1_replaces_everything():
    w = Window("leader", ((1, 1, 0),))
    assert advance_window(w, (0, 2, 1)).triples == ((0, 2, 1),)


def test_advance_tau2_shifts():
    w = Window("leader", ((1, 1, 0), (0, 2, 1)))
    assert advance_window(w, (3, 3, 3)).triples == ((3, 3, 3), (1, 1, 0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)),
                min_size=3, max_size=3),
       st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)))
def test_advance_tau3_slice_and_concatenate(triples, step):
    w = Window("follower", tuple(triples))
    assert advance_window(w, step).triples == (tuple(step),) + tuple(triples)[:2]


def test_uniform_single_window():
    m = singleton_model()
    space = WindowSpace(m, "leader", [startup_window("leader", 0, 1)])
    assert np.array_equal(uniform_belief(space).weights, [1.0])


def test_uniform_four():
    m = random_model(0, n_sl=1, n_zl=1, n_al=3)
    space = enumerate_windows(m, "leader")
    assert len(space) == 4
    assert np.array_equal(uniform_belief(space).weights, [0.25] * 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_uniform_sums_to_one(ns, nz, na):
    m = random_model(0, n_sl=ns, n_zl=nz, n_al=na)
    y = uniform_belief(enumerate_windows(m, "leader"))
    assert y.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert y.owner == "follower"


def test_belief_rejects_unnormalized():
    with pytest.raises(ValueError):
        Belief("follower", [0.5, 0.4])


def _chain_model():
    """Leader state copies its action; one follower state; no noise."""
    D = np.zeros((2, 1, 2, 1, 1, 1, 2, 1))
    for sl in range(2):
        for al in range(2):
            D[sl, 0, al, 0, 0, 0, al, 0] = 1.0
    init = np.array([[1.0], [0.0]])
    return PomgModel(["a", "b"], ["f"], ["go_a", "go_b"], ["x"], ["lz"], ["fz"], D,
                     np.zeros((2, 1, 2, 1)), np.zeros((2, 1, 2, 1)), 0.9, 1, init)


def test_deterministic_chain_keeps_point_mass():
    m = _chain_model()
    space = enumerate_windows(m, "leader")
    pol = deterministic_policy(space, 2, [1] * len(space))
    y = initial_follower_belief(m, space, 0)
    y2, lik = belief_update(m, pol, y, 0, 0, (0, 0))
    assert lik == pytest.approx(1.0)
    target = space.index_of(advance_window(startup_window("leader", 0, 1), (0, 1, 1)))
    assert np.array_equal(y2.weights, np.eye(len(space))[target])


def _symmetric_model():
    """Leader state resampled uniformly each step; follower learns nothing."""
    T = np.full((2, 1, 2, 1, 2, 1), 0.5)
    lc = np.ones((2, 1, 1, 1))
    fc = np.full((2, 1, 2, 2), 0.5)
    D = compose_dynamics(T, lc, fc)
    init = np.array([[0.5], [0.5]])
    return PomgModel(["p", "q"], ["f"], ["u", "v"], ["x"], ["lz"], ["fz0", "fz1"], D,
                     np.zeros((2, 1, 2, 1)), np.zeros((2, 1, 2, 1)), 0.9, 1, init)


def test_uninformative_channel_keeps_uniform():
    m = _symmetric_model()
    space = enumerate_windows(m, "leader")
    pol = uniform_policy(space, 2)
    full = np.array([not w.is_startup for w in space])
    y = Belief("follower", full / full.sum())
    for z in range(2):
        y2, _ = belief_update(m, pol, y, 0, 0, (z, 0))
        assert np.allclose(y2.weights, y.weights, atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_random_instance_matches_trajectory_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_sl=2, n_sf=2, n_al=2, n_af=2, n_zl=2, n_zf=2)
    space = enumerate_windows(m, "leader")
    pol = FiniteMemoryPolicy("leader", space, rng.dirichlet(np.ones(2), len(space)))
    K = leader_step_kernel(m, pol)
    s_f = s_f0 = int(rng.integers(2))
    y = initial_follower_belief(m, space, s_f)
    steps = []
    for _ in range(3):
        a_f, z_f, s_f2 = (int(v) for v in rng.integers(2, size=3))
        y, _ = belief_update(m, pol, y, s_f, a_f, (z_f, s_f2), kernel=K)
        steps.append((a_f, z_f, s_f2))
        s_f = s_f2
    ref = brute_force_posterior(m, pol, s_f0, steps)
    assert np.max(np.abs(y.weights - ref)) < 1e-10


def test_impossible_observation_raises():
    m = _chain_model()
    space = enumerate_windows(m, "leader")
    pol = deterministic_policy(space, 2, [0] * len(space))
    K = leader_step_kernel(m, pol).copy()
    K[:] = 0.0
    y = initial_follower_belief(m, space, 0)
    with pytest.raises(ImpossibleObservation):
        belief_update(m, pol, y, 0, 0, (0, 0), kernel=K)


@pytest.mark.parametrize("seed", range(3))
def test_kernel_rows_sum_to_one(seed):
    m = random_model(seed, n_sl=2, n_sf=2, n_zl=2, sparsity=0.3)
    space = enumerate_windows(m, "leader")
    pol = uniform_policy(space, 2)
    K = leader_step_kernel(m, pol)
    # summing out (z_f', s_f', w') leaves one for every (s_f, a_f, w)
    assert np.allclose(K.sum(axis=(2, 3, 5)), 1.0)
