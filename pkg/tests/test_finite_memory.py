import numpy as np
import pytest

from stackpomg.finite_memory import approximate, approximate_policy
from stackpomg.follower import extract_action, value_iteration
from stackpomg.history import enumerate_windows
from stackpomg.model import PomgModel, compose_dynamics, random_model
from stackpomg.policy import uniform_policy


def _solved(m):
    pol = uniform_policy(enumerate_windows(m, "leader"), m.shape[2])
    gamma, _ = value_iteration(m, pol)
    return pol, gamma


def test_trivial_leader_memory_gives_exact_beliefs():
    m = random_model(5, n_sl=1, n_al=1, n_zl=1, n_sf=2, n_af=2, n_zf=2)
    pol, gamma = _solved(m)
    ls = pol.space
    assert len(ls) == 2
    approx = approximate(m, pol, gamma)
    full = [i for i, w in enumerate(ls) if not w.is_startup][0]
    for i, w in enumerate(approx.policy.space):
        exact = np.eye(2)[ls.startup[0] if w.is_startup else full]
        assert np.allclose(approx.beliefs[i], exact)
        assert np.array_equal(approx.policy.table[i], extract_action(gamma, w.state, exact, 2))
    assert approx.unreachable == ()


def _revealing_model(seed):
    """One leader action and observation, so a leader window is just its
    current state, and the follower's observation is that state."""
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.ones(4), (2, 2, 1, 2)).reshape(2, 2, 1, 2, 2, 2)
    lc = np.ones((1, 2, 2, 1))
    fc = np.zeros((1, 2, 2, 2))
    fc[:, :, 0, 0] = fc[:, :, 1, 1] = 1.0
    D = compose_dynamics(T, lc, fc)
    init = rng.dirichlet(np.ones(4)).reshape(2, 2)
    return PomgModel(["L0", "L1"], ["F0", "F1"], ["only"], ["a", "b"], ["lz"], ["sees0", "sees1"],
                     D, rng.random((2, 2, 1, 2)), rng.random((2, 2, 1, 2)), 0.9, 1, init)


@pytest.mark.parametrize("seed", range(3))
def test_revealing_channel_pins_the_leader_window(seed):
    m = _revealing_model(seed)
    pol, gamma = _solved(m)
    ls = pol.space
    approx = approximate(m, pol, gamma)
    for i, w in enumerate(approx.policy.space):
        if w.is_startup:
            continue
        seen = w.observations[0]
        target = ls.index_of(next(v for v in ls if not v.is_startup and v.state == seen))
        exact = np.eye(len(ls))[target]
        assert np.allclose(approx.beliefs[i], exact, atol=1e-12)
        assert np.array_equal(approx.policy.table[i],
                              extract_action(gamma, w.state, exact, 2))


def test_zero_costs_give_uniform_rows():
    m = random_model(2).replace(follower_cost=np.zeros((2, 2, 2, 2)))
    pol, gamma = _solved(m)
    fpol = approximate_policy(m, pol, gamma)
    assert np.allclose(fpol.table, 0.5)


@pytest.mark.parametrize("seed", range(3))
def test_replayed_beliefs_are_distributions(seed):
    m = random_model(seed, sparsity=0.4)
    pol, gamma = _solved(m)
    approx = approximate(m, pol, gamma)
    ok = np.array([i not in approx.unreachable for i in range(len(approx.policy.space))])
    B = approx.beliefs[ok]
    assert np.allclose(B.sum(axis=1), 1.0) and np.all(B >= 0)
    assert np.all(np.isnan(approx.beliefs[~ok]))
    assert np.allclose(approx.policy.table.sum(axis=1), 1.0)
