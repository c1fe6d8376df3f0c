"""Independent reference computations used by the tests.

None of these reuse the solver code paths they check: windows are advanced by
hand, kernels are assembled with explicit loops, pruning uses witness
LPs through scipy, and rollouts sample trajectories.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

NULL = -1


# -- windows ---------------------------------------------------------------------

def window_key(triples, tau):
    """Newest-first tuple of (z, s, a_prev) triples, padded with NULL."""
    triples = list(triples)[:tau]
    while len(triples) < tau:
        triples.append((NULL, NULL, NULL))
    return tuple(triples)


def window_lookup(space, tau):
    """Map from the oracle's window key to the space index."""
    out = {}
    for i, w in enumerate(space):
        key = tuple((int(z), int(s), int(a)) for z, s, a in
                    zip(w.observations, w.states, w.actions))
        out[key] = i
    return out


def advance(key, z, s, a, tau):
    return window_key([(z, s, a)] + list(key), tau)


def startup(s, tau):
    return window_key([(NULL, s, NULL)], tau)


# -- belief posterior by trajectory enumeration ----------------------------------

def brute_force_posterior(model, leader_policy, s_f0, follower_steps):
    """Exact posterior over leader windows after the follower's trajectory.

    ``follower_steps`` is a list of ``(a_f, z_f', s_f')``.  Every leader
    trajectory (states, actions, observations) is enumerated and weighted by
    its joint probability with the follower's trajectory.
    """
    D = model.dynamics
    tau = model.tau
    nsl, nsf, nal, naf, nzl, nzf = model.shape
    space = leader_policy.space
    look = window_lookup(space, tau)
    post = np.zeros(len(space))
    t = len(follower_steps)
    for s_l0 in range(nsl):
        p0 = model.initial[s_l0, s_f0]
        if p0 == 0:
            continue
        for path in itertools.product(range(nal), range(nzl), range(nsl), repeat=t):
            key = startup(s_l0, tau)
            p, s_l, s_f = p0, s_l0, s_f0
            for k in range(t):
                a_l, z_l, s_l2 = path[3 * k: 3 * k + 3]
                a_f, z_f, s_f2 = follower_steps[k]
                p *= leader_policy.table[look[key], a_l]
                p *= D[s_l, s_f, a_l, a_f, z_l, z_f, s_l2, s_f2]
                if p == 0:
                    break
                key = advance(key, z_l, s_l2, a_l, tau)
                s_l, s_f = s_l2, s_f2
            if p > 0:
                post[look[key]] += p
    total = post.sum()
    if total == 0:
        raise ValueError("follower trajectory has zero probability")
    return post / total


# -- finite-horizon follower DP ---------------------------------------------------

def loop_kernel(model, leader_policy):
    """K[s_f, a_f, z_f', s_f', w, w'] by explicit loops over leader moves."""
    D = model.dynamics
    tau = model.tau
    nsl, nsf, nal, naf, nzl, nzf = model.shape
    space = leader_policy.space
    look = window_lookup(space, tau)
    keys = {i: k for k, i in look.items()}
    nw = len(space)
    K = np.zeros((nsf, naf, nzf, nsf, nw, nw))
    for w in range(nw):
        key = keys[w]
        s_l = key[0][1]
        for a_l in range(nal):
            pa = leader_policy.table[w, a_l]
            if pa == 0:
                continue
            for z_l in range(nzl):
                for s_l2 in range(nsl):
                    block = D[s_l, :, a_l, :, z_l, :, s_l2, :]  # [sf, af, zf, sf2]
                    if not np.any(block):
                        continue
                    w2 = look[advance(key, z_l, s_l2, a_l, tau)]
                    K[:, :, :, :, w, w2] += pa * block
    return K


def follower_costs(model, leader_policy):
    """cbar[s_f, a_f, w] expected one-step follower cost."""
    space = leader_policy.space
    nsf, naf = model.shape[1], model.shape[3]
    out = np.zeros((nsf, naf, len(space)))
    for w, win in enumerate(space):
        s_l = win.state
        for s_f in range(nsf):
            for a_f in range(naf):
                out[s_f, a_f, w] = leader_policy.table[w] @ model.follower_cost[s_l, s_f, :, a_f]
    return out


def _witness(v, U, tol):
    """True when some belief puts ``v`` strictly below every row of ``U``."""
    if len(U) == 0:
        return True
    d = len(v)
    # max t  s.t.  (u - v).y >= t for every u,  y in the simplex
    A_ub = np.hstack([-(U - v), np.ones((len(U), 1))])
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=A_ub, b_ub=np.zeros(len(U)),
                  A_eq=np.r_[np.ones(d), 0.0][None], b_eq=[1.0],
                  bounds=[(0, 1)] * d + [(None, None)], method="highs")
    return res.status != 0 or -res.fun > tol


_PROBES: dict[int, np.ndarray] = {}


def lp_prune(V, tol=1e-9):
    """Rows of ``V`` that are strictly lowest somewhere on the simplex.

    Rows winning at a fixed probe set are kept outright.  Every other row is
    first tested against those winners (no witness means it is safe to drop)
    and, if that is inconclusive, against all other surviving rows.
    """
    V = np.unique(np.round(V, 12), axis=0)
    if len(V) <= 1:
        return V
    dom = np.array([np.any(np.all(V <= v + 1e-12, axis=1) & np.any(V < v - 1e-12, axis=1))
                    for v in V])
    V = V[~dom]
    d = V.shape[1]
    P = _PROBES.get(d)
    if P is None:
        rng = np.random.default_rng(7)
        P = _PROBES[d] = np.vstack([np.eye(d), np.full(d, 1.0 / d),
                                    rng.dirichlet(np.ones(d), 8 * d)])
    vals = V @ P.T
    srt = np.sort(vals, axis=0)
    win = np.argmin(vals, axis=0)[srt[1] - srt[0] > tol] if len(V) > 1 else np.array([0])
    kept = set(int(i) for i in win)
    alive = np.ones(len(V), dtype=bool)
    for i in range(len(V)):
        if i in kept:
            continue
        K = V[sorted(kept)]
        if not _witness(V[i], K, tol):
            alive[i] = False
            continue
        others = V[alive & (np.arange(len(V)) != i)]
        if _witness(V[i], others, tol):
            kept.add(i)
        else:
            alive[i] = False
    return V[sorted(kept)]


def horizon_dp(model, leader_policy, horizon, tol=1e-7):
    """Gamma sets of the ``horizon``-step follower problem, by plain
    enumeration of choice maps with pruning after each cross-sum.

    Pruning with ``tol`` moves the envelope by at most ``tol / (1 - beta)``.
    """
    K = loop_kernel(model, leader_policy)
    cbar = follower_costs(model, leader_policy)
    nsf, naf, nzf = model.shape[1], model.shape[3], model.shape[5]
    nw = cbar.shape[2]
    beta = model.beta
    G = [np.zeros((1, nw)) for _ in range(nsf)]
    for _ in range(horizon):
        new = []
        for s in range(nsf):
            union = []
            for a in range(naf):
                S = cbar[s, a][None, :]
                for z in range(nzf):
                    for s2 in range(nsf):
                        M = K[s, a, z, s2]
                        if not np.any(M):
                            continue
                        P = lp_prune(beta * G[s2] @ M.T, tol)
                        S = lp_prune((S[:, None, :] + P[None, :, :]).reshape(-1, nw), tol)
                union.append(S)
            new.append(lp_prune(np.vstack(union), tol))
        G = new
    return G


def envelope(G, y):
    return float(np.min(G @ y))


# -- Monte Carlo rollout -----------------------------------------------------------

def rollout(model, leader_policy, follower_policy, cost, episodes=100_000, horizon=60,
            seed=0):
    """Discounted cost of a policy pair from the initial distribution.

    ``cost`` is a table ``c[s_l, s_f, a_l, a_f]``.  Returns (mean, standard
    error).  Windows are advanced with the oracle's own key arithmetic.
    """
    rng = np.random.default_rng(seed)
    D = model.dynamics
    tau = model.tau
    nsl, nsf, nal, naf, nzl, nzf = model.shape
    ls, fs = leader_policy.space, follower_policy.space
    llook, flook = window_lookup(ls, tau), window_lookup(fs, tau)
    lkeys = {i: k for k, i in llook.items()}
    fkeys = {i: k for k, i in flook.items()}

    def succ_table(keys, look, nz, ns, na):
        tab = np.full((len(keys), nz, ns, na), -1, dtype=np.intp)
        for i, k in keys.items():
            for z, s, a in itertools.product(range(nz), range(ns), range(na)):
                tab[i, z, s, a] = look.get(advance(k, z, s, a, tau), -1)
        return tab

    lsucc = succ_table(lkeys, llook, nzl, nsl, nal)
    fsucc = succ_table(fkeys, flook, nzf, nsf, naf)
    flat = D.reshape(nsl, nsf, nal, naf, -1)
    cum = np.cumsum(flat, axis=-1)
    out_shape = (nzl, nzf, nsl, nsf)

    init = model.initial.ravel()
    idx = rng.choice(init.size, size=episodes, p=init)
    sl, sf = np.unravel_index(idx, model.initial.shape)
    wl = np.array([llook.get(startup(s, tau), -1) for s in range(nsl)])[sl]
    wf = np.array([flook.get(startup(s, tau), -1) for s in range(nsf)])[sf]
    assert wl.min() >= 0 and wf.min() >= 0, "sampled a state without a startup window"
    lcum = np.cumsum(leader_policy.table, axis=1)
    fcum = np.cumsum(follower_policy.table, axis=1)
    total = np.zeros(episodes)
    disc = 1.0
    for _ in range(horizon):
        al = np.minimum((rng.random(episodes)[:, None] > lcum[wl]).sum(axis=1), nal - 1)
        af = np.minimum((rng.random(episodes)[:, None] > fcum[wf]).sum(axis=1), naf - 1)
        total += disc * cost[sl, sf, al, af]
        c = cum[sl, sf, al, af]
        k = np.minimum((rng.random(episodes)[:, None] > c).sum(axis=1), c.shape[1] - 1)
        zl, zf, sl2, sf2 = np.unravel_index(k, out_shape)
        wl = lsucc[wl, zl, sl2, al]
        wf = fsucc[wf, zf, sf2, af]
        sl, sf = sl2, sf2
        disc *= model.beta
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(episodes))


# -- multi-objective ----------------------------------------------------------------

def dominates(f, g):
    return all(a <= b for a, b in zip(f, g)) and any(a < b for a, b in zip(f, g))


def brute_fronts(fits):
    """Peel non-dominated layers with pairwise comparisons."""
    left = list(range(len(fits)))
    fronts = []
    while left:
        layer = [i for i in left if not any(dominates(fits[j], fits[i]) for j in left)]
        fronts.append(sorted(layer))
        left = [i for i in left if i not in layer]
    return fronts


def brute_pareto(fits):
    return [i for i in range(len(fits))
            if not any(dominates(fits[j], fits[i]) for j in range(len(fits)))]
