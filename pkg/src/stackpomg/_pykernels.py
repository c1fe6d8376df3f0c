"""Pure numpy implementations of the inner loops (fallback backend)."""
from __future__ import annotations

import numpy as np


def dominance_keep_mask(V: np.ndarray, tol: float) -> np.ndarray:
    """Keep mask after removing pointwise-dominated rows of ``V`` (minimization).

    Rows are scanned in order against the survivors so far: a row is dropped
    when a survivor is ``<= row + tol`` everywhere (so of two tol-equal rows the
    earlier one stays), otherwise it evicts every survivor it dominates.
    """
    V = np.ascontiguousarray(V, dtype=float)
    n = V.shape[0]
    kept = np.zeros(0, dtype=np.intp)
    for i in range(n):
        if kept.size:
            K = V[kept]
            if np.any(np.all(K <= V[i] + tol, axis=1)):
                continue
            kept = kept[~np.all(V[i] <= K + tol, axis=1)]
        kept = np.append(kept, i)
    keep = np.zeros(n, dtype=bool)
    keep[kept] = True
    return keep


def nondominated_ranks(F: np.ndarray) -> np.ndarray:
    """Front index (0-based) of every row of ``F`` under Pareto minimization."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[p, q]: p dominates q
    count = dom.sum(axis=0)
    ranks = np.full(n, -1, dtype=np.intp)
    current = np.flatnonzero(count == 0)
    r = 0
    while current.size:
        ranks[current] = r
        count = count - dom[current].sum(axis=0)
        count[ranks >= 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return ranks


def pair_transitions(state_l, state_f, pi_l, pi_f, succ_l, succ_f, dynamics, costs):
    """Sparse transition matrix and expected costs over window pairs.

    Pair index is ``w_l * n_f + w_f``.  ``costs`` has a leading criterion axis;
    returns ``(rows, cols, vals, cbar)`` with ``cbar[k, pair]``.
    """
    nl, nf = len(state_l), len(state_f)
    nal, naf = pi_l.shape[1], pi_f.shape[1]
    nzl, nzf, nsl, nsf = dynamics.shape[4:]
    wl = np.repeat(np.arange(nl), nf)
    wf = np.tile(np.arange(nf), nl)
    sl, sf = state_l[wl], state_f[wf]
    cbar = np.zeros((costs.shape[0], nl * nf))
    rows, cols, vals = [], [], []
    pair = np.arange(nl * nf)
    for al in range(nal):
        for af in range(naf):
            wgt = pi_l[wl, al] * pi_f[wf, af]
            live = wgt > 0
            if not live.any():
                continue
            p, w, a_sl, a_sf = pair[live], wgt[live], sl[live], sf[live]
            cbar[:, p] += w * costs[:, a_sl, a_sf, al, af]
            out = dynamics[a_sl, a_sf, al, af].reshape(len(p), -1) * w[:, None]
            k, o = np.nonzero(out)
            zl, zf, sl2, sf2 = np.unravel_index(o, (nzl, nzf, nsl, nsf))
            tl = succ_l[wl[p[k]], zl, sl2, al]
            tf = succ_f[wf[p[k]], zf, sf2, af]
            if np.any(tl < 0) or np.any(tf < 0):
                raise RuntimeError("window space is not closed under the dynamics")
            rows.append(p[k])
            cols.append(tl * nf + tf)
            vals.append(out[k, o])
    if rows:
        return (np.concatenate(rows).astype(np.intp), np.concatenate(cols).astype(np.intp),
                np.concatenate(vals), cbar)
    return np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros(0), cbar
