# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; same contracts as ``_pykernels``."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def dominance_keep_mask(const double[:, ::1] V, double tol):
    cdef Py_ssize_t n = V.shape[0], d = V.shape[1]
    cdef Py_ssize_t i, j, k, m = 0, m2
    cdef bint below, above
    cdef Py_ssize_t[::1] kept = np.empty(n, dtype=np.intp)
    for i in range(n):
        below = False
        for j in range(m):
            below = True
            for k in range(d):
                if V[kept[j], k] > V[i, k] + tol:
                    below = False
                    break
            if below:
                break
        if below:
            continue
        m2 = 0
        for j in range(m):
            above = True
            for k in range(d):
                if V[i, k] > V[kept[j], k] + tol:
                    above = False
                    break
            if not above:
                kept[m2] = kept[j]
                m2 += 1
        kept[m2] = i
        m = m2 + 1
    keep = np.zeros(n, dtype=bool)
    keep[np.asarray(kept[:m])] = True
    return keep


def nondominated_ranks(F_in):
    cdef const double[:, ::1] F = np.ascontiguousarray(F_in, dtype=np.float64)
    cdef Py_ssize_t n = F.shape[0], d = F.shape[1]
    cdef Py_ssize_t p, q, k, r, head, tail, nxt
    cdef bint le, lt, ge, gt
    cdef Py_ssize_t[::1] count = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] ranks = np.full(n, -1, dtype=np.intp)
    cdef cnp.uint8_t[:, ::1] dom = np.zeros((n, n), dtype=np.uint8)
    cdef Py_ssize_t[::1] queue = np.empty(n, dtype=np.intp)
    for p in range(n):
        for q in range(p + 1, n):
            le = True
            lt = False
            ge = True
            gt = False
            for k in range(d):
                if F[p, k] < F[q, k]:
                    lt = True
                    ge = False
                elif F[p, k] > F[q, k]:
                    gt = True
                    le = False
            if le and lt:
                dom[p, q] = 1
                count[q] += 1
            elif ge and gt:
                dom[q, p] = 1
                count[p] += 1
    tail = 0
    for p in range(n):
        if count[p] == 0:
            queue[tail] = p
            tail += 1
            ranks[p] = 0
    head = 0
    while head < tail:
        p = queue[head]
        head += 1
        for q in range(n):
            if dom[p, q]:
                count[q] -= 1
                if count[q] == 0:
                    ranks[q] = ranks[p] + 1
                    queue[tail] = q
                    tail += 1
    return np.asarray(ranks)


def pair_transitions(state_l_in, state_f_in, pi_l_in, pi_f_in, succ_l_in, succ_f_in,
                     dynamics_in, costs_in):
    cdef const Py_ssize_t[::1] state_l = np.ascontiguousarray(state_l_in, dtype=np.intp)
    cdef const Py_ssize_t[::1] state_f = np.ascontiguousarray(state_f_in, dtype=np.intp)
    cdef const double[:, ::1] pi_l = np.ascontiguousarray(pi_l_in, dtype=np.float64)
    cdef const double[:, ::1] pi_f = np.ascontiguousarray(pi_f_in, dtype=np.float64)
    cdef const Py_ssize_t[:, :, :, ::1] succ_l = np.ascontiguousarray(succ_l_in, dtype=np.intp)
    cdef const Py_ssize_t[:, :, :, ::1] succ_f = np.ascontiguousarray(succ_f_in, dtype=np.intp)
    dyn = np.ascontiguousarray(dynamics_in, dtype=np.float64)
    cdef const double[:, :, :, :, ::1] cost = np.ascontiguousarray(costs_in, dtype=np.float64)
    cdef Py_ssize_t nl = state_l.shape[0], nf = state_f.shape[0]
    cdef Py_ssize_t nal = pi_l.shape[1], naf = pi_f.shape[1]
    cdef Py_ssize_t nsl = dyn.shape[0], nsf = dyn.shape[1]
    cdef Py_ssize_t nzl = dyn.shape[4], nzf = dyn.shape[5]
    cdef Py_ssize_t nout = nzl * nzf * nsl * nsf
    cdef Py_ssize_t ncrit = cost.shape[0]

    # sparse outcome lists per (sl, sf, al, af)
    cdef Py_ssize_t nblock = nsl * nsf * nal * naf
    flat2 = np.asarray(dyn).reshape(nblock, nout)
    nz_counts = np.count_nonzero(flat2, axis=1)
    cdef Py_ssize_t[::1] off = np.concatenate([[0], np.cumsum(nz_counts)]).astype(np.intp)
    bi, oi = np.nonzero(flat2)
    cdef Py_ssize_t[::1] out_idx = oi.astype(np.intp)
    cdef double[::1] out_p = flat2[bi, oi].copy()

    cdef Py_ssize_t wl, wf, al, af, blk, j, o, zl, zf, sl2, sf2, tl, tf, pair, c
    cdef Py_ssize_t sl, sf, total = 0, pos = 0
    cdef double w

    for wl in range(nl):
        for wf in range(nf):
            for al in range(nal):
                if pi_l[wl, al] <= 0:
                    continue
                for af in range(naf):
                    if pi_f[wf, af] <= 0:
                        continue
                    blk = ((state_l[wl] * nsf + state_f[wf]) * nal + al) * naf + af
                    total += off[blk + 1] - off[blk]

    rows = np.empty(total, dtype=np.intp)
    cols = np.empty(total, dtype=np.intp)
    vals = np.empty(total, dtype=np.float64)
    cbar = np.zeros((ncrit, nl * nf), dtype=np.float64)
    cdef Py_ssize_t[::1] r_v = rows
    cdef Py_ssize_t[::1] c_v = cols
    cdef double[::1] v_v = vals
    cdef double[:, ::1] cb = cbar

    for wl in range(nl):
        sl = state_l[wl]
        for wf in range(nf):
            sf = state_f[wf]
            pair = wl * nf + wf
            for al in range(nal):
                if pi_l[wl, al] <= 0:
                    continue
                for af in range(naf):
                    if pi_f[wf, af] <= 0:
                        continue
                    w = pi_l[wl, al] * pi_f[wf, af]
                    for c in range(ncrit):
                        cb[c, pair] += w * cost[c, sl, sf, al, af]
                    blk = ((sl * nsf + sf) * nal + al) * naf + af
                    for j in range(off[blk], off[blk + 1]):
                        o = out_idx[j]
                        sf2 = o % nsf
                        sl2 = (o // nsf) % nsl
                        zf = (o // (nsf * nsl)) % nzf
                        zl = o // (nsf * nsl * nzf)
                        tl = succ_l[wl, zl, sl2, al]
                        tf = succ_f[wf, zf, sf2, af]
                        if tl < 0 or tf < 0:
                            raise RuntimeError("window space is not closed under the dynamics")
                        r_v[pos] = pair
                        c_v[pos] = tl * nf + tf
                        v_v[pos] = w * out_p[j]
                        pos += 1
    return rows, cols, vals, cbar
