"""Compiled inner loops for the Monte Carlo engine.

These mirror the reference implementations in :mod:`mixsim.grouping` and
:mod:`mixsim.transceiver` and are checked against them in the tests.
"""

import numpy as np
from numba import njit

RANK_TOL = 1e-9


@njit(cache=True)
def _basis(F, cols, ncols, Q):
    """Modified Gram-Schmidt on ``F[:, cols[:ncols]]`` into ``Q``.

    Columns whose residual falls below RANK_TOL times their own norm are
    dropped. Returns the rank.
    """
    N = F.shape[0]
    r = 0
    for c in range(ncols):
        j = cols[c]
        nrm0 = 0.0
        for i in range(N):
            Q[i, r] = F[i, j]
            nrm0 += Q[i, r].real ** 2 + Q[i, r].imag ** 2
        if nrm0 == 0.0:
            continue
        # two passes keep the basis orthonormal to machine precision
        for _ in range(2):
            for p in range(r):
                d = 0j
                for i in range(N):
                    d += np.conj(Q[i, p]) * Q[i, r]
                for i in range(N):
                    Q[i, r] -= d * Q[i, p]
        nrm = 0.0
        for i in range(N):
            nrm += Q[i, r].real ** 2 + Q[i, r].imag ** 2
        if nrm <= (RANK_TOL ** 2) * nrm0:
            continue
        s = 1.0 / np.sqrt(nrm)
        for i in range(N):
            Q[i, r] *= s
        r += 1
    return r


@njit(cache=True)
def _max_phi(Q, rank, F, cols, ncols):
    """Largest squared cosine of the listed columns of F against C(Q)."""
    N = F.shape[0]
    best = 0.0
    for c in range(ncols):
        j = cols[c]
        xx = 0.0
        for i in range(N):
            xx += F[i, j].real ** 2 + F[i, j].imag ** 2
        if xx == 0.0:
            continue
        pp = 0.0
        for p in range(rank):
            d = 0j
            for i in range(N):
                d += np.conj(Q[i, p]) * F[i, j]
            pp += d.real ** 2 + d.imag ** 2
        v = pp / xx
        if v > best:
            best = v
    return min(best, 1.0)


@njit(cache=True)
def _theta(F, rest, nrest, sub, nsub, Q):
    if nrest == 0 or nsub == 0:
        return 0.0
    r = _basis(F, rest, nrest, Q)
    t1 = _max_phi(Q, r, F, sub, nsub)
    r = _basis(F, sub, nsub, Q)
    t2 = _max_phi(Q, r, F, rest, nrest)
    return max(t1, t2)


@njit(cache=True)
def _project_out(F, basis_cols, nb, target_cols, nt, Q):
    N = F.shape[0]
    r = _basis(F, basis_cols, nb, Q)
    for c in range(nt):
        j = target_cols[c]
        for p in range(r):
            d = 0j
            for i in range(N):
                d += np.conj(Q[i, p]) * F[i, j]
            for i in range(N):
                F[i, j] -= d * Q[i, p]


@njit(cache=True)
def algorithm1_one(H, theta_th, labels):
    """Group one channel matrix; writes group ids to ``labels``.

    Returns the number of groups. Groups are numbered in acceptance order.
    """
    N, K = H.shape
    F = H.copy()
    Q = np.empty((N, K), dtype=np.complex128)
    alive = np.ones(K, dtype=np.bool_)
    rem = np.empty(K, dtype=np.int64)
    sub = np.empty(K, dtype=np.int64)
    rest = np.empty(K, dtype=np.int64)
    comb = np.empty(K, dtype=np.int64)
    for u in range(K):
        labels[u] = -1
    gid = 0
    ng = 1
    nrem = K
    while ng <= K and nrem > 0:
        m = 0
        for u in range(K):
            if alive[u]:
                rem[m] = u
                m += 1
        accepted = False
        if ng <= nrem:
            for i in range(ng):
                comb[i] = i
            while True:
                # split rem into the candidate subset and the rest
                ns = 0
                nr = 0
                ci = 0
                for i in range(nrem):
                    if ci < ng and comb[ci] == i:
                        sub[ns] = rem[i]
                        ns += 1
                        ci += 1
                    else:
                        rest[nr] = rem[i]
                        nr += 1
                if _theta(F, rest, nr, sub, ns, Q) <= theta_th:
                    for i in range(ns):
                        labels[sub[i]] = gid
                        alive[sub[i]] = False
                    gid += 1
                    nrem -= ns
                    if nr > 0:
                        _project_out(F, sub, ns, rest, nr, Q)
                    accepted = True
                    break
                # next lexicographic combination
                i = ng - 1
                while i >= 0 and comb[i] == nrem - ng + i:
                    i -= 1
                if i < 0:
                    break
                comb[i] += 1
                for p in range(i + 1, ng):
                    comb[p] = comb[p - 1] + 1
        if not accepted:
            ng += 1
    if nrem > 0:
        for u in range(K):
            if alive[u]:
                labels[u] = gid
        gid += 1
    return gid


@njit(cache=True)
def effective_channels_one(H, labels, G):
    """Project each channel onto the complement of the other groups."""
    N, K = H.shape
    Q = np.empty((N, K), dtype=np.complex128)
    others = np.empty(K, dtype=np.int64)
    ngroups = 0
    for u in range(K):
        if labels[u] + 1 > ngroups:
            ngroups = labels[u] + 1
    for j in range(ngroups):
        no = 0
        for u in range(K):
            if labels[u] != j:
                others[no] = u
                no += 1
        r = _basis(H, others, no, Q)
        for u in range(K):
            if labels[u] != j:
                continue
            for i in range(N):
                G[i, u] = H[i, u]
            for p in range(r):
                d = 0j
                for i in range(N):
                    d += np.conj(Q[i, p]) * H[i, u]
                for i in range(N):
                    G[i, u] -= d * Q[i, p]


@njit(cache=True)
def algorithm1_batch(Hb, theta_th, labels, ngroups, Gb):
    """Run grouping and effective channels over a batch ``(n, N, K)``."""
    for b in range(Hb.shape[0]):
        ngroups[b] = algorithm1_one(Hb[b], theta_th, labels[b])
        effective_channels_one(Hb[b], labels[b], Gb[b])


@njit(cache=True)
def zf_batch(Hb, Gb):
    """Zero-forcing directions: each channel projected off all others."""
    n, N, K = Hb.shape
    labels = np.arange(K)
    for b in range(n):
        effective_channels_one(Hb[b], labels, Gb[b])


@njit(cache=True)
def maxmin_polish(V, cands, iters, step):
    """Projected subgradient ascent of ``min_i |v_i^H w|^2`` on the sphere.

    ``V`` holds unit channels as columns and ``cands`` unit starting points
    as rows. Each step moves along the gradient of the currently smallest
    term, then renormalizes. Returns the best iterate over all starts.
    """
    N, L = V.shape
    best_val = -1.0
    best_w = np.zeros(N, dtype=np.complex128)
    w = np.empty(N, dtype=np.complex128)
    for m in range(cands.shape[0]):
        for i in range(N):
            w[i] = cands[m, i]
        for t in range(iters + 1):
            lo = np.inf
            arg = 0
            dot_arg = 0j
            for l in range(L):
                d = 0j
                for i in range(N):
                    d += np.conj(V[i, l]) * w[i]
                a = d.real ** 2 + d.imag ** 2
                if a < lo:
                    lo = a
                    arg = l
                    dot_arg = d
            if lo > best_val:
                best_val = lo
                for i in range(N):
                    best_w[i] = w[i]
            if t == iters:
                break
            mu = step / np.sqrt(t + 1.0)
            nrm = 0.0
            for i in range(N):
                w[i] += mu * V[i, arg] * dot_arg
                nrm += w[i].real ** 2 + w[i].imag ** 2
            s = 1.0 / np.sqrt(nrm)
            for i in range(N):
                w[i] *= s
    return best_w, best_val


@njit(cache=True)
def order_and_small_beams(Gb, labels, W, pos, size, pending):
    """Decoding order and beams for groups of one or two users.

    Members are ranked by decreasing effective norm (ties by index). A
    singleton gets its matched beam and a pair the closed-form max-min
    beam. Larger groups are flagged in ``pending`` and left to the caller.
    """
    n, N, K = Gb.shape
    n2 = np.empty(K)
    members = np.empty(K, dtype=np.int64)
    for b in range(n):
        G = Gb[b]
        for u in range(K):
            s = 0.0
            for i in range(N):
                s += G[i, u].real ** 2 + G[i, u].imag ** 2
            n2[u] = s
            pending[b, u] = False
        ng = 0
        for u in range(K):
            if labels[b, u] + 1 > ng:
                ng = labels[b, u] + 1
        for j in range(ng):
            m = 0
            for u in range(K):
                if labels[b, u] == j:
                    members[m] = u
                    m += 1
            # insertion sort by decreasing norm, stable in index
            for p in range(1, m):
                u = members[p]
                q = p - 1
                while q >= 0 and n2[members[q]] < n2[u]:
                    members[q + 1] = members[q]
                    q -= 1
                members[q + 1] = u
            for p in range(m):
                pos[b, members[p]] = p
                size[b, members[p]] = m
            if m == 1:
                u = members[0]
                s = 1.0 / np.sqrt(n2[u]) if n2[u] > 0 else 0.0
                for i in range(N):
                    W[b, i, u] = G[i, u] * s
            elif m == 2:
                u0 = members[0]
                u1 = members[1]
                s0 = 1.0 / np.sqrt(n2[u0])
                s1 = 1.0 / np.sqrt(n2[u1])
                rho = 0j
                for i in range(N):
                    rho += np.conj(G[i, u0]) * G[i, u1]
                rho *= s0 * s1
                ar = abs(rho)
                ph = np.conj(rho) / ar if ar > 0 else 1.0 + 0j
                nrm = 0.0
                for i in range(N):
                    W[b, i, u0] = G[i, u0] * s0 + ph * G[i, u1] * s1
                    nrm += W[b, i, u0].real ** 2 + W[b, i, u0].imag ** 2
                s = 1.0 / np.sqrt(nrm)
                for i in range(N):
                    W[b, i, u0] *= s
                    W[b, i, u1] = W[b, i, u0]
            else:
                for p in range(m):
                    pending[b, members[p]] = True
