"""Hot numeric kernels: per-class E-step statistics and per-trial scoring.

Both kernels exist twice: a numba @njit loop and a pure-numpy path. The numpy
path is selected when numba is unavailable or when the environment variable
PLDA_LOCAL_NO_NUMBA is set to a non-empty value. ``benchmarks/bench_kernels.py``
compares the two.

Kernel contracts (shared by both paths):

estep_stats(A, counts, F) -> (M, R2, ll_lat)
    A:      (K, q) projected class sums, a_i = V' Sigma^-1 s_i
    counts: (K,)   class sizes n_i
    F:      (q, q) V' Sigma^-1 V
    M:      (K, q) posterior means m_i = (I + n_i F)^-1 a_i
    R2:     (q, q) sum_i n_i ((I + n_i F)^-1 + m_i m_i')
    ll_lat: scalar sum_i (-1/2 logdet(I + n_i F) + 1/2 a_i . m_i)

score_trials(alpha, U, cidx, AT, beta, pm, pt) -> scores
    per-trial gather: scores[i] = alpha[pm[i]] + beta[cidx[pm[i]], pt[i]]
                                  + U[pm[i]] . AT[pt[i]]
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = bool(os.environ.get("PLDA_LOCAL_NO_NUMBA"))

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def estep_stats_np(A, counts, F):
    K, q = A.shape
    M = np.empty_like(A)
    R2 = np.zeros((q, q))
    ll_lat = 0.0
    eye = np.eye(q)
    # classes sharing a size share the posterior covariance
    for n in np.unique(counts):
        idx = np.nonzero(counts == n)[0]
        P = eye + n * F
        Pinv = np.linalg.inv(P)
        sign, logdet = np.linalg.slogdet(P)
        Mn = A[idx] @ Pinv.T
        M[idx] = Mn
        R2 += n * (len(idx) * Pinv + Mn.T @ Mn)
        ll_lat += -0.5 * len(idx) * logdet + 0.5 * float(np.sum(A[idx] * Mn))
    return M, R2, ll_lat


def score_trials_np(alpha, U, cidx, AT, beta, pm, pt):
    out = np.empty(pm.shape[0])
    # chunked to bound the (chunk, q) gather temporaries
    step = 1 << 18
    for lo in range(0, pm.shape[0], step):
        hi = min(lo + step, pm.shape[0])
        m = pm[lo:hi]
        t = pt[lo:hi]
        out[lo:hi] = (
            alpha[m] + beta[cidx[m], t] + np.einsum("ij,ij->i", U[m], AT[t])
        )
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _estep_stats_nb(A, counts, F):
        K, q = A.shape
        # classes sharing a size share (I + n F)^-1; factorize once per size
        sizes = np.unique(counts)
        S = sizes.shape[0]
        Pinv = np.empty((S, q, q))
        logdets = np.empty(S)
        for s in range(S):
            P = sizes[s] * F.copy()
            for k in range(q):
                P[k, k] += 1.0
            L = np.linalg.cholesky(P)
            logdet = 0.0
            for k in range(q):
                logdet += 2.0 * np.log(L[k, k])
            logdets[s] = logdet
            Pinv[s] = np.linalg.inv(P)
        M = np.empty((K, q))
        R2 = np.zeros((q, q))
        ll_lat = 0.0
        for i in range(K):
            s = np.searchsorted(sizes, counts[i])
            n = counts[i]
            quad = 0.0
            for r in range(q):
                m_r = 0.0
                for c in range(q):
                    m_r += Pinv[s, r, c] * A[i, c]
                M[i, r] = m_r
                quad += m_r * A[i, r]
            for r in range(q):
                for c in range(q):
                    R2[r, c] += n * (Pinv[s, r, c] + M[i, r] * M[i, c])
            ll_lat += -0.5 * logdets[s] + 0.5 * quad
        return M, R2, ll_lat

    @njit(cache=True)
    def _score_trials_nb(alpha, U, cidx, AT, beta, pm, pt):
        N = pm.shape[0]
        q = U.shape[1]
        out = np.empty(N)
        for i in range(N):
            m = pm[i]
            t = pt[i]
            s = alpha[m] + beta[cidx[m], t]
            for k in range(q):
                s += U[m, k] * AT[t, k]
            out[i] = s
        return out

    def estep_stats(A, counts, F):
        if A.shape[1] == 0 or A.shape[0] == 0:
            return estep_stats_np(A, counts, F)
        return _estep_stats_nb(
            np.ascontiguousarray(A),
            np.ascontiguousarray(counts, dtype=np.int64),
            np.ascontiguousarray(F),
        )

    def score_trials(alpha, U, cidx, AT, beta, pm, pt):
        if U.shape[1] == 0:
            return score_trials_np(alpha, U, cidx, AT, beta, pm, pt)
        return _score_trials_nb(
            np.ascontiguousarray(alpha),
            np.ascontiguousarray(U),
            np.ascontiguousarray(cidx, dtype=np.int64),
            np.ascontiguousarray(AT),
            np.ascontiguousarray(beta),
            np.ascontiguousarray(pm, dtype=np.int64),
            np.ascontiguousarray(pt, dtype=np.int64),
        )

else:
    estep_stats = estep_stats_np
    score_trials = score_trials_np
