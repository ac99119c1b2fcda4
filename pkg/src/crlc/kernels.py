"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``CRLC_DISABLE_NUMBA`` is unset (or set to ``0``). Both paths
expose the same functions with the same semantics; results agree to
floating-point reassociation error, not bit-for-bit. Work that is a BLAS
contraction or a single vectorized exp/log (dot-type scores, row softmax,
the similarity matrix) goes through numpy on both paths.

Critic codes used by the score kernels::

    0  log of dot product
    1  dot product
    2  negative squared L2 distance
    3  negative Jensen-Shannon divergence
"""
import math
import os

import numpy as np

LOG_DOT, DOT, NEG_L2, NEG_JS = 0, 1, 2, 3

_flag = os.environ.get("CRLC_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba as nb
    HAVE_NUMBA = True
except ImportError:
    nb = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# fastmath stays off: gradient checks need IEEE semantics
_jit_opts = dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


def _njit(fn):
    if nb is None:
        return fn
    return nb.njit(**_jit_opts)(fn)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _xlogx_ratio(p, s):
    # p * log(2p / s), s = p + q, with 0 log 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = p * np.log(2.0 * p / s)
    return np.where(p > 0, out, 0.0)


def _np_critic_scores(A, P, code):
    if code == LOG_DOT or code == DOT:
        S = np.einsum("bc,bmc->bm", A, P)
        if code == LOG_DOT:
            with np.errstate(divide="ignore"):
                S = np.log(S)
        return S
    a = A[:, None, :]
    if code == NEG_L2:
        return -np.sum((a - P) ** 2, axis=-1)
    s = a + P
    kl_a = _xlogx_ratio(np.broadcast_to(a, P.shape), s).sum(-1)
    kl_p = _xlogx_ratio(P, s).sum(-1)
    return -0.5 * (kl_a + kl_p)


def _np_critic_backward(A, P, G, code):
    a = A[:, None, :]
    g = G[:, :, None]
    if code == DOT:
        dA = np.einsum("bm,bmc->bc", G, P)
        dP = g * a
    elif code == LOG_DOT:
        d = np.einsum("bc,bmc->bm", A, P)
        w = (G / d)[:, :, None]
        dA = np.sum(w * P, axis=1)
        dP = w * a
    elif code == NEG_L2:
        diff = a - P
        dA = -2.0 * np.sum(g * diff, axis=1)
        dP = 2.0 * g * diff
    else:
        s = a + P
        with np.errstate(divide="ignore"):
            la = np.log(2.0 * np.broadcast_to(a, P.shape) / s)
            lp = np.log(2.0 * P / s)
        dA = np.sum(g * (-0.5 * la), axis=1)
        dP = g * (-0.5 * lp)
    return dA, dP


def _np_contrast_rows(S, pos):
    B = S.shape[0]
    rows = np.arange(B)
    mx = S.max(axis=1, keepdims=True)
    e = np.exp(S - mx)
    z = e.sum(axis=1, keepdims=True)
    lse = np.log(z[:, 0]) + mx[:, 0]
    loss = lse - S[rows, pos]
    G = e / z
    G[rows, pos] -= 1.0
    return loss, G


def _np_contingency(a, b, ka, kb):
    table = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _np_topk_rows(S, K):
    # stable sort on -S gives descending similarity, ties by lowest index
    order = np.argsort(-S, axis=1, kind="stable")
    return order[:, :K].astype(np.int64)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

@_njit
def _nb_critic_scores(A, P, code):
    B, M, C = P.shape
    S = np.empty((B, M))
    for b in range(B):
        for m in range(M):
            acc = 0.0
            if code == LOG_DOT or code == DOT:
                for c in range(C):
                    acc += A[b, c] * P[b, m, c]
                if code == LOG_DOT:
                    acc = math.log(acc) if acc > 0.0 else -np.inf
            elif code == NEG_L2:
                for c in range(C):
                    d = A[b, c] - P[b, m, c]
                    acc -= d * d
            else:
                for c in range(C):
                    x = A[b, c]
                    y = P[b, m, c]
                    s = x + y
                    if x > 0.0:
                        acc -= 0.5 * x * math.log(2.0 * x / s)
                    if y > 0.0:
                        acc -= 0.5 * y * math.log(2.0 * y / s)
            S[b, m] = acc
    return S


@_njit
def _nb_critic_backward(A, P, G, code):
    B, M, C = P.shape
    dA = np.zeros((B, C))
    dP = np.empty((B, M, C))
    for b in range(B):
        for m in range(M):
            g = G[b, m]
            if code == LOG_DOT or code == DOT:
                w = g
                if code == LOG_DOT:
                    d = 0.0
                    for c in range(C):
                        d += A[b, c] * P[b, m, c]
                    w = g / d
                for c in range(C):
                    dA[b, c] += w * P[b, m, c]
                    dP[b, m, c] = w * A[b, c]
            elif code == NEG_L2:
                for c in range(C):
                    diff = A[b, c] - P[b, m, c]
                    dA[b, c] -= 2.0 * g * diff
                    dP[b, m, c] = 2.0 * g * diff
            else:
                for c in range(C):
                    x = A[b, c]
                    y = P[b, m, c]
                    s = x + y
                    dA[b, c] -= 0.5 * g * math.log(2.0 * x / s)
                    dP[b, m, c] = -0.5 * g * math.log(2.0 * y / s)
    return dA, dP


@_njit
def _nb_contingency(a, b, ka, kb):
    table = np.zeros((ka, kb), dtype=np.int64)
    for i in range(a.shape[0]):
        table[a[i], b[i]] += 1
    return table


@_njit
def _nb_topk_rows(S, K):
    n = S.shape[0]
    out = np.empty((n, K), dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = S[i]
        kth = -np.partition(-row, K - 1)[K - 1]
        # everything above the K-th value, then ties at it, each in index order
        cnt = 0
        for j in range(n):
            if row[j] > kth:
                cand[cnt] = j
                cnt += 1
        for j in range(n):
            if cnt == K:
                break
            if row[j] == kth:
                cand[cnt] = j
                cnt += 1
        sel = cand[:K].copy()
        order = np.argsort(-row[sel], kind="mergesort")
        for k in range(K):
            out[i, k] = sel[order[k]]
    return out


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

def critic_scores(A, P, code):
    """Scores ``S[b, m] = f(A[b], P[b, m])`` for anchors ``A`` (B, C) and
    per-anchor candidate sets ``P`` (B, M, C)."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    # dot-type scores are a contraction plus one log: numpy is faster
    if HAVE_NUMBA and code not in (LOG_DOT, DOT):
        return _nb_critic_scores(A, P, int(code))
    return _np_critic_scores(A, P, int(code))


def critic_backward(A, P, G, code):
    """Pull ``G = dL/dS`` back to ``(dL/dA, dL/dP)``."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    if HAVE_NUMBA:
        return _nb_critic_backward(A, P, G, int(code))
    return _np_critic_backward(A, P, G, int(code))


def contrast_rows(S, pos):
    """Row-wise softmax cross-entropy.

    Returns per-row losses and ``dloss_b/dS[b, :]`` (softmax minus one-hot).
    """
    # exp/log bound: numpy's vectorized ufuncs beat a scalar loop here
    S = np.asarray(S, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.int64)
    return _np_contrast_rows(S, pos)


def contingency(a, b, ka, kb):
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if HAVE_NUMBA:
        return _nb_contingency(a, b, int(ka), int(kb))
    return _np_contingency(a, b, int(ka), int(kb))


def topk_cosine(F, K):
    """Indices of the ``K`` most similar rows of ``F`` to each row, itself
    excluded, ties broken by lowest index."""
    F = np.asarray(F, dtype=np.float64)
    S = F @ F.T
    n = S.shape[0]
    S[np.arange(n), np.arange(n)] = -np.inf
    if HAVE_NUMBA:
        return _nb_topk_rows(S, int(K))
    return _np_topk_rows(S, int(K))
