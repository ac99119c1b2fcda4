"""Contrastive objectives, the marginal-entropy regularizer and their gradients.

Scalar-level functions (``loss_pc``, ``loss_cluster`` ...) take one anchor
and its candidate set and are meant for checking and inspection. The
``*_grad`` functions work on whole minibatches and return analytic
gradients; the training loop uses those.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from crlc import kernels
from crlc.critics import CriticConfig, CriticKind, probability_critic, smooth

LOGIT_BOUND = 25.0


@dataclass(frozen=True)
class LossWeights:
    entropy: float = 1.0
    fc: float = 10.0
    ce: float = 1.0

    def __post_init__(self):
        for name in ("entropy", "fc", "ce"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name!r} must be nonnegative")


@dataclass
class ProbBatch:
    """An anchor probability vector and its M candidates.

    ``rows[positive_index]`` is the positive; the rest are negatives.
    """
    rows: np.ndarray
    anchor: np.ndarray
    positive_index: int = 0

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        if not 0 <= self.positive_index < len(self.rows):
            raise ValueError("positive_index out of range")
        if self.rows.shape[1] != self.anchor.shape[0]:
            raise ValueError("anchor and rows disagree on the number of clusters")


# ---------------------------------------------------------------------------
# softmax helpers
# ---------------------------------------------------------------------------

def clamp_logits(u):
    return np.clip(u, -LOGIT_BOUND, LOGIT_BOUND)


def softmax(u):
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(u - u.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(q, dq):
    """Pull a gradient on softmax outputs back to the logits."""
    return q * (dq - np.sum(dq * q, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# scalar objectives
# ---------------------------------------------------------------------------

def contrast_from_scores(scores, positive_index: int) -> float:
    """``-log softmax(scores)[positive_index]`` via log-sum-exp."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    mx = s.max()
    lse = mx + np.log(np.sum(np.exp(s - mx)))
    return float(max(lse - s[positive_index], 0.0))


def loss_fc(anchors, candidates, positives, tau: float) -> float:
    """Feature contrastive loss averaged over anchors.

    ``positives[i]`` is the row of ``candidates`` paired with ``anchors[i]``.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    positives = np.asarray(positives, dtype=np.int64).ravel()
    if len(positives) != len(anchors):
        raise ValueError("need exactly one positive index per anchor")
    if anchors.shape[1] != candidates.shape[1]:
        raise ValueError("anchor and candidate widths differ")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    S = anchors @ candidates.T / tau
    return float(np.mean([contrast_from_scores(S[i], positives[i]) for i in range(len(S))]))


def loss_pc(batch: ProbBatch, critic: CriticConfig) -> float:
    f = probability_critic(critic.kind)
    a = smooth(batch.anchor, critic.gamma)
    rows = smooth(batch.rows, critic.gamma)
    scores = [f(a, r) for r in rows]
    return contrast_from_scores(scores, batch.positive_index)


def marginal_entropy(probs) -> float:
    """Entropy (nats) of the mean of the given probability rows."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("marginal entropy of an empty set")
    qbar = np.atleast_2d(probs).mean(axis=0)
    nz = qbar > 0
    return float(-np.sum(qbar[nz] * np.log(qbar[nz])))


def loss_cluster(batches, weights: LossWeights, critic: CriticConfig) -> float:
    """Mean probability-contrastive loss minus the weighted entropy of the
    anchors' marginal assignment."""
    if isinstance(batches, ProbBatch):
        batches = [batches]
    pc = float(np.mean([loss_pc(b, critic) for b in batches]))
    h = marginal_entropy([b.anchor for b in batches])
    return pc - weights.entropy * h


def loss_crlc(prob_part: float, fc_part: float, entropy_part: float, weights: LossWeights) -> float:
    return prob_part - weights.entropy * entropy_part + weights.fc * fc_part


def loss_crlc_semi(crlc: float, labeled_logprobs: Sequence[float], weights: LossWeights) -> float:
    lp = np.asarray(labeled_logprobs, dtype=np.float64)
    if weights.ce == 0:
        return crlc
    if lp.size == 0:
        raise ValueError("cross-entropy term needs at least one labeled sample")
    return crlc + weights.ce * float(np.mean(-lp))


def info_nce_estimate(contrast_loss: float, M: int) -> float:
    """Mutual-information lower bound ``log M - loss``; never exceeds log M."""
    if M < 1:
        raise ValueError("need at least one candidate")
    return float(np.log(M) - contrast_loss)


# ---------------------------------------------------------------------------
# analytic gradients of the log-dot probability loss
# ---------------------------------------------------------------------------

def grad_pc_probs(anchor, rows, positive_index: int = 0):
    """dL_PC/d(anchor) for the log-dot critic, already-smoothed inputs."""
    anchor = np.asarray(anchor, dtype=np.float64)
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    d = rows @ anchor
    total = d.sum()
    if total <= 0 or d[positive_index] <= 0:
        raise ArithmeticError("zero dot product in log-dot gradient; smooth inputs first")
    return rows.sum(axis=0) / total - rows[positive_index] / d[positive_index]


def grad_pc_logits(anchor_logits, batch: ProbBatch, gamma: float = 0.0):
    """Gradient of ``loss_pc`` (log-dot critic) w.r.t. the anchor logits.

    ``batch.anchor`` is ignored; the anchor is ``softmax(clip(anchor_logits))``.
    Smoothing with ``gamma`` is applied to anchor and rows and chained through
    exactly, so at ``gamma = 0`` this is the closed form

        sum_i qa_c q_ic / sum_i sum_k qa_k q_ik  -  qa_c q_1c / sum_k qa_k q_1k.

    Components outside the logit clamp get zero gradient.
    """
    u = np.asarray(anchor_logits, dtype=np.float64)
    qa = softmax(clamp_logits(u))
    g = grad_pc_probs(smooth(qa, gamma), smooth(batch.rows, gamma), batch.positive_index)
    du = softmax_backward(qa, (1.0 - gamma) * g)
    du[np.abs(u) > LOGIT_BOUND] = 0.0
    return du


def saturation_gradient(anchor, positive, gamma: float = 0.0):
    """Logit gradient of the log-dot critic ``log(q.p)`` for a given anchor
    probability ``q``, evaluated at the smoothed point::

        q_c p_c / sum_k q_k p_k - q_c

    ``anchor`` may sit on a simplex corner; the smoothed vector stands in for
    the softmax output, so this shows how smoothing lifts the zero gradient of
    a one-hot anchor.
    """
    q = smooth(anchor, gamma)
    p = smooth(positive, gamma)
    d = float(q @ p)
    if d <= 0:
        raise ArithmeticError("anchor and positive have disjoint supports")
    return q * p / d - q


# ---------------------------------------------------------------------------
# minibatch losses with gradients
# ---------------------------------------------------------------------------

def pc_loss_grad(A, P, critic: CriticConfig, positive_index=None):
    """Probability contrastive loss for per-anchor candidate sets.

    A: (B, C) anchor probabilities; P: (B, M, C) candidates. Row ``b`` of
    ``positive_index`` (default 0) marks each anchor's positive. Returns
    ``(mean loss, dL/dA, dL/dP)`` with gradients on the unsmoothed inputs.
    """
    gamma = critic.gamma
    return _pc_smoothed(smooth(A, gamma), smooth(P, gamma), critic, positive_index)


def _pc_smoothed(As, Ps, critic, positive_index):
    B = Ps.shape[0]
    pos = np.zeros(B, dtype=np.int64) if positive_index is None else np.asarray(positive_index)
    code = critic.kind.code
    S = kernels.critic_scores(As, Ps, code)
    if not np.all(np.isfinite(S)):
        raise ArithmeticError("non-finite critic score; smooth inputs first")
    rows, G = kernels.contrast_rows(S, pos)
    G /= B
    dA, dP = kernels.critic_backward(As, Ps, G, code)
    scale = 1.0 - critic.gamma
    return float(rows.mean()), scale * dA, scale * dP


def inbatch_pc_loss_grad(A, Q, critic: CriticConfig):
    """Anchors ``A[b]`` against every row of ``Q``, positive ``Q[b]``."""
    B = A.shape[0]
    Qs = smooth(Q, critic.gamma)
    P = np.broadcast_to(Qs[None, :, :], (B,) + Q.shape)
    loss, dA, dP = _pc_smoothed(smooth(A, critic.gamma), P, critic, np.arange(B))
    return loss, dA, dP.sum(axis=0)


def fc_loss_grad(Z1, Z2, tau: float):
    """Feature contrastive loss of anchors ``Z1`` against candidates ``Z2``
    (positive on the diagonal) and gradients w.r.t. both."""
    B = Z1.shape[0]
    S = Z1 @ Z2.T / tau
    rows, G = kernels.contrast_rows(S, np.arange(B))
    G /= B * tau
    return float(rows.mean()), G @ Z2, G.T @ Z1


def entropy_grad(Q):
    """Marginal entropy of the rows of ``Q`` and its gradient w.r.t. ``Q``."""
    B = Q.shape[0]
    qbar = Q.mean(axis=0)
    logq = np.log(np.maximum(qbar, np.finfo(np.float64).tiny))
    h = float(-np.sum(qbar * logq))
    dQ = np.broadcast_to(-(logq + 1.0) / B, Q.shape).copy()
    return h, dQ


def cross_entropy_grad(Q, labels):
    """Mean ``-log Q[b, y_b]`` and its gradient w.r.t. ``Q``."""
    B = Q.shape[0]
    picked = Q[np.arange(B), labels]
    dQ = np.zeros_like(Q)
    dQ[np.arange(B), labels] = -1.0 / (B * picked)
    return float(np.mean(-np.log(picked))), dQ
