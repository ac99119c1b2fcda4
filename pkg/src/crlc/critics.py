"""Similarity critics for probability and feature vectors, plus smoothing."""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from crlc import kernels


class CriticKind(str, Enum):
    LOG_DOT = "LogDot"
    DOT = "Dot"
    NEG_L2 = "NegL2"
    NEG_JS = "NegJS"
    SCALED_COSINE = "ScaledCosine"

    @property
    def code(self) -> int:
        """Kernel code; only defined for the probability critics."""
        return _CODES[self]


_CODES = {
    CriticKind.LOG_DOT: kernels.LOG_DOT,
    CriticKind.DOT: kernels.DOT,
    CriticKind.NEG_L2: kernels.NEG_L2,
    CriticKind.NEG_JS: kernels.NEG_JS,
}

PROBABILITY_CRITICS = (CriticKind.LOG_DOT, CriticKind.DOT, CriticKind.NEG_L2, CriticKind.NEG_JS)


@dataclass(frozen=True)
class CriticConfig:
    kind: CriticKind = CriticKind.LOG_DOT
    tau: float = 0.1
    gamma: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", CriticKind(self.kind))
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"smoothing must lie in [0, 1], got {self.gamma}")


def smooth(q, gamma: float):
    """Mix ``q`` with the uniform distribution: ``(1 - gamma) q + gamma / C``.

    Works on a single vector or row-wise on a matrix.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"smoothing must lie in [0, 1], got {gamma}")
    q = np.asarray(q, dtype=np.float64)
    C = q.shape[-1]
    return (1.0 - gamma) * q + gamma / C


def critic_log_dot(p, q) -> float:
    d = float(np.dot(p, q))
    if d <= 0.0:
        raise ArithmeticError(
            "log-dot critic undefined: p.q = 0 (disjoint supports; smooth inputs first)"
        )
    return float(np.log(d))


def critic_dot(p, q) -> float:
    return float(np.dot(p, q))


def critic_neg_l2(p, q) -> float:
    d = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return -float(np.dot(d, d))


def _kl_to_mid(p, q):
    # KL(p || (p+q)/2); the ratio is formed as 2p/(p+q) so a subnormal p
    # cannot underflow the midpoint to zero
    nz = p > 0
    return float(np.sum(p[nz] * np.log(2.0 * p[nz] / (p[nz] + q[nz]))))


def critic_neg_js(p, q) -> float:
    """Negative Jensen-Shannon divergence in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return -0.5 * (_kl_to_mid(p, q) + _kl_to_mid(q, p))


def critic_scaled_cosine(z1, z2, tau: float) -> float:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return float(np.dot(z1, z2)) / tau


_SCALAR = {
    CriticKind.LOG_DOT: critic_log_dot,
    CriticKind.DOT: critic_dot,
    CriticKind.NEG_L2: critic_neg_l2,
    CriticKind.NEG_JS: critic_neg_js,
}


def probability_critic(kind):
    """Look up the scalar function for a probability critic."""
    kind = CriticKind(kind)
    if kind not in _SCALAR:
        raise ValueError(f"{kind.value} is not a probability critic")
    return _SCALAR[kind]
