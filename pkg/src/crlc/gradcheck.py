"""Central finite-difference checks for the analytic gradients."""
import numpy as np

from crlc.critics import CriticConfig, CriticKind
from crlc.losses import ProbBatch, clamp_logits, grad_pc_logits, loss_pc, softmax


def rel_error(analytic, numeric, floor=1e-8):
    """``max|a - n| / max(max|a|, max|n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def random_pc_instance(rng, C, M, logit_scale=2.0):
    u = rng.normal(scale=logit_scale, size=C)
    rows = softmax(rng.normal(scale=logit_scale, size=(M, C)))
    return u, ProbBatch(rows=rows, anchor=softmax(u), positive_index=int(rng.integers(M)))


def pc_gradient_error(u, batch, gamma, h=1e-5):
    critic = CriticConfig(CriticKind.LOG_DOT, gamma=gamma)

    def f(v):
        return loss_pc(ProbBatch(batch.rows, softmax(clamp_logits(v)), batch.positive_index), critic)

    return rel_error(grad_pc_logits(u, batch, gamma), central_difference(f, u, h))


def check_pc_gradients(trials=100, seed=0, h=1e-5):
    """Max relative error of the log-dot logit gradient over random instances
    with C in 2..10, M in 2..16, gamma in {0, 0.01}."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        C = int(rng.integers(2, 11))
        M = int(rng.integers(2, 17))
        gamma = (0.0, 0.01)[t % 2]
        u, batch = random_pc_instance(rng, C, M)
        worst = max(worst, pc_gradient_error(u, batch, gamma, h))
    return worst
