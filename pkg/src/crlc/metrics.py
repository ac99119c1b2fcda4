"""Clustering metrics: Hungarian-matched accuracy, NMI, ARI."""
import numpy as np
from scipy.optimize import linear_sum_assignment

from crlc import kernels


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"partition lengths differ: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("empty partition")
    if pred.min() < 0 or truth.min() < 0:
        raise ValueError("partition labels must be nonnegative")
    return pred, truth


def contingency_table(pred, truth):
    pred, truth = _check(pred, truth)
    return kernels.contingency(pred, truth, pred.max() + 1, truth.max() + 1)


def hungarian(cost):
    """Minimum-cost permutation: ``perm[i]`` is the column assigned to row i."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    _, cols = linear_sum_assignment(cost)
    return cols


def cluster_mapping(pred, truth):
    """Best cluster -> class map under one-to-one matching."""
    table = contingency_table(pred, truth)
    k = max(table.shape)
    sq = np.zeros((k, k), dtype=np.int64)
    sq[: table.shape[0], : table.shape[1]] = table
    return hungarian(-sq), sq


def clustering_accuracy(pred, truth) -> float:
    perm, sq = cluster_mapping(pred, truth)
    return float(sq[np.arange(len(perm)), perm].sum() / sq.sum())


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = contingency_table(pred, truth).astype(np.float64)
    n = table.sum()
    hp, ht = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0.0 and ht == 0.0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(np.clip(mi / (0.5 * (hp + ht)), 0.0, 1.0))


def _comb2(x):
    return x * (x - 1) / 2.0


def ari(pred, truth) -> float:
    table = contingency_table(pred, truth).astype(np.float64)
    n = table.sum()
    if n < 2:
        raise ValueError("ARI needs at least two elements")
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial in the same way
        return 1.0 if sum_ij == max_index else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def evaluate(pred, truth) -> dict:
    return {"acc": clustering_accuracy(pred, truth), "nmi": nmi(pred, truth), "ari": ari(pred, truth)}
