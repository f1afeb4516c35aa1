"""Clustering accuracy (optimal label matching), ARI and NMI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # (K_pred, K_true)
    n: int


def _labels(a):
    if hasattr(a, "labels"):
        a = a.labels
    return np.asarray(a).ravel()


def contingency_table(pred, truth) -> ContingencyTable:
    pred, truth = _labels(pred), _labels(truth)
    if pred.shape != truth.shape:
        raise DomainError(f"label arrays differ in length: {pred.size} vs {truth.size}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    kp = int(p.max()) + 1 if p.size else 0
    kt = int(t.max()) + 1 if t.size else 0
    return ContingencyTable(kernels.contingency(p, t, kp, kt), int(pred.size))


def hungarian(cost) -> np.ndarray:
    """Row-to-column assignment minimizing total cost.

    Rectangular input is allowed. With more rows than columns the surplus
    rows are left unassigned and marked ``-1``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or not np.all(np.isfinite(cost)):
        raise DomainError("cost must be a finite 2-D array")
    n, m = cost.shape
    if n <= m:
        return kernels.hungarian(cost)
    cols = kernels.hungarian(cost.T)
    out = np.full(n, -1, dtype=np.int64)
    out[cols] = np.arange(m)
    return out


def best_mapping(pred, truth) -> dict:
    """Map each predicted label to the true label it is matched with."""
    pred, truth = _labels(pred), _labels(truth)
    up, p = np.unique(pred, return_inverse=True)
    ut, t = np.unique(truth, return_inverse=True)
    k = max(up.size, ut.size)
    counts = np.zeros((k, k))
    counts[:up.size, :ut.size] = kernels.contingency(p, t, up.size, ut.size)
    assign = hungarian(-counts)
    return {int(up[i]): int(ut[assign[i]]) for i in range(up.size) if assign[i] < ut.size}


def accuracy(pred, truth) -> float:
    """Fraction of points correct under the best one-to-one relabeling."""
    table = contingency_table(pred, truth)
    kp, kt = table.counts.shape
    k = max(kp, kt)
    padded = np.zeros((k, k))
    padded[:kp, :kt] = table.counts
    assign = hungarian(-padded)
    return float(padded[np.arange(k), assign].sum() / table.n)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(pred, truth) -> float:
    table = contingency_table(pred, truth)
    if table.n < 2:
        raise DomainError("ARI needs at least 2 points")
    sum_cells = _comb2(table.counts).sum()
    sum_rows = _comb2(table.counts.sum(axis=1)).sum()
    sum_cols = _comb2(table.counts.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / _comb2(table.n)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def normalized_mutual_info(pred, truth) -> float:
    """Mutual information over the geometric mean of the two entropies.

    Natural logarithms; 0/0 (a constant labeling) is defined as 0.
    """
    table = contingency_table(pred, truth)
    n = table.n
    c = table.counts.astype(np.float64)
    h_pred = _entropy(c.sum(axis=1), n)
    h_true = _entropy(c.sum(axis=0), n)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    rows, cols = np.nonzero(c)
    nij = c[rows, cols]
    mi = np.sum(nij / n * np.log(n * nij / (c.sum(axis=1)[rows] * c.sum(axis=0)[cols])))
    return float(min(1.0, max(0.0, mi / np.sqrt(h_pred * h_true))))


def metric_report(pred, truth, seed=None) -> dict:
    pred, truth = _labels(pred), _labels(truth)
    return {
        "acc": accuracy(pred, truth),
        "ari": adjusted_rand_index(pred, truth),
        "nmi": normalized_mutual_info(pred, truth),
        "n": int(pred.size),
        "k_pred": int(np.unique(pred).size),
        "k_true": int(np.unique(truth).size),
        "seed": seed,
    }
