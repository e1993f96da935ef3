"""Clustering evaluation: Hungarian-matched accuracy and normalised mutual information."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment on a square matrix.

    Returns ``perm`` with row i assigned to column ``perm[i]``, and the total
    cost. Rectangular input is padded with zero rows/columns; entries of
    ``perm`` pointing at padding are then >= the original column count.
    Shortest augmenting paths with row/column potentials, O(k^3).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be a 2-d matrix, got shape {c.shape}")
    if np.isnan(c).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains infinite entries")
    rows, cols = c.shape
    n = max(rows, cols)
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    a = np.zeros((n, n))
    a[:rows, :cols] = c

    # 1-based arrays; index 0 is the virtual root column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(cand.argmin()) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    return perm, float(a[np.arange(n), perm].sum())


def contingency(pred, truth, k_pred: int | None = None, k_true: int | None = None) -> np.ndarray:
    pred, truth = _pair(pred, truth)
    kp = k_pred if k_pred is not None else (int(pred.max()) + 1 if pred.size else 0)
    kt = k_true if k_true is not None else (int(truth.max()) + 1 if truth.size else 0)
    table = np.zeros((kp, kt), dtype=np.int64)
    np.add.at(table, (pred, truth), 1)
    return table


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    if pred.size and (pred.min() < 0 or truth.min() < 0):
        raise ValueError("labels must be non-negative integers")
    return pred, truth


@dataclass
class ClusterEvaluation:
    acc: float
    nmi: float
    contingency: np.ndarray
    matching: dict[int, int]


def _accuracy(pred, truth):
    table = contingency(pred, truth)
    n = int(table.sum())
    if n == 0:
        raise ValueError("cannot score an empty partition")
    perm, _ = hungarian(table.max() - table)
    kp, kt = table.shape
    matching = {i: int(perm[i]) for i in range(kp) if perm[i] < kt}
    matched = sum(int(table[i, j]) for i, j in matching.items())
    return matched / n, table, matching


def clustering_accuracy(pred, truth) -> float:
    """Fraction of samples whose cluster is matched to their class under the best one-to-one map."""
    return _accuracy(pred, truth)[0]


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth, norm: str = "geometric") -> float:
    pred, truth = _pair(pred, truth)
    n = pred.size
    if n == 0:
        raise ValueError("nmi needs at least one sample")
    _, pred = np.unique(pred, return_inverse=True)
    _, truth = np.unique(truth, return_inverse=True)
    table = contingency(pred, truth)
    h_pred = _entropy(table.sum(1), n)
    h_true = _entropy(table.sum(0), n)
    if h_pred == 0 or h_true == 0:
        # single-cluster sides: identical partitions score 1, anything else 0
        return 1.0 if h_pred == h_true == 0 else 0.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(1), table.sum(0))[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    if norm == "geometric":
        denom = np.sqrt(h_pred * h_true)
    elif norm == "arithmetic":
        denom = 0.5 * (h_pred + h_true)
    elif norm == "max":
        denom = max(h_pred, h_true)
    else:
        raise ValueError(f"unknown nmi normalisation {norm!r}")
    return float(min(max(mi / denom, 0.0), 1.0))


def evaluate(pred, truth, nmi_norm: str = "geometric") -> ClusterEvaluation:
    acc, table, matching = _accuracy(pred, truth)
    return ClusterEvaluation(acc, nmi(pred, truth, nmi_norm), table, matching)
