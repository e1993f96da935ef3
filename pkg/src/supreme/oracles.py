"""Brute-force reference implementations for spot checks and tests.

Nothing here imports the production modules: every value is computed by
enumeration or plain finite differences so it can be used to check them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class OracleResult:
    value: float
    detail: object
    description: str


def brute_force_matching(table, maximize: bool = True) -> OracleResult:
    """Best one-to-one matching of rows to columns by trying every permutation.

    ``detail`` is the permutation (row i -> column perm[i]). Non-square
    tables are zero padded. Limited to 6x6.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("table must be 2-d")
    k = max(t.shape)
    if k > 6:
        raise ValueError(f"brute force matching is limited to k <= 6, got {k}")
    sq = np.zeros((k, k))
    sq[: t.shape[0], : t.shape[1]] = t
    best, best_perm = None, None
    rows = list(range(k))
    for perm in itertools.permutations(range(k)):
        s = float(sum(sq[i, perm[i]] for i in rows))
        if best is None or (s > best if maximize else s < best):
            best, best_perm = s, perm
    best = 0.0 if best is None else best
    return OracleResult(best, tuple(best_perm or ()), f"{'max' if maximize else 'min'} over {k}! permutations")


def finite_difference_grad(closure: Callable[[], float], params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of a scalar closure with respect to arrays it reads.

    The arrays are perturbed in place and restored.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    grads = []
    for a in params:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(closure())
            flat[i] = old - h
            down = float(closure())
            flat[i] = old
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def _inertia(x: np.ndarray, labels: tuple[int, ...], k: int) -> float:
    total = 0.0
    lab = np.asarray(labels)
    for c in range(k):
        pts = x[lab == c]
        if len(pts):
            total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def exhaustive_kmeans(points, k: int) -> OracleResult:
    """Optimal k-means inertia over all k^n labelings (n <= 8, k <= 3).

    Labelings that leave a cluster empty are allowed; they never beat a full
    one when n >= k.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n > 8 or k > 3 or k < 1:
        raise ValueError(f"exhaustive k-means needs n <= 8 and 1 <= k <= 3, got n={n}, k={k}")
    best, best_lab = np.inf, None
    for lab in itertools.product(range(k), repeat=n):
        # fix the first label to skip relabelled duplicates
        if n and lab[0] != 0:
            continue
        v = _inertia(x, lab, k)
        if v < best:
            best, best_lab = v, lab
    return OracleResult(float(best), best_lab, f"enumerated {k}^{n} labelings")


def entropy_oracle(labels) -> float:
    """Entropy of a labelling via a Python Counter."""
    from collections import Counter

    lab = list(np.asarray(labels).ravel())
    n = len(lab)
    return -sum((c / n) * np.log(c / n) for c in Counter(lab).values())


def nmi_oracle(pred, truth) -> float:
    """NMI with geometric normalisation, computed by explicit double loops."""
    from collections import Counter

    pred = list(np.asarray(pred).ravel())
    truth = list(np.asarray(truth).ravel())
    n = len(pred)
    joint = Counter(zip(pred, truth))
    cp, ct = Counter(pred), Counter(truth)
    mi = 0.0
    for (a, b), c in joint.items():
        mi += (c / n) * np.log(c * n / (cp[a] * ct[b]))
    hp, ht = entropy_oracle(pred), entropy_oracle(truth)
    if hp == 0 or ht == 0:
        return 1.0 if hp == ht == 0 else 0.0
    return float(mi / np.sqrt(hp * ht))


def accuracy_oracle(pred, truth) -> float:
    """Matched accuracy by enumerating all relabelings of the predicted clusters."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    kp, kt = int(pred.max()) + 1, int(truth.max()) + 1
    table = np.zeros((kp, kt))
    for a, b in zip(pred, truth):
        table[a, b] += 1
    return brute_force_matching(table).value / len(pred)
