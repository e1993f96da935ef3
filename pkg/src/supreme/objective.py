"""Loss terms of the transfer-clustering objective.

All functions take and return ``grad.Tensor`` values so a single backward
pass through the shared head covers every term. Pair matrices (constraints
and confidences) are plain arrays: they come from the frozen prior and carry
no gradient.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import grad as G


class Supervision(str, Enum):
    JOINT = "joint"  # transferred pairs + perturbation pairs on the diagonal
    TRANSFER = "transfer"  # transferred pairs only, no perturbation
    SELF = "self"  # perturbation pairs only


@dataclass
class LossWeights:
    balance: float = 1.0
    attr: float = 0.1
    xent: float = 1.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    l_clu: float
    l_balance: float
    l_attr: float
    l_xent: float
    total: float
    n: int

    FIELDS = ("l_clu", "l_balance", "l_attr", "l_xent", "total")

    def row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def _pair_shapes(n: int, *mats) -> None:
    for m in mats:
        if np.shape(m) != (n, n):
            raise ValueError(f"pair matrix has shape {np.shape(m)}, expected ({n}, {n})")


def positive_probability(p: G.Tensor, p_other: G.Tensor) -> G.Tensor:
    """r[i, j] = <p_i, p_other_j>."""
    if p.shape != p_other.shape:
        raise ValueError(f"assignment shapes differ: {p.shape} vs {p_other.shape}")
    return p @ G.transpose(p_other)


def clustering_loss(r_tilde, w, p: G.Tensor, p_perturbed: G.Tensor | None = None) -> G.Tensor:
    """-sum_ij w_ij r~_ij log r_ij, with r built from p and the perturbed copy on the j side."""
    n = p.shape[0]
    _pair_shapes(n, r_tilde, w)
    r = positive_probability(p, p if p_perturbed is None else p_perturbed)
    coef = np.asarray(w, dtype=np.float64) * np.asarray(r_tilde, dtype=np.float64)
    return -G.sum(G.mul(coef, G.log(r)))


def mean_clustering_loss(r_tilde, p: G.Tensor) -> G.Tensor:
    """Unweighted form: -(1/n^2) sum_ij r~_ij log r_ij over p against itself."""
    n = p.shape[0]
    _pair_shapes(n, r_tilde)
    r = positive_probability(p, p)
    return G.scale(G.sum(G.mul(np.asarray(r_tilde, dtype=np.float64), G.log(r))), -1.0 / (n * n))


def balance_loss(p: G.Tensor) -> G.Tensor:
    """log K + sum_k s_k log s_k with s the mean assignment over the batch."""
    k = p.shape[1]
    s = G.mean(p, axis=0)
    return G.sum(G.mul(s, G.log(s))) + math.log(k)


def binary_loss(xa: G.Tensor) -> G.Tensor:
    """Mean elementwise binary entropy of the factor activations."""
    ent = G.mul(xa, G.log(xa)) + G.mul(1.0 - xa, G.log(1.0 - xa))
    return G.scale(G.sum(ent), -1.0 / xa.data.size)


def source_xent(p: G.Tensor, labels) -> G.Tensor:
    y = np.asarray(labels)
    n, k = p.shape
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match batch size {n}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    return G.scale(G.sum(G.mul(onehot, G.log(p))), -1.0 / n)


class PairScale(str, Enum):
    # off-diagonal confidences sum to 1, diagonal weight 1
    LITERAL = "literal"
    # confidences rescaled to mean 1 over all pairs, then averaged over n^2 pairs
    MEAN = "mean"


def remedy(
    r_tilde: np.ndarray, w: np.ndarray, mode: Supervision, scale: PairScale = PairScale.MEAN
) -> tuple[np.ndarray, np.ndarray]:
    """Pair targets and weights for one batch under a supervision mode.

    Diagonal pairs (a sample against its perturbed copy) get r~ = w = 1
    unless the mode drops perturbation pairs.
    """
    mode, scale = Supervision(mode), PairScale(scale)
    r_tilde = np.array(r_tilde, dtype=np.float64)
    w = np.array(w, dtype=np.float64)
    n = len(w)
    diag = np.arange(n)
    if mode is Supervision.SELF:
        w[:] = 0.0
    if mode is Supervision.TRANSFER:
        w[diag, diag] = 0.0
    else:
        r_tilde[diag, diag] = 1.0
        w[diag, diag] = 1.0
    if scale is PairScale.MEAN:
        off = ~np.eye(n, dtype=bool)
        w[off] *= n * n - n
        w /= n * n
    return r_tilde, w


def total_loss(
    model,
    r_tilde: np.ndarray,
    w: np.ndarray,
    x_target: np.ndarray,
    x_perturbed: np.ndarray | None,
    x_source: np.ndarray,
    y_source: np.ndarray,
    weights: LossWeights,
) -> tuple[G.Tensor, LossReport]:
    """Weighted sum of the four terms for one target batch and one source batch.

    ``x_perturbed=None`` means no perturbation: the j side of each pair uses
    the original batch.
    """
    _, xa_t, p = model.forward_target(x_target)
    p_g = None if x_perturbed is None else model.forward_target(x_perturbed)[2]
    xa_s, p_s = model.forward_source(x_source, return_factors=True)

    l_clu = clustering_loss(r_tilde, w, p, p_g)
    l_bal = balance_loss(p)
    l_attr = binary_loss(G.vstack([xa_t, xa_s]))
    l_xent = source_xent(p_s, y_source)
    total = l_clu + weights.balance * l_bal + weights.attr * l_attr + weights.xent * l_xent
    report = LossReport(
        l_clu=l_clu.item(),
        l_balance=l_bal.item(),
        l_attr=l_attr.item(),
        l_xent=l_xent.item(),
        total=total.item(),
        n=p.shape[0],
    )
    return total, report
