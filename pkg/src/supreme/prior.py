"""Transfer prior: K-means on the pretrained embedding, soft assignments, pair constraints and confidences."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PRI1"
MAX_ITER = 300


class PriorFormatError(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            i = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a centre already; pick an unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(unused))
        chosen.append(i)
        closest = np.minimum(closest, ((x - x[i]) ** 2).sum(1))
    return x[chosen].copy()


def lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER) -> KMeansResult:
    k = len(centroids)
    c = centroids.copy()
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, c)
        new = d.argmin(1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                c[j] = x[members].mean(0)
        for j in range(k):
            if not (labels == j).any():
                # re-seed an empty cluster at the point worst served by its centroid
                far = int(((x - c[labels]) ** 2).sum(1).argmax())
                c[j] = x[far]
                labels[far] = j
    inertia = float(((x - c[labels]) ** 2).sum())
    return KMeansResult(c, labels, inertia, it)


def kmeans(x: np.ndarray, k: int, seed: int = 0, n_init: int = 1, max_iter: int = MAX_ITER) -> KMeansResult:
    """k-means++ seeding and Lloyd iterations; best of ``n_init`` restarts by inertia."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"kmeans expects an (n, d) array, got shape {x.shape}")
    if k < 1 or len(x) < k:
        raise ValueError(f"kmeans needs 1 <= k <= n, got k={k}, n={len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(x, _plusplus(x, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def initial_assignments(x: np.ndarray, centroids: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Student's-t soft assignment of each row of ``x`` to each centroid."""
    if not alpha > 0:
        raise ValueError(
            f"alpha must be > 0 (got {alpha}); alpha = 0 divides by zero in the t kernel, use the default 1.0"
        )
    d2 = _sq_dists(np.asarray(x, dtype=np.float64), np.asarray(centroids, dtype=np.float64))
    logk = -(alpha + 1.0) / 2.0 * np.log1p(d2 / alpha)
    logk -= logk.max(1, keepdims=True)
    q = np.exp(logk)
    return q / q.sum(1, keepdims=True)


def pair_constraints(p: np.ndarray) -> np.ndarray:
    return p @ p.T


def joint_entropy(p: np.ndarray) -> np.ndarray:
    """H[i, j] = -sum_k q log q with q = p[i, k] * p[j, k] and 0 log 0 = 0."""
    q = p[:, None, :] * p[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(q > 0, q * np.log(q), 0.0)
    return -t.sum(-1)


@dataclass
class PairBatchWeights:
    r_tilde: np.ndarray
    H: np.ndarray
    w: np.ndarray
    H_max: float


def confidence_weights(p: np.ndarray, tau: float, include_diagonal: bool = False):
    """Joint entropies, their maximum and the normalised pair confidences.

    The softmax runs over off-diagonal pairs (or all pairs with
    ``include_diagonal``); afterwards the diagonal is set to 1.
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n, k = p.shape
    H = joint_entropy(p)
    H_max = float(np.log(k * k)) if k > 1 else 1.0
    score = (H_max - H) / (H_max * tau)
    mask = np.ones((n, n), dtype=bool)
    if not include_diagonal:
        np.fill_diagonal(mask, False)
    w = np.zeros((n, n))
    if mask.any():
        z = score[mask]
        e = np.exp(z - z.max())
        w[mask] = e / e.sum()
    np.fill_diagonal(w, 1.0)
    return H, H_max, w


def batch_weights(p: np.ndarray, tau: float, include_diagonal: bool = False) -> PairBatchWeights:
    H, H_max, w = confidence_weights(p, tau, include_diagonal)
    return PairBatchWeights(pair_constraints(p), H, w, H_max)


@dataclass
class TransferPrior:
    centroids: np.ndarray
    p_tilde: np.ndarray
    labels: np.ndarray
    alpha: float = 1.0
    tau: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0 or not self.tau > 0:
            raise ValueError("alpha and tau must be positive")

    @property
    def n(self) -> int:
        return self.p_tilde.shape[0]

    @property
    def k(self) -> int:
        return self.p_tilde.shape[1]

    def batch(self, idx, include_diagonal: bool = False) -> PairBatchWeights:
        return batch_weights(self.p_tilde[idx], self.tau, include_diagonal)


def build_prior(x: np.ndarray, k: int, alpha: float = 1.0, tau: float = 0.5, seed: int = 0, n_init: int = 10):
    km = kmeans(x, k, seed=seed, n_init=n_init)
    return TransferPrior(km.centroids, initial_assignments(x, km.centroids, alpha), km.labels, alpha, tau)


# PRI1 cache: magic, u32 n, u32 k, u32 d, f64 alpha, f64 tau,
# centroids k*d f64, p_tilde n*k f64, hard labels n u32 (all little-endian)
_HEAD = struct.Struct("<4sIIIdd")


def prior_bytes(prior: TransferPrior) -> bytes:
    k, d = prior.centroids.shape
    return b"".join(
        [
            _HEAD.pack(MAGIC, prior.n, k, d, prior.alpha, prior.tau),
            prior.centroids.astype("<f8").tobytes(),
            prior.p_tilde.astype("<f8").tobytes(),
            prior.labels.astype("<u4").tobytes(),
        ]
    )


def prior_from_bytes(buf: bytes) -> TransferPrior:
    if buf[:4] != MAGIC:
        raise PriorFormatError(f"bad magic at offset 0: {buf[:4]!r}")
    if len(buf) < _HEAD.size:
        raise PriorFormatError(f"truncated header at offset {len(buf)}")
    _, n, k, d, alpha, tau = _HEAD.unpack_from(buf)
    off = _HEAD.size
    need = off + 8 * k * d + 8 * n * k + 4 * n
    if len(buf) != need:
        raise PriorFormatError(f"expected {need} bytes, got {len(buf)}")
    c = np.frombuffer(buf, "<f8", k * d, off).reshape(k, d).astype(np.float64)
    off += 8 * k * d
    p = np.frombuffer(buf, "<f8", n * k, off).reshape(n, k).astype(np.float64)
    off += 8 * n * k
    labels = np.frombuffer(buf, "<u4", n, off).astype(np.int64)
    try:
        return TransferPrior(c, p, labels, alpha, tau)
    except ValueError as exc:
        raise PriorFormatError(f"bad header values at offset 16: {exc}") from None


def save_prior(prior: TransferPrior, path) -> None:
    Path(path).write_bytes(prior_bytes(prior))


def load_prior(path) -> TransferPrior:
    return prior_from_bytes(Path(path).read_bytes())
