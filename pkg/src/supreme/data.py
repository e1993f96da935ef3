"""Embedding datasets: EMB1 binary files, CSV export and synthetic transfer pairs."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIIBB")


class FormatError(ValueError):
    pass


class Domain(IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass(eq=False)
class EmbeddingDataset:
    """n x d feature matrix, optional labels in [0, k), and its domain.

    Features are held as float64 but snapped to the float32 grid, which is
    what the file format stores, so a write/read cycle is exact.
    """

    features: np.ndarray
    k: int
    domain: Domain
    labels: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain NaN or Inf")
        self.features = f.astype(np.float32).astype(np.float64)
        self.domain = Domain(self.domain)
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (self.n,):
                raise ValueError(f"labels must have shape ({self.n},), got {y.shape}")
            if y.size and (y.min() < 0 or y.max() >= self.k):
                raise ValueError(f"labels must lie in [0, {self.k})")
            self.labels = y.astype(np.int64)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def labelled(self) -> bool:
        return self.labels is not None

    def unlabelled(self) -> EmbeddingDataset:
        """Copy without labels; the only view training code should see of target data."""
        return EmbeddingDataset(self.features, self.k, self.domain)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        if (self.k, self.domain, self.labelled) != (other.k, other.domain, other.labelled):
            return False
        if self.features.shape != other.features.shape or not np.array_equal(self.features, other.features):
            return False
        return not self.labelled or np.array_equal(self.labels, other.labels)


def to_bytes(ds: EmbeddingDataset) -> bytes:
    head = _HEADER.pack(MAGIC, ds.n, ds.d, ds.k, int(ds.domain), int(ds.labelled))
    body = ds.features.astype("<f4").tobytes()
    if ds.labelled:
        body += ds.labels.astype("<u4").tobytes()
    return head + body


def from_bytes(buf: bytes) -> EmbeddingDataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic at offset 0: {buf[:4]!r}")
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes at offset 0")
    _, n, d, k, dom, has_labels = _HEADER.unpack_from(buf)
    if dom not in (0, 1):
        raise FormatError(f"bad domain flag {dom} at offset 16")
    if has_labels not in (0, 1):
        raise FormatError(f"bad label flag {has_labels} at offset 17")
    off = _HEADER.size
    need = off + 4 * n * d + (4 * n if has_labels else 0)
    if len(buf) < need:
        raise FormatError(f"truncated file: expected {need} bytes, got {len(buf)} (data from offset {off})")
    if len(buf) > need:
        raise FormatError(f"trailing bytes after offset {need}")
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = None
    if has_labels:
        loff = off + 4 * n * d
        labels = np.frombuffer(buf, dtype="<u4", count=n, offset=loff).astype(np.int64)
        bad = np.flatnonzero(labels >= k)
        if bad.size:
            i = int(bad[0])
            raise FormatError(f"label {labels[i]} >= k={k} at offset {loff + 4 * i}")
    if not np.all(np.isfinite(feats)):
        raise FormatError(f"non-finite feature value in block at offset {off}")
    return EmbeddingDataset(feats.astype(np.float64), k, Domain(dom), labels)


def write_dataset(ds: EmbeddingDataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def read_dataset(path) -> EmbeddingDataset:
    return from_bytes(Path(path).read_bytes())


def write_csv(ds: EmbeddingDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"f{j}" for j in range(ds.d)]
        if ds.labelled:
            header.append("label")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            if ds.labelled:
                row.append(int(ds.labels[i]))
            w.writerow(row)


@dataclass
class SynthesisConfig:
    d: int = 16
    k_source: int = 4
    k_target: int = 4
    per_class: int = 200
    separation: float = 10.0
    std: float = 1.0
    shift: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("d", "k_source", "k_target", "per_class"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.std <= 0 or self.separation <= 0:
            raise ValueError("std and separation must be positive")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")
        if max(self.k_source, self.k_target) > self.d:
            raise ValueError(f"need max(k_source, k_target) <= d to place class means, got d={self.d}")
        if self.shift > 0 and max(self.k_source, self.k_target) + self.k_target > self.d:
            raise ValueError("a shifted target needs d >= max(k_source, k_target) + k_target")
        if self.shift > self.separation * np.sqrt(2.0):
            raise ValueError("shift cannot exceed separation * sqrt(2) (a half-turn rotation)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def class_means(cfg: SynthesisConfig) -> tuple[np.ndarray, np.ndarray]:
    """Source and target class means.

    Means sit on the vertices of a regular simplex (scaled orthonormal
    vectors), so every pair is exactly ``separation`` apart. Each target mean
    is its source counterpart rotated toward a fresh orthogonal direction
    until it has moved ``shift`` away. The target simplex keeps its geometry
    but leaves the subspace the source classes are discriminated in.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 1])
    k = max(cfg.k_source, cfg.k_target)
    q, _ = np.linalg.qr(rng.standard_normal((cfg.d, cfg.d)))
    radius = cfg.separation / np.sqrt(2.0)
    base = q[:, :k].T * radius
    source = base[: cfg.k_source]
    target = base[: cfg.k_target].copy()
    if cfg.shift > 0:
        away = q[:, k : k + cfg.k_target].T * radius
        theta = 2.0 * np.arcsin(cfg.shift / (2.0 * radius))
        target = np.cos(theta) * target + np.sin(theta) * away
    return source, target


def synthesize_transfer_pair(cfg: SynthesisConfig) -> tuple[EmbeddingDataset, EmbeddingDataset, np.ndarray]:
    """(labelled source, unlabelled target, hidden target labels); a pure function of ``cfg``."""
    mu_s, mu_t = class_means(cfg)
    rng = np.random.default_rng([cfg.seed, 2])

    def draw(means):
        y = np.repeat(np.arange(len(means)), cfg.per_class)
        x = means[y] + cfg.std * rng.standard_normal((len(y), cfg.d))
        order = rng.permutation(len(y))
        return x[order], y[order]

    xs, ys = draw(mu_s)
    xt, yt = draw(mu_t)
    source = EmbeddingDataset(xs, cfg.k_source, Domain.SOURCE, ys)
    target = EmbeddingDataset(xt, cfg.k_target, Domain.TARGET)
    return source, target, yt
