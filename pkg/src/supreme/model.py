"""Trainable head: MLP encoder, sigmoid factor layer, and one classifier per domain."""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from .data import EmbeddingDataset
from .objective import binary_loss, source_xent

MAGIC = b"SUP1"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_in: int
    k_source: int
    k_target: int
    widths: list[int] = field(default_factory=lambda: [32])
    factor_dim: int | None = None  # defaults to 4 * k_target
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.factor_dim is None:
            self.factor_dim = 4 * self.k_target
        self.widths = [int(w) for w in self.widths]
        if any(w <= 0 for w in self.widths) or min(self.d_in, self.k_source, self.k_target) <= 0:
            raise ValueError("layer widths and class counts must be positive")
        if self.factor_dim < self.k_target:
            raise ValueError(f"factor_dim ({self.factor_dim}) must be >= k_target ({self.k_target})")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")

    @property
    def d_v(self) -> int:
        return self.widths[-1] if self.widths else self.d_in


class Affine:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, scale: float):
        s = scale / np.sqrt(fan_in)
        self.W = G.Tensor(rng.uniform(-s, s, (fan_in, fan_out)), requires_grad=True)
        self.b = G.Tensor(rng.uniform(-s, s, (1, fan_out)), requires_grad=True)

    def __call__(self, x: G.Tensor) -> G.Tensor:
        return x @ self.W + self.b

    def params(self) -> list[G.Tensor]:
        return [self.W, self.b]


class HeadModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dims = [config.d_in, *config.widths]
        self.encoder = [Affine(a, b, rng, config.init_scale) for a, b in zip(dims[:-1], dims[1:])]
        self.factor = Affine(config.d_v, config.factor_dim, rng, config.init_scale)
        self.source_head = Affine(config.factor_dim, config.k_source, rng, config.init_scale)
        self.target_head = Affine(config.factor_dim, config.k_target, rng, config.init_scale)

    # parameter groups, in checkpoint declaration order
    def encoder_params(self) -> list[G.Tensor]:
        return [p for layer in self.encoder for p in layer.params()]

    def params(self) -> list[G.Tensor]:
        return [
            *self.encoder_params(),
            *self.factor.params(),
            *self.source_head.params(),
            *self.target_head.params(),
        ]

    def clone(self) -> HeadModel:
        return copy.deepcopy(self)

    def _check(self, x) -> G.Tensor:
        x = x if isinstance(x, G.Tensor) else G.Tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.config.d_in:
            raise ValueError(f"expected batch of shape (n, {self.config.d_in}), got {x.shape}")
        return x

    def encode(self, x) -> G.Tensor:
        h = self._check(x)
        for layer in self.encoder:
            h = G.relu(layer(h))
        return h

    def factors(self, xv: G.Tensor) -> G.Tensor:
        return G.sigmoid(self.factor(xv))

    def forward_target(self, x) -> tuple[G.Tensor, G.Tensor, G.Tensor]:
        xv = self.encode(x)
        xa = self.factors(xv)
        return xv, xa, G.softmax(self.target_head(xa))

    def forward_source(self, x, return_factors: bool = False):
        xa = self.factors(self.encode(x))
        p = G.softmax(self.source_head(xa))
        return (xa, p) if return_factors else p

    def predict_target(self, x: np.ndarray) -> np.ndarray:
        return self.forward_target(x)[2].data.argmax(axis=1)

    def predict_source(self, x: np.ndarray) -> np.ndarray:
        return self.forward_source(x).data.argmax(axis=1)


def embed_target(model: HeadModel, target: EmbeddingDataset | np.ndarray) -> np.ndarray:
    """Encoder output for the target features, computed on a frozen copy."""
    x = target.features if isinstance(target, EmbeddingDataset) else np.asarray(target, dtype=np.float64)
    frozen = model.clone()
    for p in frozen.params():
        p.requires_grad = False
    return frozen.encode(x).data.copy()


@dataclass
class PretrainReport:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else float("nan")


def pretrain(
    model: HeadModel,
    source: EmbeddingDataset,
    epochs: int = 100,
    batch_size: int = 64,
    lr: float = 1e-3,
    lambda_attr: float = 0.1,
    seed: int = 0,
) -> PretrainReport:
    """Supervised source training with cross-entropy plus the binary factor penalty."""
    if not source.labelled:
        raise ValueError("pretraining needs a labelled source dataset")
    if source.k != model.config.k_source or source.d != model.config.d_in:
        raise ValueError(
            f"source (d={source.d}, k={source.k}) does not match model "
            f"(d_in={model.config.d_in}, k_source={model.config.k_source})"
        )
    rng = np.random.default_rng(seed)
    params = [*model.encoder_params(), *model.factor.params(), *model.source_head.params()]
    state = G.AdamState()
    report = PretrainReport()
    for _ in range(epochs):
        order = rng.permutation(source.n)
        total, batches = 0.0, 0
        for lo in range(0, source.n, batch_size):
            idx = order[lo : lo + batch_size]
            xa, p = model.forward_source(source.features[idx], return_factors=True)
            loss = source_xent(p, source.labels[idx])
            if lambda_attr:
                loss = loss + lambda_attr * binary_loss(xa)
            G.zero_grad(params)
            G.backward(loss)
            G.adam_step(params, state, lr)
            total += loss.item()
            batches += 1
        G.zero_grad(params)
        report.losses.append(total / batches)
        report.accuracies.append(float(np.mean(model.predict_source(source.features) == source.labels)))
    return report


# checkpoint I/O


def checkpoint_bytes(model: HeadModel) -> bytes:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", len(cfg)), cfg]
    params = model.params()
    out.append(struct.pack("<I", len(params)))
    for p in params:
        out.append(struct.pack("<I", p.data.ndim))
        out.append(struct.pack(f"<{p.data.ndim}I", *p.shape))
        out.append(p.data.astype("<f8").tobytes())
    return b"".join(out)


def model_from_bytes(buf: bytes) -> HeadModel:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic at offset 0: {buf[:4]!r}")
    try:
        off = 4
        (clen,) = struct.unpack_from("<I", buf, off)
        off += 4
        cfg = ModelConfig(**json.loads(buf[off : off + clen].decode()))
        off += clen
        model = HeadModel(cfg)
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        params = model.params()
        if count != len(params):
            raise CheckpointError(f"checkpoint holds {count} tensors, config implies {len(params)}")
        for p in params:
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            if tuple(shape) != p.shape:
                raise CheckpointError(f"tensor shape {shape} != expected {p.shape} at offset {off}")
            size = int(np.prod(shape))
            if off + 8 * size > len(buf):
                raise CheckpointError(f"truncated tensor data at offset {off}")
            p.data = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"unreadable config block at offset 8: {exc}") from None
    if off != len(buf):
        raise CheckpointError(f"trailing bytes after offset {off}")
    return model


def save_checkpoint(model: HeadModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> HeadModel:
    return model_from_bytes(Path(path).read_bytes())
