"""Random input transformations used to build perturbation (self-supervision) pairs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float | np.ndarray  # scalar or per-dimension

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("noise sigma must be >= 0")

    def check(self, d: int) -> None:
        s = np.asarray(self.sigma)
        if s.ndim and s.shape != (d,):
            raise ValueError(f"per-dimension sigma has shape {s.shape}, data has d={d}")

    def apply(self, x, rng):
        return x + rng.standard_normal(x.shape) * np.asarray(self.sigma)


@dataclass(frozen=True)
class CoordinateDropout:
    rate: float

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def check(self, d: int) -> None:
        pass

    def apply(self, x, rng):
        return np.where(rng.random(x.shape) < self.rate, 0.0, x)


@dataclass(frozen=True)
class RandomScale:
    low: float = 0.8
    high: float = 1.2

    def __post_init__(self):
        if not 0 < self.low <= self.high:
            raise ValueError(f"scale range must satisfy 0 < low <= high, got ({self.low}, {self.high})")

    def check(self, d: int) -> None:
        pass

    def apply(self, x, rng):
        return x * rng.uniform(self.low, self.high, (x.shape[0], 1))


@dataclass(frozen=True)
class HorizontalFlip:
    """Mirror each row-major width x height "image"; with ``prob`` < 1 only some rows flip."""

    width: int
    height: int
    prob: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("flip width and height must be positive")
        if not 0 <= self.prob <= 1:
            raise ValueError("flip probability must be in [0, 1]")

    def check(self, d: int) -> None:
        if self.width * self.height != d:
            raise ValueError(f"flip needs width*height == d, got {self.width}*{self.height} != {d}")

    def apply(self, x, rng):
        flipped = x.reshape(len(x), self.height, self.width)[:, :, ::-1].reshape(x.shape)
        if self.prob >= 1:
            return flipped
        pick = rng.random(len(x)) < self.prob
        return np.where(pick[:, None], flipped, x)


@dataclass(frozen=True)
class Compose:
    parts: tuple = ()

    def check(self, d: int) -> None:
        for p in self.parts:
            p.check(d)

    def apply(self, x, rng):
        for p in self.parts:
            x = p.apply(x, rng)
        return x


@dataclass
class Perturber:
    """A transform paired with its own seeded random stream."""

    spec: object
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return perturb(self.spec, batch, self.rng)


def perturb(spec, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.array(batch, dtype=np.float64)  # never touch the caller's array
    if x.ndim != 2:
        raise ValueError(f"perturb expects an (n, d) batch, got shape {x.shape}")
    spec.check(x.shape[1])
    return spec.apply(x, rng)


def parse_spec(text: str, feature_std: np.ndarray | None = None):
    """Parse e.g. ``noise:0.1+scale:0.8:1.2``.

    Terms: ``noise:F`` (sigma = F times the per-dimension feature std, or F
    itself when no std is given), ``noise-abs:S``, ``dropout:R``,
    ``scale:LO:HI``, ``flip:W:H[:P]``, ``none``.
    """
    parts = []
    for term in filter(None, (t.strip() for t in text.split("+"))):
        name, *args = term.split(":")
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise ValueError(f"bad perturbation term {term!r}") from None
        if name == "none" and not vals:
            continue
        if name == "noise" and len(vals) == 1:
            sigma = vals[0] if feature_std is None else vals[0] * np.asarray(feature_std, dtype=np.float64)
            parts.append(GaussianNoise(sigma))
        elif name == "noise-abs" and len(vals) == 1:
            parts.append(GaussianNoise(vals[0]))
        elif name == "dropout" and len(vals) == 1:
            parts.append(CoordinateDropout(vals[0]))
        elif name == "scale" and len(vals) == 2:
            parts.append(RandomScale(*vals))
        elif name == "flip" and len(vals) in (2, 3):
            w, h = int(vals[0]), int(vals[1])
            parts.append(HorizontalFlip(w, h, *vals[2:]))
        else:
            raise ValueError(f"bad perturbation term {term!r}")
    return parts[0] if len(parts) == 1 else Compose(tuple(parts))
