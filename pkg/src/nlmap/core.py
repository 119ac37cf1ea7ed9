"""Shared value types, the isotropic ground-plane Gaussian, and fusion helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError

UNIT_TOL = 1e-6


class EmbeddingVector:
    """Read-only unit vector tagged with the channel that produced it."""

    __slots__ = ("values", "provider_id")

    def __init__(self, values, provider_id: str, *, normalize: bool = False):
        arr = np.array(values, dtype=np.float64).ravel()
        if arr.size == 0:
            raise InvalidArgumentError("embedding must have at least one component")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr))
        if normalize:
            if norm == 0.0:
                raise InvalidArgumentError("cannot normalize a zero vector")
            if abs(norm - 1.0) > 1e-12:
                arr = arr / norm
        elif abs(norm - 1.0) > UNIT_TOL:
            raise InvalidArgumentError(f"embedding norm {norm:.8f} is not 1 (pass normalize=True)")
        arr.setflags(write=False)
        self.values = arr
        self.provider_id = provider_id

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def dot(self, other: "EmbeddingVector") -> float:
        return float(np.dot(self.values, other.values))

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.provider_id == other.provider_id and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.provider_id, self.values.tobytes()))

    def __repr__(self):
        return f"EmbeddingVector(provider_id={self.provider_id!r}, dim={self.dimension})"


def _point3(p) -> tuple[float, float, float]:
    x, y, z = (float(v) for v in p)
    return (x, y, z)


@dataclass(frozen=True)
class ContextElement:
    """One region observation: embedding channels plus its 3D estimate."""

    channels: Mapping[str, EmbeddingVector]
    position: tuple[float, float, float]
    radius: float
    frame_id: str
    element_id: int

    def __post_init__(self):
        object.__setattr__(self, "position", _point3(self.position))
        if not self.radius > 0:
            raise InvalidArgumentError(f"radius must be positive, got {self.radius}")
        if not self.channels:
            raise SchemaError("context element needs at least one channel")
        for pid, vec in self.channels.items():
            if vec.provider_id != pid:
                raise SchemaError(f"channel key {pid!r} holds a vector from {vec.provider_id!r}")

    def gaussian(self, alpha: float) -> "Gaussian2D":
        return Gaussian2D((self.position[0], self.position[1]), alpha * self.radius)


@dataclass(frozen=True)
class Gaussian2D:
    mean: tuple[float, float]
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "mean", (float(self.mean[0]), float(self.mean[1])))


def kl_divergence(a: Gaussian2D, b: Gaussian2D) -> float:
    """KL(a || b) for isotropic 2D Gaussians."""
    if not (a.sigma > 0 and b.sigma > 0):
        raise InvalidArgumentError("sigmas must be positive")
    d = 2.0
    dx = a.mean[0] - b.mean[0]
    dy = a.mean[1] - b.mean[1]
    sa2 = a.sigma * a.sigma
    sb2 = b.sigma * b.sigma
    kl = d * math.log(b.sigma / a.sigma) + (d * sa2 + dx * dx + dy * dy) / (2.0 * sb2) - d / 2.0
    # rounding can leave a tiny negative residue for near-identical inputs
    return kl if kl > 0.0 else 0.0


def bonus_f(group_size: int, t: float) -> float:
    """Score multiplier rewarding support from several views: 1 + t - t/n."""
    if group_size < 1:
        raise InvalidArgumentError("group_size must be >= 1")
    return 1.0 + t - t / group_size


@dataclass(frozen=True)
class FusionParams:
    k: int = 4
    alpha: float = 0.5
    lam: float = 4.0
    beta: float = 0.55
    t: float = 0.2
    score_floor: float = 0.2

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise InvalidArgumentError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        if not self.alpha > 0:
            raise InvalidArgumentError("alpha must be positive")
        if not self.lam > 0:
            raise InvalidArgumentError("lambda must be positive")
        if not self.t >= 0:
            raise InvalidArgumentError("t must be non-negative")
        for name in ("alpha", "lam", "beta", "t", "score_floor"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FusionParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - {"k", "alpha", "lam", "beta", "t", "score_floor"}
        if unknown:
            raise InvalidArgumentError(f"unknown fusion keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "FusionParams":
        d = asdict(self)
        d.update(changes)
        return FusionParams(**d)


@dataclass(frozen=True)
class Cluster:
    """A fused object estimate."""

    position: tuple[float, float, float]
    score: float
    support: int
    members: tuple[int, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "score": self.score,
            "support": self.support,
            "members": list(self.members),
        }


def as_points(positions: Sequence) -> np.ndarray:
    arr = np.asarray(positions, dtype=np.float64)
    return arr.reshape(-1, 3)
