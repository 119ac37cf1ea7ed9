"""Embedding providers, the deterministic mock VLM, and the max-ensemble score."""

from __future__ import annotations

import base64
import hashlib
import logging
import math
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core import ContextElement, EmbeddingVector
from .errors import CapabilityError, InvalidArgumentError, SchemaError

log = logging.getLogger(__name__)

ROLE_TEXT_REGION = "text+region"
ROLE_REGION = "region"


@dataclass(frozen=True)
class RegionObservation:
    """What a provider sees for one ROI.

    The mock reads ``label`` (ground truth in simulation) and ``nonce``
    (selects the per-observation jitter); remote providers read ``image``.
    """

    label: str | None = None
    nonce: int = 0
    image: bytes | None = None


@runtime_checkable
class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int
    supports_text: bool
    supports_region: bool

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...

    def embed_regions(self, observations: Sequence[RegionObservation]) -> list[EmbeddingVector]: ...


@dataclass(frozen=True)
class QueryFeatures:
    text_vector: EmbeddingVector
    channel_roles: tuple[str, ...]
    name: str = ""


def encode_text(provider: EmbeddingProvider, name: str, channel_roles: Sequence[str] | None = None) -> QueryFeatures:
    if not provider.supports_text:
        raise CapabilityError(f"provider {provider.provider_id!r} cannot encode text")
    if not isinstance(name, str) or not name.strip():
        raise InvalidArgumentError("object name must be non-empty")
    (vec,) = provider.embed_texts([name.strip()])
    roles = tuple(channel_roles) if channel_roles else tuple(getattr(provider, "scorable_channels", (provider.provider_id,)))
    return QueryFeatures(vec, roles, name.strip())


def encode_region(provider: EmbeddingProvider, observation: RegionObservation) -> EmbeddingVector:
    if not provider.supports_region:
        raise CapabilityError(f"provider {provider.provider_id!r} cannot encode regions")
    (vec,) = provider.embed_regions([observation])
    return vec


def ensemble_score(element: ContextElement, query: QueryFeatures) -> float:
    """Max inner product between the query text vector and each scorable channel."""
    q = query.text_vector.values
    best = -math.inf
    for ch in query.channel_roles:
        try:
            vec = element.channels[ch]
        except KeyError:
            raise SchemaError(f"element {element.element_id} has no channel {ch!r}") from None
        if vec.dimension != q.shape[0]:
            raise SchemaError(f"channel {ch!r} has dimension {vec.dimension}, query has {q.shape[0]}")
        best = max(best, float(np.dot(vec.values, q)))
    if best == -math.inf:
        raise SchemaError("query names no channels")
    return best


def normalize_rows(mat: np.ndarray, *, source: str = "") -> np.ndarray:
    """Normalize each row to unit length, logging when a row was not already unit."""
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise InvalidArgumentError(f"{source or 'provider'} returned a zero or non-finite vector")
    off = np.abs(norms - 1.0) > 1e-6
    if np.any(off):
        log.warning("%s returned %d non-unit vector(s); normalizing", source or "provider", int(off.sum()))
        return mat / norms[:, None]
    return mat


# ---------------------------------------------------------------- mock VLM


def _rng(*parts) -> np.random.Generator:
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(h, "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _exact_angles(anchors: np.ndarray, targets: np.ndarray, base: np.ndarray, what: str) -> np.ndarray:
    """Unit vector r with anchors @ r == targets; the free part follows ``base``."""
    gram = anchors @ anchors.T
    coef = np.linalg.solve(gram, targets)
    fixed = anchors.T @ coef
    fixed_sq = float(fixed @ fixed)
    if fixed_sq > 1.0 + 1e-12:
        raise InvalidArgumentError(f"mock cosines for {what} are jointly unsatisfiable")
    # remove the anchor span from base (two passes for numerical safety)
    q, _ = np.linalg.qr(anchors.T)
    free = base - q @ (q.T @ base)
    free = free - q @ (q.T @ free)
    free = _unit(free)
    return fixed + math.sqrt(max(0.0, 1.0 - fixed_sq)) * free


@dataclass(frozen=True)
class MockProviderSpec:
    """Knobs for the deterministic VLM stand-in.

    ``blind_spot_rate`` is the chance that a given channel sees a given label
    poorly (alignment ``blind_spot_alignment``); channels draw independently,
    which is what makes the max-ensemble beat any single channel.
    """

    seed: int = 0
    dimension: int = 128
    true_alignment: float = 0.8
    noise_sigma: float = 0.2
    confusion_pairs: tuple[tuple[str, str, float], ...] = ()
    blind_spot_rate: float = 0.25
    blind_spot_alignment: float = 0.15

    def __post_init__(self):
        if self.dimension < 8:
            raise InvalidArgumentError("mock dimension must be >= 8")
        if not 0 < self.true_alignment <= 1:
            raise InvalidArgumentError("true_alignment must be in (0, 1]")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        if not 0 <= self.blind_spot_rate <= 1:
            raise InvalidArgumentError("blind_spot_rate must be in [0, 1]")
        pairs = []
        for a, b, c in self.confusion_pairs:
            if a == b or not -1 < float(c) < 1:
                raise InvalidArgumentError(f"bad confusion pair {(a, b, c)!r}")
            pairs.append((str(a), str(b), float(c)))
        object.__setattr__(self, "confusion_pairs", tuple(pairs))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dimension": self.dimension,
            "true_alignment": self.true_alignment,
            "noise_sigma": self.noise_sigma,
            "confusion_pairs": [list(p) for p in self.confusion_pairs],
            "blind_spot_rate": self.blind_spot_rate,
            "blind_spot_alignment": self.blind_spot_alignment,
        }

    @classmethod
    def from_dict(cls, d) -> "MockProviderSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown mock keys: {sorted(unknown)}")
        if "confusion_pairs" in d:
            d["confusion_pairs"] = tuple(tuple(p) for p in d["confusion_pairs"])
        return cls(**d)


class MockVLM:
    """Shared text space plus any number of region channels.

    Text vectors depend only on (seed, label); region vectors additionally
    on the channel and the observation nonce. Everything is recomputed from
    hashes, so the object holds no mutable state beyond a memo cache.
    """

    def __init__(self, spec: MockProviderSpec, channels: Sequence[tuple[str, str]] = (("clip", ROLE_TEXT_REGION), ("vild", ROLE_REGION))):
        text_channels = [cid for cid, role in channels if role == ROLE_TEXT_REGION]
        if len(text_channels) != 1:
            raise InvalidArgumentError("mock needs exactly one text+region channel")
        self.spec = spec
        self.channels = tuple(channels)
        self.text_channel = text_channels[0]
        self._anchors: dict[str, list[tuple[str, float]]] = {}
        self._partners: dict[str, list[tuple[str, float]]] = {}
        for a, b, c in spec.confusion_pairs:
            self._anchors.setdefault(b, []).append((a, c))
            self._partners.setdefault(a, []).append((b, c))
            self._partners.setdefault(b, []).append((a, c))
        self._text_cache: dict[str, np.ndarray] = {}
        self._region_cache: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()

    def provider(self, channel_id: str) -> "MockProvider":
        for cid, role in self.channels:
            if cid == channel_id:
                return MockProvider(self, cid, role)
        raise InvalidArgumentError(f"unknown mock channel {channel_id!r}")

    def text_provider(self) -> "MockProvider":
        return self.provider(self.text_channel)

    def region_providers(self) -> list["MockProvider"]:
        return [MockProvider(self, cid, role) for cid, role in self.channels]

    @property
    def channel_ids(self) -> tuple[str, ...]:
        return tuple(cid for cid, _ in self.channels)

    def _text(self, label: str, _stack: tuple[str, ...] = ()) -> np.ndarray:
        cached = self._text_cache.get(label)
        if cached is not None:
            return cached
        if label in _stack:
            raise InvalidArgumentError(f"confusion pairs form a cycle through {label!r}")
        d = self.spec.dimension
        base = _rng(self.spec.seed, "text", label).standard_normal(d)
        anchors = self._anchors.get(label)
        if anchors:
            mats = np.stack([self._text(a, _stack + (label,)) for a, _ in anchors])
            vec = _exact_angles(mats, np.array([c for _, c in anchors]), base, f"text {label!r}")
        else:
            vec = _unit(base)
        vec.setflags(write=False)
        with self._lock:
            self._text_cache[label] = vec
        return vec

    def alignment(self, channel_id: str, label: str) -> float:
        spec = self.spec
        if spec.blind_spot_rate > 0 and label not in self._partners:
            if _rng(spec.seed, "blind", channel_id, label).random() < spec.blind_spot_rate:
                return spec.blind_spot_alignment
        return spec.true_alignment

    def _region_clean(self, channel_id: str, label: str) -> np.ndarray:
        key = (channel_id, label)
        cached = self._region_cache.get(key)
        if cached is not None:
            return cached
        d = self.spec.dimension
        base = _rng(self.spec.seed, "region", channel_id, label).standard_normal(d)
        names = [label] + [p for p, _ in self._partners.get(label, [])]
        targets = [self.alignment(channel_id, label)] + [c for _, c in self._partners.get(label, [])]
        mats = np.stack([self._text(n) for n in names])
        vec = _exact_angles(mats, np.array(targets), base, f"region {label!r}")
        vec.setflags(write=False)
        with self._lock:
            self._region_cache[key] = vec
        return vec

    def text_vector(self, label: str) -> np.ndarray:
        return self._text(label)

    def region_vector(self, channel_id: str, label: str, nonce: int = 0) -> np.ndarray:
        clean = self._region_clean(channel_id, label)
        sigma = self.spec.noise_sigma
        if sigma == 0:
            return clean
        rng = _rng(self.spec.seed, "jitter", channel_id, label, nonce)
        theta = rng.normal(0.0, sigma)
        v = rng.standard_normal(clean.shape[0])
        v -= (v @ clean) * clean
        v = _unit(v)
        return _unit(math.cos(theta) * clean + math.sin(theta) * v)


class MockProvider:
    """One channel of a :class:`MockVLM`, exposed through the provider interface."""

    def __init__(self, vlm: MockVLM, channel_id: str, role: str):
        self.vlm = vlm
        self.provider_id = channel_id
        self.role = role
        self.dimension = vlm.spec.dimension
        self.supports_text = role == ROLE_TEXT_REGION
        self.supports_region = True
        self.scorable_channels = vlm.channel_ids

    def embed_texts(self, texts):
        if not self.supports_text:
            raise CapabilityError(f"channel {self.provider_id!r} is region-only")
        return [EmbeddingVector(self.vlm.text_vector(t), self.provider_id) for t in texts]

    def embed_regions(self, observations):
        out = []
        for obs in observations:
            if obs.label is None:
                raise CapabilityError("mock provider needs a labelled observation")
            out.append(EmbeddingVector(self.vlm.region_vector(self.provider_id, obs.label, obs.nonce), self.provider_id))
        return out


# ---------------------------------------------------------------- remote


class RemoteEmbeddingProvider:
    """Client for the JSON-over-HTTP encoder contract.

    ``POST /encode_text {"provider_id", "texts"}`` and
    ``POST /encode_region {"provider_id", "images": [base64]}`` both answer
    ``{"vectors": [[...]], "dimension": N}``.
    """

    def __init__(
        self,
        base_url: str,
        provider_id: str,
        dimension: int,
        *,
        supports_text: bool = True,
        supports_region: bool = True,
        timeout: float = 10.0,
        max_in_flight: int = 4,
        retries: int = 2,
        scorable_channels: Sequence[str] | None = None,
    ):
        from ._http import JsonClient

        self.provider_id = provider_id
        self.dimension = dimension
        self.supports_text = supports_text
        self.supports_region = supports_region
        self.scorable_channels = tuple(scorable_channels or (provider_id,))
        self._client = JsonClient(base_url, timeout=timeout, max_in_flight=max_in_flight, retries=retries)

    def _vectors(self, reply, expected: int, source: str) -> list[EmbeddingVector]:
        try:
            vectors = np.asarray(reply["vectors"], dtype=np.float64)
            dim = int(reply.get("dimension", vectors.shape[-1]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{source}: malformed reply ({exc})") from None
        if vectors.ndim != 2 or vectors.shape[0] != expected:
            raise SchemaError(f"{source}: expected {expected} vectors, got shape {vectors.shape}")
        if dim != self.dimension or vectors.shape[1] != self.dimension:
            raise SchemaError(f"{source}: dimension {vectors.shape[1]} != declared {self.dimension}")
        vectors = normalize_rows(vectors, source=source)
        return [EmbeddingVector(v, self.provider_id, normalize=True) for v in vectors]

    def embed_texts(self, texts):
        if not self.supports_text:
            raise CapabilityError(f"provider {self.provider_id!r} cannot encode text")
        reply = self._client.post("/encode_text", {"provider_id": self.provider_id, "texts": list(texts)})
        return self._vectors(reply, len(texts), f"{self.provider_id}/encode_text")

    def embed_regions(self, observations):
        if not self.supports_region:
            raise CapabilityError(f"provider {self.provider_id!r} cannot encode regions")
        images = []
        for obs in observations:
            if obs.image is None:
                raise CapabilityError("remote provider needs image bytes")
            images.append(base64.b64encode(obs.image).decode("ascii"))
        reply = self._client.post("/encode_region", {"provider_id": self.provider_id, "images": images})
        return self._vectors(reply, len(images), f"{self.provider_id}/encode_region")
