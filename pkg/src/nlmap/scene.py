"""Scene representation: building from frames, top-k retrieval, multi-view fusion, queries."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Cluster, ContextElement, EmbeddingVector, FusionParams, Gaussian2D, bonus_f, kl_divergence
from .embedding import EmbeddingProvider, QueryFeatures, encode_text
from .errors import InvalidArgumentError, SchemaError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_RADIUS = 0.01


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.width > 0 and self.height > 0):
            raise InvalidArgumentError("focal lengths and image size must be positive")


@dataclass(frozen=True)
class Pose:
    """Rigid transform world <- camera (x right, y down, z forward)."""

    rotation: tuple[tuple[float, float, float], ...]
    translation: tuple[float, float, float]

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidArgumentError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidArgumentError("pose rotation is not orthonormal")
        object.__setattr__(self, "rotation", tuple(tuple(float(v) for v in row) for row in r))
        object.__setattr__(self, "translation", tuple(float(v) for v in t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), (0.0, 0.0, 0.0))

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation)

    def apply(self, p_cam) -> np.ndarray:
        return self.R @ np.asarray(p_cam, dtype=np.float64) + self.t

    def inverse_apply(self, p_world) -> np.ndarray:
        return self.R.T @ (np.asarray(p_world, dtype=np.float64) - self.t)


@dataclass(frozen=True)
class RegionProposal:
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels
    depth_patch: tuple[float, ...]
    channels: Mapping[str, EmbeddingVector]
    objectness: float = 1.0

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.bbox)
        if not (x1 > x0 and y1 > y0):
            raise InvalidArgumentError(f"degenerate bbox {self.bbox}")
        object.__setattr__(self, "bbox", (x0, y0, x1, y1))
        object.__setattr__(self, "depth_patch", tuple(float(d) for d in self.depth_patch))
        if not 0.0 <= self.objectness <= 1.0:
            raise InvalidArgumentError("objectness must be in [0, 1]")


@dataclass(frozen=True)
class Frame:
    frame_id: str
    camera_pose: Pose
    intrinsics: Intrinsics
    rois: tuple[RegionProposal, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rois", tuple(self.rois))
        w, h = self.intrinsics.width, self.intrinsics.height
        for i, roi in enumerate(self.rois):
            x0, y0, x1, y1 = roi.bbox
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise InvalidArgumentError(f"frame {self.frame_id}: roi {i} bbox {roi.bbox} outside {w}x{h} image")


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered (provider_id, dimension) pairs every element must carry."""

    channels: tuple[tuple[str, int], ...]

    def __post_init__(self):
        chans = tuple((str(p), int(d)) for p, d in self.channels)
        ids = [p for p, _ in chans]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate provider ids in schema")
        if any(d < 1 for _, d in chans):
            raise SchemaError("channel dimensions must be positive")
        object.__setattr__(self, "channels", chans)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.channels)

    def dim(self, provider_id: str) -> int:
        return dict(self.channels)[provider_id]

    def check(self, channels: Mapping[str, EmbeddingVector], where: str) -> None:
        if set(channels) != set(self.ids):
            raise SchemaError(f"{where}: channels {sorted(channels)} do not match schema {list(self.ids)}")
        for pid, dim in self.channels:
            if channels[pid].dimension != dim:
                raise SchemaError(f"{where}: channel {pid!r} has dimension {channels[pid].dimension}, schema says {dim}")


class SceneRepresentation:
    """Immutable collection of context elements, stored column-wise.

    Embeddings are held as float32 (the on-disk width) so a saved and
    reloaded map scores bit-identically.
    """

    def __init__(
        self,
        scene_id: str,
        schema: ChannelSchema,
        embeddings: Mapping[str, np.ndarray],
        positions: np.ndarray,
        radii: np.ndarray,
        frame_ids: Sequence[str],
        element_ids: Sequence[int] | None = None,
        build_info: Mapping | None = None,
        version: int = FORMAT_VERSION,
    ):
        n = len(frame_ids)
        self.scene_id = scene_id
        self.schema = schema
        self.version = version
        self.build_info = dict(build_info or {})
        self.positions = np.asarray(positions, dtype=np.float64).reshape(n, 3)
        self.radii = np.asarray(radii, dtype=np.float64).reshape(n)
        self.frame_ids = tuple(str(f) for f in frame_ids)
        ids = np.arange(n, dtype=np.int64) if element_ids is None else np.asarray(element_ids, dtype=np.int64).reshape(n)
        if len(np.unique(ids)) != n:
            raise SchemaError("element ids are not unique")
        if n and not np.all(self.radii > 0):
            raise SchemaError("all radii must be positive")
        self.element_ids = ids
        self.embeddings: dict[str, np.ndarray] = {}
        self._scoring: dict[str, np.ndarray] = {}
        for pid, dim in schema.channels:
            mat = np.ascontiguousarray(np.asarray(embeddings[pid], dtype=np.float32).reshape(n, dim))
            mat.setflags(write=False)
            self.embeddings[pid] = mat
            scoring = mat.astype(np.float64)
            scoring.setflags(write=False)
            self._scoring[pid] = scoring
        for arr in (self.positions, self.radii, self.element_ids):
            arr.setflags(write=False)
        self._index = {int(e): i for i, e in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.frame_ids)

    def element(self, row: int) -> ContextElement:
        return ContextElement(
            channels={pid: EmbeddingVector(self._scoring[pid][row], pid) for pid in self.schema.ids},
            position=tuple(self.positions[row]),
            radius=float(self.radii[row]),
            frame_id=self.frame_ids[row],
            element_id=int(self.element_ids[row]),
        )

    @property
    def elements(self) -> list[ContextElement]:
        return [self.element(i) for i in range(len(self))]

    def row_of(self, element_id: int) -> int:
        return self._index[int(element_id)]

    def channel_scores(self, query: QueryFeatures) -> dict[str, np.ndarray]:
        q = query.text_vector.values
        out = {}
        for ch in query.channel_roles:
            if ch not in self._scoring:
                raise SchemaError(f"map has no channel {ch!r}")
            if self.schema.dim(ch) != q.shape[0]:
                raise SchemaError(f"channel {ch!r} dimension {self.schema.dim(ch)} != query dimension {q.shape[0]}")
            out[ch] = self._scoring[ch] @ q
        return out

    def scores(self, query: QueryFeatures) -> np.ndarray:
        """Max-ensemble score of every element against ``query``."""
        per = self.channel_scores(query)
        if not per:
            raise SchemaError("query names no channels")
        it = iter(per.values())
        best = next(it).copy()
        for s in it:
            np.maximum(best, s, out=best)
        return best

    def same_content(self, other: "SceneRepresentation") -> bool:
        return (
            self.scene_id == other.scene_id
            and self.schema == other.schema
            and self.frame_ids == other.frame_ids
            and np.array_equal(self.element_ids, other.element_ids)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.radii, other.radii)
            and all(np.array_equal(self.embeddings[p], other.embeddings[p]) for p in self.schema.ids)
        )


# ---------------------------------------------------------------- building


def extract_3d(roi: RegionProposal, frame: Frame) -> tuple[np.ndarray, float]:
    """Back-project the ROI centre at the median valid depth; width from similar triangles."""
    depths = np.asarray(roi.depth_patch, dtype=np.float64)
    depths = depths[np.isfinite(depths) & (depths > 0)]
    if depths.size == 0:
        raise InvalidArgumentError("roi has no valid depth samples")
    z = float(np.median(depths))
    k = frame.intrinsics
    x0, y0, x1, y1 = roi.bbox
    u = 0.5 * (x0 + x1)
    v = 0.5 * (y0 + y1)
    p_cam = np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
    radius = max((x1 - x0) * z / k.fx, MIN_RADIUS)
    return frame.camera_pose.apply(p_cam), radius


@dataclass
class BuildStats:
    elements: int = 0
    skipped: int = 0
    frames: int = 0


def build_map(
    frames: Iterable[Frame],
    schema: ChannelSchema,
    *,
    scene_id: str = "scene",
    build_info: Mapping | None = None,
    stats: BuildStats | None = None,
) -> SceneRepresentation:
    """One element per ROI with usable depth, in frame order then ROI order."""
    stats = stats if stats is not None else BuildStats()
    vecs: dict[str, list[np.ndarray]] = {pid: [] for pid in schema.ids}
    positions, radii, frame_ids = [], [], []
    waypoints = []
    for frame in frames:
        stats.frames += 1
        waypoints.append(list(frame.camera_pose.translation))
        for i, roi in enumerate(frame.rois):
            schema.check(roi.channels, f"frame {frame.frame_id!r} roi {i}")
            try:
                pos, rad = extract_3d(roi, frame)
            except InvalidArgumentError:
                stats.skipped += 1
                log.warning("frame %s roi %d: no valid depth, skipped", frame.frame_id, i)
                continue
            positions.append(pos)
            radii.append(rad)
            frame_ids.append(frame.frame_id)
            for pid in schema.ids:
                vecs[pid].append(roi.channels[pid].values)
    n = len(frame_ids)
    stats.elements = n
    embeddings = {
        pid: (np.stack(vecs[pid]) if n else np.zeros((0, dim))).astype(np.float32)
        for pid, dim in schema.channels
    }
    info = {"frame_count": stats.frames, "skipped": stats.skipped, "waypoints": waypoints}
    info.update(build_info or {})
    return SceneRepresentation(
        scene_id,
        schema,
        embeddings,
        np.asarray(positions, dtype=np.float64).reshape(n, 3),
        np.asarray(radii, dtype=np.float64),
        frame_ids,
        build_info=info,
    )


# ---------------------------------------------------------------- querying


def top_k(scene: SceneRepresentation, query: QueryFeatures, k: int, score_floor: float) -> list[tuple[ContextElement, float]]:
    """Best ``k`` elements scoring at least ``score_floor``; ties go to the lower element id."""
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if len(scene) == 0:
        return []
    scores = scene.scores(query)
    rows = top_k_rows(scene, query, k, score_floor, scores)
    return [(scene.element(int(r)), float(scores[r])) for r in rows]


def top_k_rows(scene: SceneRepresentation, query: QueryFeatures, k: int, score_floor: float, scores: np.ndarray | None = None) -> np.ndarray:
    if len(scene) == 0:
        return np.zeros(0, dtype=np.int64)
    scores = scene.scores(query) if scores is None else scores
    idx = np.flatnonzero(scores >= score_floor)
    if idx.size > k:
        kth = np.partition(scores[idx], idx.size - k)[idx.size - k]
        idx = idx[scores[idx] >= kth]
    order = np.lexsort((scene.element_ids[idx], -scores[idx]))
    return idx[order[:k]]


def group_candidates(candidates: Sequence[tuple[ContextElement, float]], params: FusionParams) -> list[list[int]]:
    """Greedy KL grouping of score-sorted candidates.

    Each candidate joins the first group whose seed satisfies
    KL(candidate || seed) < lambda, otherwise it starts a new group.
    Returned groups hold candidate indices; index 0 of a group is its seed.
    """
    groups: list[list[int]] = []
    seeds: list[Gaussian2D] = []
    for i, (elem, _) in enumerate(candidates):
        g = elem.gaussian(params.alpha)
        for grp, seed in zip(groups, seeds):
            if kl_divergence(g, seed) < params.lam:
                grp.append(i)
                break
        else:
            groups.append([i])
            seeds.append(g)
    return groups


def fuse_groups(candidates: Sequence[tuple[ContextElement, float]], groups: Sequence[Sequence[int]], params: FusionParams) -> list[Cluster]:
    clusters = []
    for grp in groups:
        seed_score = candidates[grp[0]][1]
        score = seed_score * bonus_f(len(grp), params.t)
        if not score > params.beta:
            continue
        s = np.array([candidates[i][1] for i in grp])
        w = np.exp(s - s.max())
        pts = np.array([candidates[i][0].position for i in grp])
        pos = (w[:, None] * pts).sum(axis=0) / w.sum()
        clusters.append(Cluster(tuple(float(v) for v in pos), float(score), len(grp), tuple(candidates[i][0].element_id for i in grp)))
    # stable: equal scores keep group order
    clusters.sort(key=lambda c: -c.score)
    return clusters


def multiview_fuse(candidates: Sequence[tuple[ContextElement, float]], params: FusionParams) -> list[Cluster]:
    for (_, a), (_, b) in zip(candidates, candidates[1:]):
        if b > a:
            raise InvalidArgumentError("candidates must be sorted by descending score")
    return fuse_groups(candidates, group_candidates(candidates, params), params)


@dataclass(frozen=True)
class QueryResult:
    name: str
    found: bool
    clusters: tuple[Cluster, ...]
    params_used: FusionParams = field(default_factory=FusionParams)

    @property
    def best(self) -> Cluster | None:
        return self.clusters[0] if self.clusters else None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "found": self.found,
            "clusters": [c.to_dict() for c in self.clusters],
            "params": self.params_used.to_dict(),
        }


def query_features(scene: SceneRepresentation, query: QueryFeatures, params: FusionParams) -> QueryResult:
    cands = top_k(scene, query, params.k, params.score_floor)
    clusters = tuple(multiview_fuse(cands, params))
    return QueryResult(query.name, bool(clusters), clusters, params)


def query_object(
    scene: SceneRepresentation,
    name: str,
    provider: EmbeddingProvider,
    params: FusionParams = FusionParams(),
    channel_roles: Sequence[str] | None = None,
) -> QueryResult:
    """encode_text -> top_k -> multiview_fuse."""
    roles = tuple(channel_roles) if channel_roles else scene.schema.ids
    q = encode_text(provider, name, roles)
    if len(scene) == 0:
        return QueryResult(q.name, False, (), params)
    return query_features(scene, q, params)


def query_objects(
    scene: SceneRepresentation,
    names: Sequence[str],
    provider: EmbeddingProvider,
    params: FusionParams = FusionParams(),
    *,
    workers: int = 1,
    channel_roles: Sequence[str] | None = None,
) -> list[QueryResult]:
    """Query several names; results come back in input order regardless of ``workers``."""
    if workers <= 1 or len(names) <= 1:
        return [query_object(scene, n, provider, params, channel_roles) for n in names]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda n: query_object(scene, n, provider, params, channel_roles), names))


# ---------------------------------------------------------------- heatmap


@dataclass(frozen=True)
class HeatGrid:
    values: np.ndarray  # (ny, nx), NaN where no element falls
    bounds: tuple[float, float, float, float]
    cell: float


def heatmap(scene: SceneRepresentation, query: QueryFeatures, bounds: Sequence[float], cell: float) -> HeatGrid:
    """Per-cell max ensemble score over elements whose (x, y) fall in the cell.

    Cell (ix, iy) covers [xmin + ix*cell, xmin + (ix+1)*cell) and likewise in y;
    the grid is indexed ``values[iy, ix]``.
    """
    xmin, ymin, xmax, ymax = (float(b) for b in bounds)
    if not (cell > 0 and math.isfinite(cell)):
        raise InvalidArgumentError("cell size must be positive")
    if not (xmax > xmin and ymax > ymin):
        raise InvalidArgumentError(f"degenerate bounds {tuple(bounds)}")
    nx = int(math.ceil((xmax - xmin) / cell - 1e-9))
    ny = int(math.ceil((ymax - ymin) / cell - 1e-9))
    grid = np.full((ny, nx), np.nan)
    if len(scene):
        s = scene.scores(query)
        ix = np.floor((scene.positions[:, 0] - xmin) / cell).astype(np.int64)
        iy = np.floor((scene.positions[:, 1] - ymin) / cell).astype(np.int64)
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        flat = np.full(nx * ny, -np.inf)
        np.maximum.at(flat, iy[ok] * nx + ix[ok], s[ok])
        filled = np.isfinite(flat)
        grid.reshape(-1)[filled] = flat[filled]
    return HeatGrid(grid, (xmin, ymin, xmax, ymax), float(cell))
