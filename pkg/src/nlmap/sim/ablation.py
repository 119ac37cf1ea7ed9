"""Query-success ablation over scoring and fusion variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import FusionParams
from ..embedding import MockProviderSpec, MockVLM, encode_text
from ..scene import ChannelSchema, build_map, query_features
from .explore import NoiseSpec, default_waypoints, explore
from .scene import KITCHEN_LABELS, SceneSpec, absent_labels, generate_scene

SUCCESS_RADIUS = 0.5
ABLATION_BOUNDS = (0.0, 0.0, 4.0, 4.0)


@dataclass(frozen=True)
class QueryMethod:
    name: str
    channels: tuple[str, ...] | None  # None = every channel in the map
    k: int


def default_methods(params: FusionParams = FusionParams()) -> tuple[QueryMethod, ...]:
    return (
        QueryMethod("vild", ("vild",), 1),
        QueryMethod("clip", ("clip",), 1),
        QueryMethod("ensemble", None, 1),
        QueryMethod("ensemble+fusion", None, params.k),
    )


@dataclass
class AblationReport:
    scenes: int
    queries: int
    success: dict[str, float]
    positives: dict[str, float] = field(default_factory=dict)
    negatives: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenes": self.scenes,
            "queries": self.queries,
            "success": dict(self.success),
            "positive_success": dict(self.positives),
            "negative_success": dict(self.negatives),
        }


def query_success(result, truth_xy, radius: float = SUCCESS_RADIUS) -> bool:
    """Right presence verdict, and for present objects the best cluster within ``radius``."""
    if truth_xy is None:
        return not result.found
    if not result.found:
        return False
    p = np.asarray(result.best.position[:2])
    return float(np.hypot(*(p - np.asarray(truth_xy)))) <= radius


def run_ablation(
    n_scenes: int = 100,
    seed: int = 0,
    *,
    mock: MockProviderSpec = MockProviderSpec(),
    noise: NoiseSpec = NoiseSpec(),
    params: FusionParams = FusionParams(),
    count: int = 20,
    n_waypoints: int = 8,
    negatives: int = 10,
    bounds=ABLATION_BOUNDS,
    methods: tuple[QueryMethod, ...] | None = None,
) -> AblationReport:
    """Each scene is queried for all its objects plus ``negatives`` absent kitchen labels."""
    methods = methods or default_methods(params)
    vlm = MockVLM(mock)
    text = vlm.text_provider()
    schema = ChannelSchema(tuple((cid, mock.dimension) for cid in vlm.channel_ids))
    ok = {m.name: [0, 0] for m in methods}
    neg = {m.name: [0, 0] for m in methods}
    total = 0
    ss = np.random.SeedSequence(seed)
    for i, child in enumerate(ss.spawn(n_scenes)):
        scene_seed, explore_seed, neg_seed = (int(s) for s in child.generate_state(3))
        scene = generate_scene(SceneSpec(count=count, bounds=tuple(bounds)), scene_seed)
        frames = explore(scene, default_waypoints(scene.bounds, n_waypoints), noise, vlm, seed=explore_seed).frames
        nl_map = build_map(frames, schema, scene_id=scene.scene_id)
        pool = absent_labels(scene, KITCHEN_LABELS)
        rng = np.random.default_rng(neg_seed)
        absent = [pool[j] for j in sorted(rng.choice(len(pool), size=min(negatives, len(pool)), replace=False))]
        queries = [(o.label, o.position[:2]) for o in scene.objects] + [(lab, None) for lab in absent]
        for label, truth in queries:
            total += 1
            for m in methods:
                q = encode_text(text, label, m.channels or schema.ids)
                res = query_features(nl_map, q, params.replace(k=m.k))
                hit = query_success(res, truth)
                bucket = ok if truth is not None else neg
                bucket[m.name][0] += hit
                bucket[m.name][1] += 1
    success = {m: (ok[m][0] + neg[m][0]) / max(1, ok[m][1] + neg[m][1]) for m in ok}
    positives = {m: ok[m][0] / max(1, ok[m][1]) for m in ok}
    negs = {m: neg[m][0] / max(1, neg[m][1]) for m in neg}
    return AblationReport(n_scenes, total, success, positives, negs)
