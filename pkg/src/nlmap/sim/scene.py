"""Synthetic kitchen scenes with ground-truth object placements."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import InvalidArgumentError, SceneGenerationError

KITCHEN_LABELS = (
    "apple", "banana", "orange", "lime", "peach", "grapefruit", "coke can", "pepsi can",
    "sprite can", "red bull can", "7up can", "water bottle", "tea bottle", "energy bar",
    "bag of chips", "multigrain chips", "rice chip bag", "candy", "snickers", "twix",
    "peanuts", "dried fruit", "granola bar", "sponge", "towel", "napkin", "mug",
    "paper cup", "paper bowl", "plate", "fork", "spoon", "knife", "cutting board",
    "kettle", "toaster", "microwave", "coffee machine", "fridge", "sink", "trash can",
    "compost bin", "recycling bin", "woven basket", "cardboard box", "potted plant",
    "first aid station", "yellow sign", "clipboard", "tv", "box of tea", "snack jar of nuts",
    "far counter", "close counter", "table", "human",
)

# Labels never placed in scenes; spurious detections borrow these.
DISTRACTOR_LABELS = (
    "ceiling light", "power outlet", "door handle", "window blind", "air vent",
    "floor tile", "shadow", "reflection", "wall poster", "cable", "chair leg",
    "light switch", "fire alarm", "smoke detector", "exit sign", "carpet",
)

RECEPTACLE_LABELS = (
    "far counter", "close counter", "table", "human", "trash can", "compost bin",
    "recycling bin", "woven basket", "cardboard box", "sink", "fridge", "microwave",
    "paper bowl", "potted plant", "first aid station", "yellow sign", "tv", "coffee machine",
)


@dataclass(frozen=True)
class SceneObject:
    label: str
    position: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: str
    objects: tuple[SceneObject, ...]
    receptacles: tuple[str, ...]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    seed: int

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        for o in self.objects:
            if not o.label:
                raise InvalidArgumentError("object labels must be non-empty")
            if not (xmin <= o.position[0] <= xmax and ymin <= o.position[1] <= ymax):
                raise InvalidArgumentError(f"{o.label} at {o.position} lies outside {self.bounds}")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(o.label for o in self.objects)

    def get(self, label: str) -> SceneObject:
        for o in self.objects:
            if o.label == label:
                return o
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "objects": [{"label": o.label, "position": list(o.position), "radius": o.radius} for o in self.objects],
            "receptacles": list(self.receptacles),
            "bounds": list(self.bounds),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticScene":
        objs = tuple(SceneObject(o["label"], tuple(float(v) for v in o["position"]), float(o["radius"])) for o in d["objects"])
        return cls(d.get("scene_id", "scene"), objs, tuple(d.get("receptacles", ())), tuple(d["bounds"]), int(d.get("seed", 0)))


@dataclass(frozen=True)
class SceneSpec:
    """How to draw a scene: ``required`` labels always appear, the rest come from ``pool``."""

    count: int = 20
    required: tuple[str, ...] = ()
    pool: tuple[str, ...] = KITCHEN_LABELS
    exclude: tuple[str, ...] = ()
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 4.0, 4.0)
    radius_range: tuple[float, float] = (0.06, 0.14)
    height_range: tuple[float, float] = (0.0, 0.9)
    margin: float = 0.3
    fixed: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)
    max_tries: int = 2000

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown scene spec keys: {sorted(unknown)}")
        for key in ("required", "pool", "exclude", "bounds", "radius_range", "height_range"):
            if key in d:
                d[key] = tuple(d[key])
        if "fixed" in d:
            d["fixed"] = {k: tuple(v) for k, v in d["fixed"].items()}
        return cls(**d)


def generate_scene(spec: SceneSpec, seed: int, scene_id: str | None = None) -> SyntheticScene:
    """Place objects uniformly with spacing >= 2 x the largest radius."""
    if spec.count < 0:
        raise InvalidArgumentError("count must be >= 0")
    rng = np.random.default_rng(seed)
    required = list(dict.fromkeys(spec.required))
    if len(required) > spec.count:
        raise SceneGenerationError(f"{len(required)} required labels exceed count {spec.count}")
    banned = set(required) | set(spec.exclude)
    pool = [lab for lab in spec.pool if lab not in banned]
    extra = spec.count - len(required)
    if extra > len(pool):
        raise SceneGenerationError(f"label pool has {len(pool)} free labels, need {extra}")
    picks = [pool[i] for i in sorted(rng.choice(len(pool), size=extra, replace=False))] if extra else []
    labels = required + picks

    rlo, rhi = spec.radius_range
    radii = rng.uniform(rlo, rhi, size=len(labels))
    spacing = 2.0 * rhi
    xmin, ymin, xmax, ymax = spec.bounds
    m = spec.margin
    if xmax - xmin <= 2 * m or ymax - ymin <= 2 * m:
        raise SceneGenerationError("bounds too small for the margin")
    placed: list[np.ndarray] = []
    objects = []
    for lab, rad in zip(labels, radii):
        if lab in spec.fixed:
            pos = np.asarray(spec.fixed[lab], dtype=np.float64)
        else:
            for _ in range(spec.max_tries):
                pos = np.array([
                    rng.uniform(xmin + m, xmax - m),
                    rng.uniform(ymin + m, ymax - m),
                    rng.uniform(*spec.height_range),
                ])
                if all(np.hypot(*(pos[:2] - q[:2])) >= spacing for q in placed):
                    break
            else:
                raise SceneGenerationError(
                    f"could not place {lab!r}: minimum spacing {spacing:.3f} m unsatisfiable after {spec.max_tries} tries"
                )
        placed.append(pos)
        objects.append(SceneObject(lab, tuple(float(v) for v in pos), float(rad)))
    receptacles = tuple(lab for lab in labels if lab in RECEPTACLE_LABELS)
    return SyntheticScene(scene_id or f"scene-{seed}", tuple(objects), receptacles, tuple(float(b) for b in spec.bounds), seed)


def pairwise_min_distance(scene: SyntheticScene) -> float:
    pts = np.array([o.position[:2] for o in scene.objects])
    if len(pts) < 2:
        return float("inf")
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def absent_labels(scene: SyntheticScene, pool: Sequence[str] = KITCHEN_LABELS) -> list[str]:
    present = set(scene.labels)
    return [lab for lab in pool if lab not in present]
