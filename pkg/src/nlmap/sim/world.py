"""Kinematic world state, option execution and the matching affordances."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ..planner import Option, SkillLibrary

DEFAULT_REACH = 1.0
LOW_AFFORDANCE = 0.05


@dataclass(frozen=True)
class WorldState:
    """Robot pose, gripper and object layout. Held objects keep their last position."""

    robot_position: tuple[float, float, float]
    object_positions: Mapping[str, tuple[float, float, float]]
    gripper: str | None = None
    log: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "object_positions", dict(self.object_positions))
        if self.gripper is not None and self.gripper not in self.object_positions:
            raise ValueError(f"gripper holds unknown object {self.gripper!r}")

    def position_of(self, label: str) -> np.ndarray:
        if label == self.gripper:
            return np.asarray(self.robot_position, dtype=np.float64)
        return np.asarray(self.object_positions[label], dtype=np.float64)

    def planar_distance(self, label: str) -> float:
        d = self.position_of(label)[:2] - np.asarray(self.robot_position[:2])
        return float(np.hypot(*d))

    def to_dict(self) -> dict:
        return {
            "robot_position": [float(v) for v in self.robot_position],
            "gripper": self.gripper,
            "object_positions": {k: [float(v) for v in p] for k, p in sorted(self.object_positions.items())},
            "log": list(self.log),
        }

    @classmethod
    def start(cls, objects: Mapping[str, tuple[float, float, float]], robot_position=(0.0, 0.0, 0.0)) -> "WorldState":
        return cls(tuple(float(v) for v in robot_position), {k: tuple(float(v) for v in p) for k, p in objects.items()})


def _target(option: Option, library: SkillLibrary | None) -> str | None:
    if library is not None and option.bound_policy is not None:
        try:
            skill = library.get(option.bound_policy)
        except KeyError:
            skill = None
        if skill is not None and skill.target is not None:
            return skill.target
    return option.target_object


def execute_option(world: WorldState, option: Option, library: SkillLibrary | None = None, reach: float = DEFAULT_REACH) -> tuple[WorldState, bool]:
    """Apply one option. Failures leave the layout unchanged and only add a log line."""
    if option.kind == "terminal":
        return replace(world, log=world.log + ("done",)), True
    if option.kind == "navigate":
        if option.target_position is None:
            return replace(world, log=world.log + (f"fail: {option.label} (no location)",)), False
        pos = tuple(float(v) for v in option.target_position)
        return replace(world, robot_position=pos, log=world.log + (f"ok: {option.label}",)), True
    if option.kind == "pick":
        target = _target(option, library)
        if world.gripper is not None or target not in world.object_positions or world.planar_distance(target) > reach:
            return replace(world, log=world.log + (f"fail: {option.label}",)), False
        return replace(world, gripper=target, log=world.log + (f"ok: {option.label}",)), True
    if option.kind == "place":
        held = world.gripper
        if held is None:
            return replace(world, log=world.log + (f"fail: {option.label}",)), False
        objs = dict(world.object_positions)
        objs[held] = tuple(world.robot_position)
        return replace(world, object_positions=objs, gripper=None, log=world.log + (f"ok: {option.label}",)), True
    raise ValueError(f"unknown option kind {option.kind!r}")


def affordance_sim(world: WorldState, option: Option, library: SkillLibrary | None = None, reach: float = DEFAULT_REACH) -> float:
    if option.kind in ("navigate", "terminal"):
        return 1.0
    if option.kind == "pick":
        target = _target(option, library)
        ok = world.gripper is None and target in world.object_positions and world.planar_distance(target) <= reach
        return 1.0 if ok else LOW_AFFORDANCE
    if option.kind == "place":
        return 1.0 if world.gripper is not None else LOW_AFFORDANCE
    raise ValueError(f"unknown option kind {option.kind!r}")


@dataclass(frozen=True)
class SimRobot:
    """Bundles executor and affordance callables for the planner."""

    library: SkillLibrary | None = None
    reach: float = DEFAULT_REACH

    def execute(self, world: WorldState, option: Option) -> tuple[WorldState, bool]:
        return execute_option(world, option, self.library, self.reach)

    def affordance(self, world: WorldState, option: Option) -> float:
        return affordance_sim(world, option, self.library, self.reach)
