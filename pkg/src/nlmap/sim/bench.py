"""Benchmark harness: scene -> exploration -> map -> planner -> graded outcome."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import FusionParams
from ..embedding import MockProviderSpec, MockVLM
from ..errors import SchemaError
from ..llm import PlanScript, ScriptedBackend
from ..planner import DEFAULT_MAX_STEPS, DEFAULT_TAU_BIND, DONE, DetectedObject, SkillLibrary, plan_with_objects, run_planner
from ..scene import ChannelSchema, build_map
from .explore import NoiseSpec, default_waypoints, explore
from .scene import KITCHEN_LABELS, SceneSpec, generate_scene
from .world import DEFAULT_REACH, SimRobot, WorldState

log = logging.getLogger(__name__)

FAMILIES = ("saycan_tasks", "novel_objects", "missing_objects")
GOAL_TYPES = ("at", "holding", "robot_at", "infeasible")
GOAL_RADIUS = 0.5


# ---------------------------------------------------------------- fixtures


@dataclass(frozen=True)
class Goal:
    """End-state predicate. An "at" goal may name several objects, all of which must be placed."""

    type: str
    object: str | tuple[str, ...] | None = None
    target: str | None = None

    def __post_init__(self):
        if isinstance(self.object, (list, tuple)):
            object.__setattr__(self, "object", tuple(self.object))
        if self.type not in GOAL_TYPES:
            raise SchemaError(f"unknown goal type {self.type!r}")
        if self.type == "at" and not (self.object and self.target):
            raise SchemaError("'at' goal needs object and target")
        if self.type == "holding" and not self.object:
            raise SchemaError("'holding' goal needs object")
        if self.type == "robot_at" and not self.target:
            raise SchemaError("'robot_at' goal needs target")

    @property
    def objects(self) -> tuple[str, ...]:
        if self.object is None:
            return ()
        return self.object if isinstance(self.object, tuple) else (self.object,)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Goal":
        return cls(d["type"], d.get("object"), d.get("target"))

    def to_dict(self) -> dict:
        obj = list(self.object) if isinstance(self.object, tuple) else self.object
        return {k: v for k, v in (("type", self.type), ("object", obj), ("target", self.target)) if v is not None}


@dataclass(frozen=True)
class BenchTask:
    task_id: str
    family: str
    instruction: str
    objects: tuple[str, ...]  # always placed
    absent: tuple[str, ...]  # never placed
    extra: int  # random filler objects
    proposal: str  # recorded proposal completion
    plan: PlanScript
    goal: Goal

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchTask":
        try:
            scene = d.get("scene", {})
            plan = d["plan"]
            return cls(
                str(d["id"]),
                str(d["family"]),
                str(d["instruction"]),
                tuple(scene.get("objects", ())),
                tuple(scene.get("absent", ())),
                int(scene.get("extra", 12)),
                str(d["proposal"]),
                PlanScript(tuple(plan["required"]), tuple(plan["steps"])),
                Goal.from_dict(d["goal"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"task {d.get('id', '?')!r}: {exc}") from None


@dataclass(frozen=True)
class BenchSuite:
    name: str
    tasks: tuple[BenchTask, ...]
    errors: tuple[str, ...] = ()

    @classmethod
    def from_data(cls, data: Mapping, name: str = "suite") -> "BenchSuite":
        """Schema errors are collected per entry; the remaining tasks still load."""
        tasks, errors = [], []
        for i, entry in enumerate(data.get("tasks", ())):
            try:
                tasks.append(BenchTask.from_dict(entry))
            except SchemaError as exc:
                errors.append(f"entry {i}: {exc}")
                log.warning("skipping suite entry %d: %s", i, exc)
        return cls(data.get("name", name), tuple(tasks), tuple(errors))

    @classmethod
    def from_file(cls, path) -> "BenchSuite":
        return cls.from_data(json.loads(Path(path).read_text(encoding="utf-8")), Path(path).stem)

    @classmethod
    def default(cls) -> "BenchSuite":
        raw = resources.files("nlmap.data").joinpath("bench_suite.json").read_text(encoding="utf-8")
        return cls.from_data(json.loads(raw), "bench_suite")

    def labels(self) -> list[str]:
        out = dict.fromkeys(KITCHEN_LABELS)
        for t in self.tasks:
            out.update(dict.fromkeys(t.objects))
        return list(out)


# ---------------------------------------------------------------- grading


def symbolic_outcome(steps: Sequence[str]) -> dict:
    """Read a plan as text: where the robot went, what it holds, where things were put."""
    robot, held, placed = None, None, {}
    for step in steps:
        if step == DONE:
            break
        for prefix, kind in (("find the ", "nav"), ("go to the ", "nav"), ("pick up the ", "pick"), ("put down the ", "place")):
            if step.startswith(prefix):
                name = step[len(prefix):]
                if kind == "nav":
                    robot = name
                elif kind == "pick" and held is None:
                    held = name
                elif kind == "place" and held == name:
                    placed[name] = robot
                    held = None
                break
    return {"robot": robot, "held": held, "placed": placed}


def planning_success(goal: Goal, steps: Sequence[str], outcome: str) -> bool:
    if goal.type == "infeasible":
        return list(steps) == [DONE] and outcome == "infeasible"
    if outcome != "completed":
        return False
    s = symbolic_outcome(steps)
    if goal.type == "at":
        return all(s["placed"].get(o) == goal.target and s["held"] != o for o in goal.objects)
    if goal.type == "holding":
        return s["held"] == goal.object
    return s["robot"] == goal.target


def execution_success(goal: Goal, world: WorldState, truth: Mapping[str, Sequence[float]], outcome: str, executed: Sequence[bool], radius: float = GOAL_RADIUS) -> bool:
    if goal.type == "infeasible":
        return outcome == "infeasible" and not executed
    if outcome != "completed":
        return False

    def near(p, q) -> bool:
        return float(np.hypot(*(np.asarray(p[:2], float) - np.asarray(q[:2], float)))) <= radius

    if goal.type == "at":
        return all(world.gripper != o and near(world.object_positions[o], truth[goal.target]) for o in goal.objects)
    if goal.type == "holding":
        return world.gripper == goal.object
    return near(world.robot_position, truth[goal.target])


# ---------------------------------------------------------------- running


@dataclass(frozen=True)
class BenchConfig:
    mock: MockProviderSpec = MockProviderSpec()
    noise: NoiseSpec = NoiseSpec()
    params: FusionParams = FusionParams()
    n_waypoints: int = 8
    max_steps: int = DEFAULT_MAX_STEPS
    tau_bind: float = DEFAULT_TAU_BIND
    reach: float = DEFAULT_REACH
    scene: SceneSpec = SceneSpec()


@dataclass
class BenchReport:
    suite: str
    seed: int
    trials_per_task: int
    families: list[dict]
    trials: list[dict]
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "trials_per_task": self.trials_per_task,
            "families": self.families,
            "trials": self.trials,
            "errors": self.errors,
        }

    def to_json(self, pretty: bool = False) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2 if pretty else None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["trial_id", "task_id", "family", "outcome", "planning_success", "execution_success", "steps"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for t in self.trials:
            w.writerow([t["trial_id"], t["task_id"], t["family"], t["outcome"], int(t["planning_success"]), int(t["execution_success"]), " | ".join(t["steps"])])
        return buf.getvalue()

    def family(self, name: str) -> dict:
        return next(f for f in self.families if f["family"] == name)


def _trial(task: BenchTask, trial: int, seeds: np.random.SeedSequence, cfg: BenchConfig, vlm: MockVLM, library: SkillLibrary) -> dict:
    scene_seed, explore_seed = (int(s) for s in seeds.generate_state(2))
    base = cfg.scene
    spec = SceneSpec(
        count=len(set(task.objects)) + task.extra,
        required=task.objects,
        pool=base.pool,
        exclude=tuple(task.absent) + base.exclude,
        bounds=base.bounds,
        radius_range=base.radius_range,
        height_range=base.height_range,
        margin=base.margin,
        max_tries=base.max_tries,
    )
    scene = generate_scene(spec, scene_seed, f"{task.task_id}#{trial}")
    frames = explore(scene, default_waypoints(scene.bounds, cfg.n_waypoints), cfg.noise, vlm, seed=explore_seed).frames
    schema = ChannelSchema(tuple((cid, cfg.mock.dimension) for cid in vlm.channel_ids))
    nl_map = build_map(frames, schema, scene_id=scene.scene_id)

    llm = ScriptedBackend({task.instruction: task.proposal}, {task.instruction: task.plan})
    truth = {o.label: o.position for o in scene.objects}
    xmin, ymin, xmax, ymax = scene.bounds
    world = WorldState.start(truth, ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0, 0.0))
    robot = SimRobot(library, cfg.reach)
    plan = run_planner(
        task.instruction, nl_map, vlm.text_provider(), llm, library,
        affordance=robot.affordance, executor=robot.execute, world=world,
        params=cfg.params, max_steps=cfg.max_steps, tau_bind=cfg.tau_bind,
    )
    final = plan.world if plan.world is not None else world
    return {
        "trial_id": f"{task.task_id}#{trial:03d}",
        "task_id": task.task_id,
        "family": task.family,
        "instruction": task.instruction,
        "detected": list(plan.scene_objects),
        "steps": plan.labels,
        "outcome": plan.outcome,
        "planning_success": planning_success(task.goal, plan.labels, plan.outcome),
        "execution_success": execution_success(task.goal, final, truth, plan.outcome, plan.executed),
    }


def run_benchmark(suite: BenchSuite, trials: int = 1, seed: int = 0, *, config: BenchConfig = BenchConfig(), workers: int = 1) -> BenchReport:
    """Run every task ``trials`` times; per-trial seeds do not depend on ``workers``."""
    if not suite.tasks:
        raise SchemaError("benchmark suite has no valid tasks")
    if trials < 1:
        raise SchemaError("trials must be >= 1")
    vlm = MockVLM(config.mock)
    library = SkillLibrary.for_objects(suite.labels(), vlm.text_provider())
    jobs = []
    children = np.random.SeedSequence(seed).spawn(len(suite.tasks) * trials)
    for ti, task in enumerate(suite.tasks):
        for r in range(trials):
            jobs.append((task, r, children[ti * trials + r]))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda j: _trial(*j, config, vlm, library), jobs))
    else:
        records = [_trial(*j, config, vlm, library) for j in jobs]
    records.sort(key=lambda r: r["trial_id"])
    families = []
    for fam in dict.fromkeys(t.family for t in suite.tasks):
        rows = [r for r in records if r["family"] == fam]
        families.append({
            "family": fam,
            "trials": len(rows),
            "planning_success_rate": sum(r["planning_success"] for r in rows) / len(rows),
            "execution_success_rate": sum(r["execution_success"] for r in rows) / len(rows),
        })
    return BenchReport(suite.name, seed, trials, families, records, list(suite.errors))


# ---------------------------------------------------------------- positive / negative protocol


@dataclass(frozen=True)
class ProtocolCase:
    instruction: str
    positive: tuple[str, ...]
    negative: tuple[str, ...]
    plan: PlanScript
    goal: Goal

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolCase":
        p = d["plan"]
        return cls(d["instruction"], tuple(d["positive_objects"]), tuple(d["negative_objects"]), PlanScript(tuple(p["required"]), tuple(p["steps"])), Goal.from_dict(d["goal"]))


def load_protocol_suite(path=None) -> list[ProtocolCase]:
    if path is None:
        raw = resources.files("nlmap.data").joinpath("planning_suite.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    return [ProtocolCase.from_dict(d) for d in json.loads(raw)]


def run_protocol(cases: Sequence[ProtocolCase], text_provider, *, max_steps: int = DEFAULT_MAX_STEPS, tau_bind: float = DEFAULT_TAU_BIND) -> dict:
    """Plan each instruction against its positive and its negative object set.

    A positive run succeeds when the plan, read as text, achieves the goal;
    a negative run succeeds when the planner answers "done" immediately.
    """
    labels = dict.fromkeys(KITCHEN_LABELS)
    for c in cases:
        labels.update(dict.fromkeys(c.positive + c.negative))
    library = SkillLibrary.for_objects(list(labels), text_provider)
    llm = ScriptedBackend(plans={c.instruction: c.plan for c in cases})
    results = []
    for c in cases:
        row = {"instruction": c.instruction}
        for which, objs in (("positive", c.positive), ("negative", c.negative)):
            detected = [DetectedObject(o) for o in objs]
            plan = plan_with_objects(c.instruction, detected, llm, library, text_provider, max_steps=max_steps, tau_bind=tau_bind)
            goal = c.goal if which == "positive" else Goal("infeasible")
            row[which] = {"steps": plan.labels, "outcome": plan.outcome, "success": planning_success(goal, plan.labels, plan.outcome)}
        results.append(row)
    n = len(results)
    return {
        "instructions": n,
        "positive_success_rate": sum(r["positive"]["success"] for r in results) / n if n else 0.0,
        "negative_success_rate": sum(r["negative"]["success"] for r in results) / n if n else 0.0,
        "results": results,
    }
