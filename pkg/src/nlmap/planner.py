"""Context-aware SayCan: option generation, policy binding and the scoring loop."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import FusionParams
from .embedding import EmbeddingProvider
from .errors import EmptyProposalError, InvalidArgumentError, SchemaError, UnboundOptionError
from .proposal import ProposalPrompt, propose_objects
from .scene import SceneRepresentation, query_objects

log = logging.getLogger(__name__)

DONE = "done"
KINDS = ("navigate", "pick", "place", "terminal")
NAVIGATE_POLICY = "navigate"
DEFAULT_MAX_STEPS = 20
DEFAULT_TAU_BIND = 0.5


# ---------------------------------------------------------------- skills


@dataclass(frozen=True)
class Skill:
    policy_id: str
    description: str
    kind: str
    target: str | None = None  # world object the policy manipulates

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown skill kind {self.kind!r}")


class SkillLibrary:
    def __init__(self, skills: Sequence[Skill], provider: EmbeddingProvider):
        skills = tuple(skills)
        ids = [s.policy_id for s in skills]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("policy ids must be unique")
        if sum(s.kind == "terminal" for s in skills) != 1:
            raise InvalidArgumentError("skill library needs exactly one terminal skill")
        self.skills = skills
        self.provider = provider
        vecs = provider.embed_texts([s.description for s in skills])
        self.description_vectors = np.stack([v.values for v in vecs])
        self.description_vectors.setflags(write=False)
        self._by_id = {s.policy_id: s for s in skills}

    def __len__(self):
        return len(self.skills)

    def get(self, policy_id: str) -> Skill:
        return self._by_id[policy_id]

    @property
    def terminal(self) -> Skill:
        return next(s for s in self.skills if s.kind == "terminal")

    @classmethod
    def for_objects(cls, labels: Sequence[str], provider: EmbeddingProvider, extra: Sequence[Skill] = ()) -> "SkillLibrary":
        """Pick and place policies for each label, a navigation policy and "done"."""
        skills = [Skill(NAVIGATE_POLICY, "go to a location", "navigate"), Skill(DONE, DONE, "terminal")]
        for lab in labels:
            skills.append(Skill(f"pick:{lab}", f"pick up the {lab}", "pick", lab))
            skills.append(Skill(f"place:{lab}", f"put down the {lab}", "place", lab))
        skills.extend(extra)
        return cls(skills, provider)


@dataclass(frozen=True)
class TemplateSet:
    templates: tuple[tuple[str, str], ...]

    def __post_init__(self):
        for frame, kind in self.templates:
            if frame.count("{}") != 1:
                raise InvalidArgumentError(f"template {frame!r} needs exactly one slot")
            if kind not in KINDS or kind == "terminal":
                raise InvalidArgumentError(f"template kind {kind!r} invalid")

    @classmethod
    def default(cls) -> "TemplateSet":
        return cls((("find the {}", "navigate"), ("pick up the {}", "pick"), ("put down the {}", "place")))


@dataclass(frozen=True)
class DetectedObject:
    name: str
    position: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class Option:
    label: str
    kind: str
    target_object: str | None = None
    target_position: tuple[float, float, float] | None = None
    bound_policy: str | None = None


def generate_options(detected: Sequence[DetectedObject], templates: TemplateSet) -> list[Option]:
    """Every detected object through every template, then "done"."""
    opts = []
    for obj in detected:
        for frame, kind in templates.templates:
            pos = obj.position if kind == "navigate" else None
            opts.append(Option(frame.format(obj.name), kind, obj.name, pos))
    opts.append(Option(DONE, "terminal"))
    return opts


def bind_policy(option_label: str, library: SkillLibrary, provider: EmbeddingProvider, tau_bind: float = DEFAULT_TAU_BIND) -> tuple[str, float]:
    """Nearest skill description in text-embedding space (ties -> smaller policy id)."""
    if len(library) == 0:
        raise InvalidArgumentError("empty skill library")
    (vec,) = provider.embed_texts([option_label])
    sims = library.description_vectors @ vec.values
    best = float(sims.max())
    winners = [library.skills[i].policy_id for i in np.flatnonzero(sims == best)]
    pid = min(winners)
    if best < tau_bind:
        raise UnboundOptionError(option_label, best)
    return pid, best


def bind_options(options: Sequence[Option], library: SkillLibrary, provider: EmbeddingProvider, tau_bind: float = DEFAULT_TAU_BIND) -> tuple[list[Option], list[str]]:
    """Bind each option; navigation and "done" bind directly. Returns (bound, dropped labels)."""
    bound, dropped = [], []
    for opt in options:
        if opt.kind == "terminal":
            bound.append(replace(opt, bound_policy=library.terminal.policy_id))
        elif opt.kind == "navigate":
            bound.append(replace(opt, bound_policy=NAVIGATE_POLICY))
        else:
            try:
                pid, _ = bind_policy(opt.label, library, provider, tau_bind)
            except UnboundOptionError as exc:
                log.warning("dropping option: %s", exc)
                dropped.append(opt.label)
                continue
            bound.append(replace(opt, bound_policy=pid))
    return bound, dropped


# ---------------------------------------------------------------- prompts


@dataclass(frozen=True)
class PlanningExample:
    instruction: str
    available_objects: tuple[str, ...]
    explanation: str
    completion: str
    steps: tuple[str, ...] = ()


@dataclass(frozen=True)
class PlanningPrompt:
    header: str
    examples: tuple[PlanningExample, ...]
    version: int = 1

    @classmethod
    def _from_data(cls, data) -> "PlanningPrompt":
        exs = tuple(
            PlanningExample(e["instruction"], tuple(e["available_objects"]), e.get("explanation", ""), e["completion"], tuple(e.get("steps", ())))
            for e in data["examples"]
        )
        return cls(data.get("header", ""), exs, data.get("version", 1))

    @classmethod
    @lru_cache(maxsize=None)
    def default(cls) -> "PlanningPrompt":
        raw = resources.files("nlmap.data").joinpath("planning_prompt.json").read_text(encoding="utf-8")
        return cls._from_data(json.loads(raw))

    @classmethod
    def from_file(cls, path) -> "PlanningPrompt":
        return cls._from_data(json.loads(Path(path).read_text(encoding="utf-8")))


def _objects_line(objects: Sequence[str]) -> str:
    return "Available objects are: " + ", ".join(objects) + "."


def render_planning_prompt(instruction: str, scene_objects: Sequence[str], history: Sequence[str] = (), few_shot: PlanningPrompt | None = None) -> str:
    few_shot = few_shot if few_shot is not None else PlanningPrompt.default()
    parts = [few_shot.header] if few_shot.header else []
    for ex in few_shot.examples:
        parts.append(f"Human: {ex.instruction}\n{_objects_line(ex.available_objects)}\nExplanation: {ex.explanation}\nRobot: {ex.completion}")
    robot = "".join(f"{i}. {step}\n" for i, step in enumerate(history, start=1)) + f"{len(history) + 1}. "
    parts.append(f"Human: {instruction}\n{_objects_line(scene_objects)}\nRobot: {robot}")
    return "\n".join(parts)


@dataclass(frozen=True)
class PlanningQuery:
    instruction: str
    available: tuple[str, ...]
    history: tuple[str, ...]


_NUM_RE = re.compile(r"^\s*\d+\.\s?")


def parse_planning_query(prompt: str) -> PlanningQuery | None:
    """Recover instruction, objects and history from the open block of a planning prompt."""
    at = prompt.rfind("Human: ")
    if at < 0:
        return None
    lines = prompt[at + len("Human: "):].split("\n")
    if len(lines) < 3 or not lines[1].startswith("Available objects are: ") or not lines[1].endswith("."):
        return None
    objs = lines[1][len("Available objects are: "):-1]
    available = tuple(o.strip() for o in objs.split(",") if o.strip())
    robot_at = next((i for i, l in enumerate(lines) if l.startswith("Robot: ")), None)
    if robot_at is None:
        return None
    entries = "\n".join(lines[robot_at:])[len("Robot: "):].split("\n")
    if _NUM_RE.sub("", entries[-1], count=1) != "":
        return None
    history = tuple(_NUM_RE.sub("", e, count=1) for e in entries[:-1])
    return PlanningQuery(lines[0], available, history)


def parse_plan(completion: str) -> list[str]:
    """Steps from a generated plan continuation, stopping after "done"."""
    steps = []
    for line in completion.split("\n"):
        if not line.strip() or line.startswith("Human:"):
            break
        step = _NUM_RE.sub("", line, count=1).strip()
        if step.endswith("."):
            step = step[:-1]
        steps.append(step)
        if step == DONE:
            break
    return steps


# ---------------------------------------------------------------- loop


AffordanceFn = Callable[[object, Option], float]
ExecutorFn = Callable[[object, Option], tuple[object, bool]]


@dataclass
class PlannerState:
    instruction: str
    scene_objects: tuple[DetectedObject, ...]
    history: list[str] = field(default_factory=list)
    step_index: int = 1
    max_steps: int = DEFAULT_MAX_STEPS
    world_handle: object = None
    few_shot: PlanningPrompt | None = None

    @property
    def object_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.scene_objects)


@dataclass(frozen=True)
class StepRecord:
    label: str
    q_llm: float
    q_affordance: float
    q_combined: float

    def to_dict(self) -> dict:
        return {"label": self.label, "q_llm": self.q_llm, "q_affordance": self.q_affordance, "q_combined": self.q_combined}


@dataclass
class Plan:
    instruction: str
    scene_objects: list[str]
    steps: list[StepRecord]
    outcome: str  # completed | infeasible | step-limit
    executed: list[bool] = field(default_factory=list)
    dropped_options: list[str] = field(default_factory=list)
    world: object = None

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.steps]

    def to_dict(self) -> dict:
        d = {
            "instruction": self.instruction,
            "scene_objects": list(self.scene_objects),
            "steps": [s.to_dict() for s in self.steps],
            "outcome": self.outcome,
        }
        if self.executed:
            d["executed"] = list(self.executed)
        if self.dropped_options:
            d["dropped_options"] = list(self.dropped_options)
        return d


def softmax(x: Sequence[float]) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    a = a - a.max()
    e = np.exp(a)
    return e / e.sum()


def plan_step(state: PlannerState, options: Sequence[Option], llm, affordance: AffordanceFn | None) -> tuple[Option, list[StepRecord]]:
    """Score every option by softmax(LLM log-prob) x affordance and pick the best."""
    if not any(o.label == DONE for o in options):
        raise InvalidArgumentError("options must include 'done'")
    prompt = render_planning_prompt(state.instruction, state.object_names, state.history, state.few_shot)
    raw = llm.score(prompt, [o.label for o in options])
    if len(raw) != len(options):
        raise SchemaError("backend returned the wrong number of scores")
    q_llm = softmax(raw)
    records = []
    for o, q in zip(options, q_llm):
        aff = 1.0 if o.kind == "terminal" or affordance is None else float(affordance(state.world_handle, o))
        records.append(StepRecord(o.label, float(q), aff, float(q) * aff))
    best = min(range(len(options)), key=lambda i: (-records[i].q_combined, options[i].label, options[i].bound_policy or ""))
    return options[best], records


def run_planner(
    instruction: str,
    scene: SceneRepresentation,
    text_provider: EmbeddingProvider,
    llm,
    library: SkillLibrary,
    *,
    affordance: AffordanceFn | None = None,
    executor: ExecutorFn | None = None,
    world=None,
    params: FusionParams = FusionParams(),
    templates: TemplateSet | None = None,
    proposal_prompt: ProposalPrompt | None = None,
    few_shot: PlanningPrompt | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    tau_bind: float = DEFAULT_TAU_BIND,
) -> Plan:
    """Propose objects, query the map, then plan step by step until "done"."""
    done_only = [StepRecord(DONE, 1.0, 1.0, 1.0)]
    try:
        proposed = propose_objects(llm, instruction, proposal_prompt)
    except EmptyProposalError:
        return Plan(instruction, [], done_only, "infeasible", world=world)
    results = query_objects(scene, list(proposed.names), text_provider, params)
    detected = tuple(DetectedObject(r.name, r.best.position) for r in results if r.found)
    return plan_with_objects(
        instruction, detected, llm, library, text_provider,
        affordance=affordance, executor=executor, world=world, templates=templates,
        few_shot=few_shot, max_steps=max_steps, tau_bind=tau_bind,
    )


def plan_with_objects(
    instruction: str,
    detected: Sequence[DetectedObject],
    llm,
    library: SkillLibrary,
    text_provider: EmbeddingProvider,
    *,
    affordance: AffordanceFn | None = None,
    executor: ExecutorFn | None = None,
    world=None,
    templates: TemplateSet | None = None,
    few_shot: PlanningPrompt | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    tau_bind: float = DEFAULT_TAU_BIND,
) -> Plan:
    """The scoring loop given an already-detected object set."""
    if max_steps < 1:
        raise InvalidArgumentError("max_steps must be >= 1")
    detected = tuple(detected)
    options = generate_options(detected, templates or TemplateSet.default())
    options, dropped = bind_options(options, library, text_provider, tau_bind)
    state = PlannerState(instruction, detected, max_steps=max_steps, world_handle=world, few_shot=few_shot)
    steps: list[StepRecord] = []
    executed: list[bool] = []
    outcome = "step-limit"
    while state.step_index <= state.max_steps:
        choice, records = plan_step(state, options, llm, affordance)
        steps.append(records[options.index(choice)])
        if choice.label == DONE:
            outcome = "infeasible" if state.step_index == 1 else "completed"
            break
        if executor is not None:
            state.world_handle, ok = executor(state.world_handle, choice)
            executed.append(bool(ok))
        state.history.append(choice.label)
        state.step_index += 1
    return Plan(instruction, list(state.object_names), steps, outcome, executed, dropped, state.world_handle)
