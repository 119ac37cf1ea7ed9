"""Few-shot object proposal: render the prompt, call the LLM, parse its completion."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CapabilityError, EmptyProposalError, InvalidArgumentError

DEFAULT_TEMPLATE = "The task '{instruction}' may involve the following objects:"
_FRAME_RE = re.compile(r"The task '(.*)' may involve the following objects:\Z", re.S)


@dataclass(frozen=True)
class ObjectList:
    names: tuple[str, ...]

    def __post_init__(self):
        names = normalize_names(self.names)
        object.__setattr__(self, "names", names)

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    def __contains__(self, item):
        return item in self.names

    def __getitem__(self, i):
        return self.names[i]


def normalize_names(names: Iterable[str]) -> tuple[str, ...]:
    """Trim, lowercase and de-duplicate, keeping first occurrences."""
    seen: dict[str, None] = {}
    for n in names:
        n = " ".join(n.split()).lower()
        if n and n not in seen:
            seen[n] = None
    return tuple(seen)


@dataclass(frozen=True)
class ProposalPrompt:
    examples: tuple[tuple[str, tuple[str, ...]], ...]
    template: str = DEFAULT_TEMPLATE
    version: int = 1

    def __post_init__(self):
        if self.template.count("{instruction}") != 1:
            raise InvalidArgumentError("proposal template needs exactly one {instruction} slot")

    @classmethod
    def from_file(cls, path) -> "ProposalPrompt":
        return cls._from_data(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    @lru_cache(maxsize=None)
    def default(cls) -> "ProposalPrompt":
        raw = resources.files("nlmap.data").joinpath("proposal_prompt.json").read_text(encoding="utf-8")
        return cls._from_data(json.loads(raw))

    @classmethod
    def _from_data(cls, data) -> "ProposalPrompt":
        examples = tuple((e["instruction"], tuple(e["objects"])) for e in data["examples"])
        return cls(examples, data.get("template", DEFAULT_TEMPLATE), data.get("version", 1))


def format_completion(objects: Sequence[str]) -> str:
    return ", ".join(objects) + "."


def render_proposal_prompt(instruction: str, prompt: ProposalPrompt) -> str:
    if not instruction or not instruction.strip():
        raise InvalidArgumentError("instruction must be non-empty")
    lines = [prompt.template.format(instruction=ins) + format_completion(objs) for ins, objs in prompt.examples]
    lines.append(prompt.template.format(instruction=instruction.strip()))
    return "\n".join(lines)


def instruction_from_prompt(prompt: str) -> str | None:
    """Recover the instruction from the final frame of a proposal prompt."""
    last = prompt.rsplit("\n", 1)[-1]
    m = _FRAME_RE.match(last)
    return m.group(1) if m else None


def parse_proposal(completion: str) -> ObjectList:
    line = completion.split("\n", 1)[0].strip()
    if line.endswith("."):
        line = line[:-1]
    names = ObjectList(tuple(line.split(",")))
    if not names:
        raise EmptyProposalError(f"no object names in completion {completion!r}")
    return names


def propose_objects(backend, instruction: str, prompt: ProposalPrompt | None = None, *, allow_empty: bool = False, max_tokens: int = 64) -> ObjectList:
    if not getattr(backend, "supports_generate", False):
        raise CapabilityError(f"backend {getattr(backend, 'backend_id', backend)!r} cannot generate")
    text = render_proposal_prompt(instruction, prompt or ProposalPrompt.default())
    completion = backend.generate(text, max_tokens=max_tokens, stop=("\n",))
    try:
        return parse_proposal(completion)
    except EmptyProposalError:
        if allow_empty:
            return ObjectList(())
        raise


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class ProposalCase:
    instruction: str
    expected_objects: tuple[str, ...]
    recorded_completion: str | None = None
    family: str = ""


def load_proposal_cases(path, family: str = "") -> list[ProposalCase]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [_case(e, family) for e in data]


def _case(e: dict, family: str) -> ProposalCase:
    return ProposalCase(
        e["instruction"],
        normalize_names(e["expected_objects"]),
        e.get("recorded_completion"),
        e.get("family", family),
    )


def load_proposal_suite(name: str) -> list[ProposalCase]:
    """Load one of the bundled evaluation families by name."""
    raw = resources.files("nlmap.data").joinpath(f"proposal_{name}.json").read_text(encoding="utf-8")
    return [_case(e, name) for e in json.loads(raw)]


PROPOSAL_FAMILIES = ("implication", "crowdsourced", "fine_grained", "granularity")


def proposal_success(expected: Iterable[str], proposed: Iterable[str]) -> bool:
    """Success means every expected object was proposed."""
    return set(normalize_names(expected)) <= set(normalize_names(proposed))


def grade_proposals(backend, cases: Sequence[ProposalCase], prompt: ProposalPrompt | None = None) -> dict:
    results = []
    for case in cases:
        try:
            proposed = propose_objects(backend, case.instruction, prompt).names
            err = None
        except EmptyProposalError as exc:
            proposed, err = (), str(exc)
        results.append({
            "instruction": case.instruction,
            "proposed": list(proposed),
            "expected": list(case.expected_objects),
            "success": proposal_success(case.expected_objects, proposed),
            "error": err,
        })
    n = len(results)
    return {"trials": n, "success_rate": (sum(r["success"] for r in results) / n) if n else 0.0, "results": results}
