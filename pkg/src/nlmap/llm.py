"""LLM backends: scripted test double and the remote JSON client."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

from .errors import CapabilityError, SchemaError, ScriptMissError

MATCH_LOGPROB = 0.0
MISS_LOGPROB = -10.0


@runtime_checkable
class LlmBackend(Protocol):
    backend_id: str
    supports_generate: bool
    supports_score: bool

    def generate(self, prompt: str, *, max_tokens: int = 64, stop: Sequence[str] = ("\n",)) -> str: ...

    def score(self, prompt: str, continuations: Sequence[str]) -> list[float]: ...


@dataclass(frozen=True)
class PlanScript:
    """Scripted planning behaviour for one instruction.

    The backend follows ``steps`` when every name in ``required`` is listed
    as available in the prompt, and answers "done" immediately otherwise.
    """

    required: tuple[str, ...]
    steps: tuple[str, ...]


@dataclass
class ScriptedBackend:
    """Deterministic table-driven LLM.

    ``proposals`` maps an instruction to the completion returned for a
    proposal prompt; ``plan_completions`` does the same for generative
    planning prompts; ``plans`` drives option scoring.
    """

    proposals: Mapping[str, str] = field(default_factory=dict)
    plans: Mapping[str, PlanScript] = field(default_factory=dict)
    plan_completions: Mapping[str, str] = field(default_factory=dict)
    strict: bool = True
    backend_id: str = "scripted"
    supports_generate: bool = True
    supports_score: bool = True

    def _miss(self, what: str, key: str | None) -> str:
        if self.strict:
            raise ScriptMissError(f"no scripted {what} for {key!r}")
        return ""

    def generate(self, prompt: str, *, max_tokens: int = 64, stop: Sequence[str] = ("\n",)) -> str:
        from .planner import parse_planning_query
        from .proposal import instruction_from_prompt

        instr = instruction_from_prompt(prompt)
        if instr is not None:
            if instr in self.proposals:
                return self.proposals[instr]
            return self._miss("proposal", instr)
        query = parse_planning_query(prompt)
        if query is not None and query.instruction in self.plan_completions:
            return self.plan_completions[query.instruction]
        return self._miss("completion", query.instruction if query else None)

    def next_step(self, instruction: str, available: Sequence[str], history: Sequence[str]) -> str:
        script = self.plans.get(instruction)
        if script is None:
            if self.strict:
                raise ScriptMissError(f"no scripted plan for {instruction!r}")
            return "done"
        if not set(script.required) <= set(available):
            return "done"
        n = len(history)
        return script.steps[n] if n < len(script.steps) else "done"

    def score(self, prompt: str, continuations: Sequence[str]) -> list[float]:
        from .planner import parse_planning_query

        query = parse_planning_query(prompt)
        if query is None:
            raise SchemaError("scripted backend can only score planning prompts")
        want = self.next_step(query.instruction, query.available, query.history)
        return [MATCH_LOGPROB if c == want else MISS_LOGPROB for c in continuations]

    @classmethod
    def from_records(cls, records: Sequence[Mapping], *, strict: bool = True) -> "ScriptedBackend":
        """Build from fixture records carrying ``instruction`` plus any of
        ``recorded_completion``, ``plan`` ({required, steps}), ``plan_completion``."""
        proposals, plans, completions = {}, {}, {}
        for r in records:
            ins = r["instruction"]
            if r.get("recorded_completion") is not None:
                proposals[ins] = r["recorded_completion"]
            if r.get("plan") is not None:
                p = r["plan"]
                plans[ins] = PlanScript(tuple(p["required"]), tuple(p["steps"]))
            if r.get("plan_completion") is not None:
                completions[ins] = r["plan_completion"]
        return cls(proposals, plans, completions, strict=strict)

    @classmethod
    def echo(cls, proposal_prompt=None, planning_prompt=None) -> "ScriptedBackend":
        """Replays each few-shot example's own recorded completion."""
        from .planner import PlanningPrompt
        from .proposal import ProposalPrompt, format_completion

        proposal_prompt = proposal_prompt or ProposalPrompt.default()
        planning_prompt = planning_prompt or PlanningPrompt.default()
        proposals = {ins: format_completion(objs) for ins, objs in proposal_prompt.examples}
        # the rendered prompt already ends with "1. "
        completions = {ex.instruction: ex.completion.removeprefix("1. ") for ex in planning_prompt.examples}
        return cls(proposals, {}, completions, backend_id="echo")

    @classmethod
    def from_file(cls, path, *, strict: bool = True) -> "ScriptedBackend":
        return cls.from_records(json.loads(Path(path).read_text(encoding="utf-8")), strict=strict)


class RemoteLlmBackend:
    """Client for ``POST /generate`` and ``POST /score``."""

    def __init__(self, base_url: str, *, timeout: float = 30.0, max_in_flight: int = 4, retries: int = 2, backend_id: str = "remote"):
        from ._http import JsonClient

        self.backend_id = backend_id
        self.supports_generate = True
        self.supports_score = True
        self._client = JsonClient(base_url, timeout=timeout, max_in_flight=max_in_flight, retries=retries)

    def generate(self, prompt: str, *, max_tokens: int = 64, stop: Sequence[str] = ("\n",)) -> str:
        reply = self._client.post("/generate", {"prompt": prompt, "max_tokens": max_tokens, "stop": list(stop)})
        try:
            text = reply["text"]
        except (KeyError, TypeError):
            raise SchemaError("generate reply lacks 'text'") from None
        if not isinstance(text, str):
            raise SchemaError("generate reply 'text' is not a string")
        return text

    def score(self, prompt: str, continuations: Sequence[str]) -> list[float]:
        reply = self._client.post("/score", {"prompt": prompt, "continuations": list(continuations)})
        try:
            vals = [float(v) for v in reply["log_probs"]]
        except (KeyError, TypeError, ValueError):
            raise SchemaError("score reply lacks numeric 'log_probs'") from None
        if len(vals) != len(continuations):
            raise SchemaError(f"score reply has {len(vals)} values for {len(continuations)} continuations")
        return vals


def require(backend, capability: str) -> None:
    if not getattr(backend, f"supports_{capability}", False):
        raise CapabilityError(f"backend {getattr(backend, 'backend_id', backend)!r} cannot {capability}")
