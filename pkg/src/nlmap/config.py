"""Single JSON config for the CLI, with NLMAP_* environment overrides.

Layout (every section and key optional)::

    {
      "fusion":    {"k": 4, "alpha": 0.5, "lambda": 4.0, "beta": 0.55, "t": 0.2, "score_floor": 0.2},
      "mock":      {"seed": 0, "dimension": 128, "true_alignment": 0.8, ...},
      "providers": {"mode": "mock", "text_url": null, "llm_url": null, "timeout": 10.0, ...},
      "planner":   {"max_steps": 20, "tau_bind": 0.5},
      "sim":       {"noise": {...}, "scene": {...}, "n_waypoints": 8, "reach": 1.0, "trials": 1, "workers": 1},
      "paths":     {"llm_script": null, "proposal_prompt": null, "planning_prompt": null}
    }

An override such as ``NLMAP_FUSION__BETA=0.6`` sets ``fusion.beta``; the
value is parsed as JSON when possible and kept as a string otherwise.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .core import FusionParams
from .embedding import MockProviderSpec
from .errors import ConfigError, NLMapError
from .sim.explore import NoiseSpec
from .sim.scene import SceneSpec

ENV_PREFIX = "NLMAP_"


@dataclass(frozen=True)
class ProviderSettings:
    mode: str = "mock"  # mock | remote
    text_url: str | None = None
    llm_url: str | None = None
    text_provider_id: str = "clip"
    timeout: float = 10.0
    max_in_flight: int = 4
    retries: int = 2

    def __post_init__(self):
        if self.mode not in ("mock", "remote"):
            raise ConfigError(f"providers.mode must be 'mock' or 'remote', got {self.mode!r}")
        if not self.timeout > 0:
            raise ConfigError("providers.timeout must be positive")
        if int(self.max_in_flight) != self.max_in_flight or self.max_in_flight < 1:
            raise ConfigError("providers.max_in_flight must be a positive integer")
        if int(self.retries) != self.retries or self.retries < 0:
            raise ConfigError("providers.retries must be a non-negative integer")


@dataclass(frozen=True)
class PlannerSettings:
    max_steps: int = 20
    tau_bind: float = 0.5

    def __post_init__(self):
        if isinstance(self.max_steps, bool) or int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError("planner.max_steps must be a positive integer")
        if not -1.0 <= self.tau_bind <= 1.0:
            raise ConfigError("planner.tau_bind must lie in [-1, 1]")


@dataclass(frozen=True)
class SimSettings:
    noise: NoiseSpec = NoiseSpec()
    scene: SceneSpec = SceneSpec()
    n_waypoints: int = 8
    reach: float = 1.0
    trials: int = 1
    workers: int = 1

    def __post_init__(self):
        for name in ("n_waypoints", "trials", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ConfigError(f"sim.{name} must be a positive integer")
        if not self.reach > 0:
            raise ConfigError("sim.reach must be positive")


@dataclass(frozen=True)
class PathSettings:
    llm_script: str | None = None
    proposal_prompt: str | None = None
    planning_prompt: str | None = None


@dataclass(frozen=True)
class Config:
    fusion: FusionParams = FusionParams()
    mock: MockProviderSpec = MockProviderSpec()
    providers: ProviderSettings = ProviderSettings()
    planner: PlannerSettings = PlannerSettings()
    sim: SimSettings = SimSettings()
    paths: PathSettings = field(default_factory=PathSettings)

    def to_dict(self) -> dict:
        scene = {f.name: getattr(self.sim.scene, f.name) for f in fields(SceneSpec)}
        scene = {k: (dict(v) if isinstance(v, Mapping) else list(v) if isinstance(v, tuple) else v) for k, v in scene.items()}
        scene["fixed"] = {k: list(v) for k, v in scene["fixed"].items()}
        return {
            "fusion": self.fusion.to_dict(),
            "mock": self.mock.to_dict(),
            "providers": _plain(self.providers),
            "planner": _plain(self.planner),
            "sim": {
                "noise": self.sim.noise.to_dict(),
                "scene": scene,
                "n_waypoints": self.sim.n_waypoints,
                "reach": self.sim.reach,
                "trials": self.sim.trials,
                "workers": self.sim.workers,
            },
            "paths": _plain(self.paths),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Config":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(data, {f.name for f in fields(cls)}, "config")
        try:
            sim = dict(data.get("sim", {}))
            _reject_unknown(sim, {f.name for f in fields(SimSettings)}, "sim")
            if "noise" in sim:
                sim["noise"] = NoiseSpec.from_dict(sim["noise"])
            if "scene" in sim:
                sim["scene"] = SceneSpec.from_dict(sim["scene"])
            return cls(
                fusion=FusionParams.from_dict(data.get("fusion", {})),
                mock=MockProviderSpec.from_dict(data.get("mock", {})),
                providers=_section(ProviderSettings, data.get("providers", {}), "providers"),
                planner=_section(PlannerSettings, data.get("planner", {}), "planner"),
                sim=SimSettings(**sim),
                paths=_section(PathSettings, data.get("paths", {}), "paths"),
            )
        except ConfigError:
            raise
        except (NLMapError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _reject_unknown(d: Mapping, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _section(cls, d: Mapping, where: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(d, {f.name for f in fields(cls)}, where)
    return cls(**d)


def apply_env(data: Mapping, environ: Mapping[str, str] | None = None) -> dict:
    """Overlay ``NLMAP_SECTION__KEY[__SUBKEY]`` variables onto a raw config dict."""
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if len(path) < 2:
            continue
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{name} does not address a config section")
        node[path[-1]] = value
    return out


def load_config(path=None, environ: Mapping[str, str] | None = None) -> Config:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return Config.from_dict(apply_env(data, environ))
