"""Command-line entry point: explore, build, query, plan, simulate, ablation.

Exit codes: 0 ok (including infeasible plans), 1 input error, 2 object not
found, 3 transport failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import Config, load_config
from .errors import NLMapError, TransportError
from .llm import RemoteLlmBackend, ScriptedBackend
from .scene import ChannelSchema, build_map, BuildStats, heatmap, query_object, query_objects
from .store import infer_schema, load_map, read_frames, save_map, write_frames, write_heatmap_csv, write_heatmap_pgm

EXIT_OK, EXIT_INPUT, EXIT_NOT_FOUND, EXIT_TRANSPORT = 0, 1, 2, 3

log = logging.getLogger("nlmap")


def _emit(obj, args) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2 if args.pretty else None))


def _mock_vlm(cfg: Config):
    from .embedding import MockVLM

    return MockVLM(cfg.mock)


def text_provider(cfg: Config, schema: ChannelSchema | None = None):
    if cfg.providers.mode == "mock":
        return _mock_vlm(cfg).text_provider()
    from .embedding import RemoteEmbeddingProvider

    if not cfg.providers.text_url:
        raise NLMapError("providers.text_url is required in remote mode")
    pid = cfg.providers.text_provider_id
    dim = schema.dim(pid) if schema is not None and pid in schema.ids else cfg.mock.dimension
    p = cfg.providers
    return RemoteEmbeddingProvider(
        p.text_url, pid, dim, supports_region=False, timeout=p.timeout, max_in_flight=p.max_in_flight,
        retries=p.retries, scorable_channels=schema.ids if schema is not None else None,
    )


def llm_backend(cfg: Config, script: str | None = None):
    if cfg.providers.mode == "remote":
        if not cfg.providers.llm_url:
            raise NLMapError("providers.llm_url is required in remote mode")
        p = cfg.providers
        return RemoteLlmBackend(p.llm_url, timeout=p.timeout, max_in_flight=p.max_in_flight, retries=p.retries)
    path = script or cfg.paths.llm_script
    if path:
        return ScriptedBackend.from_file(path)
    raw = resources.files("nlmap.data").joinpath("plan_script.json").read_text(encoding="utf-8")
    return ScriptedBackend.from_records(json.loads(raw))


def _schema_for(cfg: Config) -> ChannelSchema:
    vlm = _mock_vlm(cfg)
    return ChannelSchema(tuple((cid, cfg.mock.dimension) for cid in vlm.channel_ids))


# ---------------------------------------------------------------- commands


def cmd_explore(args, cfg: Config) -> int:
    from dataclasses import replace

    from .sim import NoiseSpec, default_waypoints, explore, generate_scene

    spec = cfg.sim.scene
    if args.objects:
        spec = replace(spec, required=tuple(o.strip() for o in args.objects.split(",") if o.strip()))
    if args.count is not None:
        spec = replace(spec, count=args.count)
    scene = generate_scene(spec, args.seed)
    noise = NoiseSpec.noiseless() if args.noiseless else cfg.sim.noise
    vlm = _mock_vlm(cfg)
    waypoints = default_waypoints(scene.bounds, args.waypoints or cfg.sim.n_waypoints)
    frames = explore(scene, waypoints, noise, vlm, seed=args.seed).frames
    n = write_frames(frames, args.out)
    if args.scene_out:
        Path(args.scene_out).write_text(json.dumps(scene.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    _emit({"frames": n, "rois": sum(len(f.rois) for f in frames), "objects": list(scene.labels)}, args)
    return EXIT_OK


def cmd_build(args, cfg: Config) -> int:
    frames = read_frames(args.frames)
    schema = infer_schema(frames) or _schema_for(cfg)
    stats = BuildStats()
    info = {} if args.stable else {"built_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    nl_map = build_map(frames, schema, scene_id=Path(args.frames).stem, build_info=info, stats=stats)
    save_map(nl_map, args.out)
    print(f"elements: {stats.elements}")
    print(f"skipped: {stats.skipped}")
    return EXIT_OK


def _heat_bounds(nl_map, cell: float):
    if len(nl_map) == 0:
        return (0.0, 0.0, cell, cell)
    lo = nl_map.positions[:, :2].min(axis=0) - cell
    hi = nl_map.positions[:, :2].max(axis=0) + cell
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def cmd_query(args, cfg: Config) -> int:
    from .embedding import encode_text

    nl_map = load_map(args.map)
    provider = text_provider(cfg, nl_map.schema)
    result = query_object(nl_map, args.name, provider, cfg.fusion)
    out = result.to_dict()
    if args.heatmap:
        q = encode_text(provider, args.name, nl_map.schema.ids)
        grid = heatmap(nl_map, q, _heat_bounds(nl_map, args.cell), args.cell)
        pgm = Path(args.heatmap)
        write_heatmap_pgm(grid, pgm)
        write_heatmap_csv(grid, pgm.with_suffix(".csv"))
        out["heatmap"] = {"pgm": str(pgm), "csv": str(pgm.with_suffix(".csv")), "bounds": list(grid.bounds), "cell": grid.cell}
    _emit(out, args)
    return EXIT_OK if result.found else EXIT_NOT_FOUND


def cmd_plan(args, cfg: Config) -> int:
    from .planner import PlanningPrompt, SkillLibrary, run_planner
    from .proposal import ProposalPrompt, propose_objects
    from .sim.scene import KITCHEN_LABELS, SyntheticScene
    from .sim.world import SimRobot, WorldState

    nl_map = load_map(args.map)
    provider = text_provider(cfg, nl_map.schema)
    llm = llm_backend(cfg, args.script)
    labels = dict.fromkeys(KITCHEN_LABELS)
    for script in getattr(llm, "plans", {}).values():
        labels.update(dict.fromkeys(script.required))
    library = SkillLibrary.for_objects(list(labels), provider)
    proposal_prompt = ProposalPrompt.from_file(cfg.paths.proposal_prompt) if cfg.paths.proposal_prompt else None
    few_shot = PlanningPrompt.from_file(cfg.paths.planning_prompt) if cfg.paths.planning_prompt else None

    world = robot = None
    if args.execute:
        if args.scene:
            scene = SyntheticScene.from_dict(json.loads(Path(args.scene).read_text(encoding="utf-8")))
            objects = {o.label: o.position for o in scene.objects}
            xmin, ymin, xmax, ymax = scene.bounds
            start = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0, 0.0)
        else:
            names = propose_objects(llm, args.instruction, proposal_prompt, allow_empty=True).names
            found = [r for r in query_objects(nl_map, list(names), provider, cfg.fusion) if r.found]
            objects = {r.name: r.best.position for r in found}
            start = (0.0, 0.0, 0.0)
        world = WorldState.start(objects, start)
        robot = SimRobot(library, cfg.sim.reach)

    plan = run_planner(
        args.instruction, nl_map, provider, llm, library,
        affordance=robot.affordance if robot else None,
        executor=robot.execute if robot else None,
        world=world, params=cfg.fusion, proposal_prompt=proposal_prompt, few_shot=few_shot,
        max_steps=cfg.planner.max_steps, tau_bind=cfg.planner.tau_bind,
    )
    out = plan.to_dict()
    if args.execute:
        out["world"] = plan.world.to_dict()
    _emit(out, args)
    return EXIT_OK


def _bench_config(cfg: Config):
    from .sim.bench import BenchConfig

    return BenchConfig(
        mock=cfg.mock, noise=cfg.sim.noise, params=cfg.fusion, n_waypoints=cfg.sim.n_waypoints,
        max_steps=cfg.planner.max_steps, tau_bind=cfg.planner.tau_bind, reach=cfg.sim.reach, scene=cfg.sim.scene,
    )


def cmd_simulate(args, cfg: Config) -> int:
    from .sim.bench import BenchSuite, run_benchmark

    suite = BenchSuite.from_file(args.suite) if args.suite else BenchSuite.default()
    report = run_benchmark(
        suite, args.trials or cfg.sim.trials, args.seed, config=_bench_config(cfg), workers=args.workers or cfg.sim.workers,
    )
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    print(report.to_json(pretty=args.pretty))
    return EXIT_OK


def cmd_ablation(args, cfg: Config) -> int:
    from .sim.ablation import run_ablation

    report = run_ablation(
        args.scenes, args.seed, mock=cfg.mock, noise=cfg.sim.noise, params=cfg.fusion, n_waypoints=cfg.sim.n_waypoints,
    )
    _emit(report.to_dict(), args)
    return EXIT_OK


def cmd_config(args, cfg: Config) -> int:
    print(cfg.dumps())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=0, help="seed for simulated scenes and trials")
    common.add_argument("--pretty", action="store_true", help="indent JSON output")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nlmap", description="Natural-language scene maps and grounded planning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("explore", parents=[common], help="simulate exploration of a synthetic scene into frames")
    s.add_argument("--out", required=True, help="frames JSON-lines output")
    s.add_argument("--scene-out", help="write the ground-truth scene JSON here")
    s.add_argument("--objects", help="comma-separated labels that must appear")
    s.add_argument("--count", type=int, help="total object count")
    s.add_argument("--waypoints", type=int, help="number of camera waypoints")
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_explore)

    s = sub.add_parser("build", parents=[common], help="build a map file from frames")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stable", action="store_true", help="omit timestamps so output is byte-stable")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("query", parents=[common], help="look up an object by name")
    s.add_argument("--map", required=True)
    s.add_argument("--name", required=True)
    s.add_argument("--heatmap", help="PGM output path (a CSV is written next to it)")
    s.add_argument("--cell", type=float, default=0.25, help="heatmap cell size in metres")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("plan", parents=[common], help="plan an instruction against a map")
    s.add_argument("--map", required=True)
    s.add_argument("--instruction", required=True)
    s.add_argument("--script", help="scripted LLM fixture (mock mode)")
    s.add_argument("--execute", action="store_true", help="run the plan in the kinematic simulator")
    s.add_argument("--scene", help="ground-truth scene JSON for --execute")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", parents=[common], help="run a benchmark suite")
    s.add_argument("--suite", help="suite JSON (defaults to the shipped suite)")
    s.add_argument("--trials", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--csv", help="also write a flat per-trial CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ablation", parents=[common], help="query-success ablation over scoring variants")
    s.add_argument("--scenes", type=int, default=100)
    s.set_defaults(func=cmd_ablation)

    s = sub.add_parser("config", parents=[common], help="print the effective config")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (NLMapError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
