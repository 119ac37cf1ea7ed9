import json
import math

import numpy as np
import pytest

from nlmap.embedding import MockProviderSpec, MockVLM
from nlmap.errors import InvalidArgumentError, SceneGenerationError, SchemaError
from nlmap.llm import PlanScript, ScriptedBackend
from nlmap.planner import DONE, DetectedObject, Option, PlanningPrompt, SkillLibrary, plan_with_objects
from nlmap.sim.ablation import default_methods, query_success, run_ablation
from nlmap.sim.bench import (
    BenchSuite,
    Goal,
    execution_success,
    load_protocol_suite,
    planning_success,
    run_benchmark,
    symbolic_outcome,
)
from nlmap.sim.explore import CameraModel, NoiseSpec, default_waypoints, explore
from nlmap.sim.scene import KITCHEN_LABELS, SceneSpec, SyntheticScene, absent_labels, generate_scene, pairwise_min_distance
from nlmap.sim.world import LOW_AFFORDANCE, SimRobot, WorldState, affordance_sim, execute_option

# ---------------------------------------------------------------- scenes


def test_scene_is_seeded():
    a, b = generate_scene(SceneSpec(), 3), generate_scene(SceneSpec(), 3)
    assert a == b
    assert generate_scene(SceneSpec(), 4) != a


def test_scene_spacing_and_bounds():
    spec = SceneSpec(count=25)
    for seed in range(20):
        s = generate_scene(spec, seed)
        assert len(s.objects) == 25 and len(set(s.labels)) == 25
        assert pairwise_min_distance(s) >= 2 * spec.radius_range[1]
        for o in s.objects:
            assert spec.margin <= o.position[0] <= 4 - spec.margin
            assert spec.radius_range[0] <= o.radius <= spec.radius_range[1]


def test_scene_required_exclude_fixed():
    spec = SceneSpec(count=8, required=("unicorn", "apple"), exclude=("mug",), fixed={"unicorn": (1.0, 1.0, 0.5)})
    s = generate_scene(spec, 0)
    assert s.labels[:2] == ("unicorn", "apple") and "mug" not in s.labels
    assert s.get("unicorn").position == (1.0, 1.0, 0.5)
    assert "mug" in absent_labels(s)


def test_scene_generation_errors():
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneSpec(count=1, required=("a", "b")), 0)
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneSpec(count=len(KITCHEN_LABELS) + 1), 0)
    with pytest.raises(SceneGenerationError, match="spacing"):
        generate_scene(SceneSpec(count=40, bounds=(0, 0, 1, 1), margin=0.1, max_tries=50), 0)


def test_scene_dict_round_trip():
    s = generate_scene(SceneSpec(count=5), 2)
    assert SyntheticScene.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_scene_spec_from_dict():
    spec = SceneSpec.from_dict({"count": 3, "bounds": [0, 0, 2, 2], "fixed": {"a": [1, 1, 0]}})
    assert spec.bounds == (0, 0, 2, 2) and spec.fixed == {"a": (1, 1, 0)}
    with pytest.raises(InvalidArgumentError):
        SceneSpec.from_dict({"size": 3})


# ---------------------------------------------------------------- exploration


def visible_oracle(pos, size, pose, cam):
    f = (cam.width / 2) / math.tan(math.radians(cam.hfov_deg) / 2)
    R = np.asarray(pose.rotation)
    pc = R.T @ (np.asarray(pos) - np.asarray(pose.translation))
    if pc[2] <= 0 or np.linalg.norm(np.asarray(pos) - np.asarray(pose.translation)) > cam.max_range:
        return False
    u, v = f * pc[0] / pc[2] + cam.width / 2, f * pc[1] / pc[2] + cam.height / 2
    half = size * f / pc[2] / 2
    return u - half >= 0 and v - half >= 0 and u + half <= cam.width and v + half <= cam.height


def test_noiseless_rois_match_visibility_oracle(clean_vlm):
    cam = CameraModel()
    for seed in range(5):
        scene = generate_scene(SceneSpec(), seed)
        poses = default_waypoints(scene.bounds, 8)
        ex = explore(scene, poses, NoiseSpec.noiseless(), clean_vlm, seed=seed)
        for pose, truth in zip(poses, ex.truth):
            want = [i for i, o in enumerate(scene.objects) if visible_oracle(o.position, o.radius, pose, cam)]
            assert [t.object_index for t in truth] == want
            assert not any(t.spurious for t in truth)


def test_default_waypoints_cover_scene(clean_vlm):
    for seed in range(10):
        scene = generate_scene(SceneSpec(), seed)
        ex = explore(scene, default_waypoints(scene.bounds, 8), NoiseSpec.noiseless(), clean_vlm, seed=seed)
        seen = {t.object_index for tr in ex.truth for t in tr}
        assert seen == set(range(len(scene.objects)))


def test_waypoints_face_centre():
    poses = default_waypoints((0, 0, 4, 4), 8)
    for p in poses:
        fwd = np.asarray(p.rotation)[:, 2]
        to_c = np.array([2, 2, 1]) - np.asarray(p.translation)
        assert float(fwd @ to_c) / np.linalg.norm(to_c) == pytest.approx(1.0)
    assert len(default_waypoints((0, 0, 4, 4), 12)) == 12


def test_explore_is_seeded(vlm):
    scene = generate_scene(SceneSpec(), 1)
    poses = default_waypoints(scene.bounds)
    a = explore(scene, poses, NoiseSpec(), vlm, seed=5)
    b = explore(scene, poses, NoiseSpec(), vlm, seed=5)
    assert a == b


def test_false_positives_use_distractors(vlm):
    scene = generate_scene(SceneSpec(count=3), 1)
    noise = NoiseSpec(false_positive_rate=3.0, detect_prob=0.0, depth_outlier_rate=0.0)
    ex = explore(scene, default_waypoints(scene.bounds), noise, vlm, seed=0)
    spurious = [t for tr in ex.truth for t in tr]
    assert spurious and all(t.spurious and t.label not in KITCHEN_LABELS for t in spurious)


def test_embedding_noise_override():
    vlm = MockVLM(MockProviderSpec(noise_sigma=0.5, blind_spot_rate=0.0))
    scene = generate_scene(SceneSpec(count=3), 1)
    ex = explore(scene, default_waypoints(scene.bounds), NoiseSpec(embedding_noise=0.0, false_positive_rate=0.0), vlm, seed=0)
    roi = ex.frames[0].rois[0]
    label = ex.truth[0][0].label
    assert roi.channels["clip"].values @ vlm.text_vector(label) == pytest.approx(0.8, abs=1e-9)


@pytest.mark.parametrize("bad", [{"detect_prob": 1.5}, {"position_sigma": -1}, {"depth_outlier_range": (2, 1)}, {"embedding_noise": -0.1}])
def test_noise_validation(bad):
    with pytest.raises(InvalidArgumentError):
        NoiseSpec(**bad)


def test_noise_dict_round_trip():
    n = NoiseSpec(position_sigma=0.1)
    assert NoiseSpec.from_dict(json.loads(json.dumps(n.to_dict()))) == n


def test_explore_needs_waypoints(vlm):
    with pytest.raises(InvalidArgumentError):
        explore(generate_scene(SceneSpec(count=2), 0), [], NoiseSpec(), vlm)


# ---------------------------------------------------------------- world


def _world():
    return WorldState.start({"apple": (1.0, 1.0, 0.0), "human": (3.0, 3.0, 0.0)}, (0.0, 0.0, 0.0))


def test_execute_pick_and_place():
    w = _world()
    w, ok = execute_option(w, Option("pick up the apple", "pick", "apple"))
    assert not ok and w.gripper is None and w.log[-1].startswith("fail")
    w, ok = execute_option(w, Option("find the apple", "navigate", "apple", (1.0, 1.0, 0.0)))
    assert ok and w.robot_position == (1.0, 1.0, 0.0)
    w, ok = execute_option(w, Option("pick up the apple", "pick", "apple"))
    assert ok and w.gripper == "apple"
    assert np.allclose(w.position_of("apple"), w.robot_position)
    w, _ = execute_option(w, Option("find the human", "navigate", "human", (3.0, 3.0, 0.0)))
    w, ok = execute_option(w, Option("put down the apple", "place", "apple"))
    assert ok and w.gripper is None and w.object_positions["apple"] == (3.0, 3.0, 0.0)
    w, ok = execute_option(w, Option(DONE, "terminal"))
    assert ok and w.log[-1] == "done"


def test_navigate_without_position_fails():
    w, ok = execute_option(_world(), Option("find the ghost", "navigate", "ghost"))
    assert not ok


def test_pick_uses_bound_skill_target(vlm):
    lib = SkillLibrary.for_objects(["apple"], vlm.text_provider())
    w = WorldState.start({"apple": (0.5, 0.0, 0.0)})
    opt = Option("pick up the red fruit", "pick", "red fruit", bound_policy="pick:apple")
    w2, ok = execute_option(w, opt, lib)
    assert ok and w2.gripper == "apple"
    assert affordance_sim(w, opt, lib) == 1.0
    assert affordance_sim(w, opt) == LOW_AFFORDANCE


def test_affordances():
    w = _world()
    assert affordance_sim(w, Option("find the apple", "navigate")) == 1.0
    assert affordance_sim(w, Option("put down the apple", "place", "apple")) == LOW_AFFORDANCE
    assert affordance_sim(w, Option("pick up the apple", "pick", "apple")) == LOW_AFFORDANCE
    near = WorldState.start({"apple": (0.5, 0.0, 0.0)})
    assert SimRobot().affordance(near, Option("pick up the apple", "pick", "apple")) == 1.0


def test_world_rejects_unknown_held():
    with pytest.raises(ValueError):
        WorldState((0, 0, 0), {}, gripper="apple")


# ---------------------------------------------------------------- grading


def test_symbolic_outcome():
    s = symbolic_outcome(["find the apple", "pick up the apple", "find the human", "put down the apple", "done", "find the mug"])
    assert s == {"robot": "human", "held": None, "placed": {"apple": "human"}}


def test_planning_success_rules():
    at = Goal("at", "apple", "human")
    steps = ["find the apple", "pick up the apple", "find the human", "put down the apple", DONE]
    assert planning_success(at, steps, "completed")
    assert not planning_success(at, steps[:2] + [DONE], "completed")
    assert not planning_success(at, steps, "step-limit")
    assert planning_success(Goal("infeasible"), [DONE], "infeasible")
    assert not planning_success(Goal("infeasible"), ["find the apple", DONE], "completed")
    assert planning_success(Goal("holding", "apple"), ["pick up the apple", DONE], "completed")
    assert planning_success(Goal("robot_at", target="fridge"), ["find the fridge", DONE], "completed")
    two = Goal("at", ["knife", "banana"], "table")
    assert two.objects == ("knife", "banana")
    assert not planning_success(two, ["pick up the knife", "find the table", "put down the knife", DONE], "completed")


def test_execution_success():
    truth = {"apple": (1.0, 1.0, 0.0), "human": (3.0, 3.0, 0.0)}
    w = WorldState.start({"apple": (2.8, 3.2, 0.0), "human": truth["human"]})
    assert execution_success(Goal("at", "apple", "human"), w, truth, "completed", [True])
    assert not execution_success(Goal("at", "apple", "human"), w, truth, "infeasible", [])
    assert execution_success(Goal("infeasible"), w, truth, "infeasible", [])


@pytest.mark.parametrize("bad", [{"type": "teleport"}, {"type": "at", "object": "a"}, {"type": "holding"}, {"type": "robot_at"}])
def test_goal_validation(bad):
    with pytest.raises(SchemaError):
        Goal.from_dict(bad)


def test_suite_collects_entry_errors():
    good = BenchSuite.default().tasks[0]
    data = {"name": "x", "tasks": [{"id": "broken"}, {
        "id": good.task_id, "family": good.family, "instruction": good.instruction,
        "scene": {"objects": list(good.objects)}, "proposal": good.proposal,
        "plan": {"required": list(good.plan.required), "steps": list(good.plan.steps)}, "goal": good.goal.to_dict(),
    }]}
    suite = BenchSuite.from_data(data)
    assert len(suite.tasks) == 1 and len(suite.errors) == 1 and "entry 0" in suite.errors[0]


def test_default_suite_families():
    suite = BenchSuite.default()
    assert len(suite.tasks) == 18
    assert {t.family for t in suite.tasks} == {"saycan_tasks", "novel_objects", "missing_objects"}


def test_benchmark_deterministic_across_workers():
    suite = BenchSuite.default()
    a = run_benchmark(suite, trials=1, seed=3).to_json()
    b = run_benchmark(suite, trials=1, seed=3, workers=4).to_json()
    assert a == b
    report = json.loads(a)
    missing = next(f for f in report["families"] if f["family"] == "missing_objects")
    assert missing["planning_success_rate"] == 1.0
    assert len(report["trials"]) == 18


def test_benchmark_csv():
    rep = run_benchmark(BenchSuite.default(), seed=0)
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("trial_id,task_id,family")
    assert len(lines) == 19


def test_empty_suite_rejected():
    with pytest.raises(SchemaError):
        run_benchmark(BenchSuite("e", ()))


def test_protocol_fixture_shape():
    cases = load_protocol_suite()
    assert len(cases) == 40
    for c in cases:
        assert set(c.plan.required) <= set(c.positive)
        assert not set(c.plan.required) <= set(c.negative)


# ---------------------------------------------------------------- ablation


def test_query_success():
    class R:
        def __init__(self, found, pos=None):
            self.found = found
            self.best = type("C", (), {"position": pos})() if pos else None

    assert query_success(R(False), None)
    assert not query_success(R(True, (0, 0, 0)), None)
    assert query_success(R(True, (0.3, 0.3, 0)), (0, 0))
    assert not query_success(R(True, (0.5, 0.5, 0)), (0, 0))


def test_small_ablation_shape():
    rep = run_ablation(3, seed=1)
    assert rep.scenes == 3 and rep.queries == 3 * 30
    assert set(rep.success) == {m.name for m in default_methods()}
    assert rep.to_dict() == run_ablation(3, seed=1).to_dict()


def test_spacing_in_large_room():
    spec = SceneSpec(count=20, bounds=(0, 0, 8, 8), radius_range=(0.1, 0.1))
    for seed in range(10):
        assert pairwise_min_distance(generate_scene(spec, seed)) >= 0.2


def test_peanuts_plan_hand_simulated(vlm):
    # robot starts beside the peanuts, so the exemplar plan needs no first navigation step

    ex = next(e for e in PlanningPrompt.default().examples if e.instruction == "Bring me the peanuts")
    steps = list(ex.steps[:-1])
    truth = {"peanuts": (1.0, 1.0, 0.0), "human": (3.0, 2.5, 0.0)}
    lib = SkillLibrary.for_objects(["peanuts", "human"], vlm.text_provider())
    robot = SimRobot(lib)
    llm = ScriptedBackend(plans={ex.instruction: PlanScript(("peanuts", "human"), tuple(steps))})
    detected = [DetectedObject(k, v) for k, v in truth.items()]
    plan = plan_with_objects(ex.instruction, detected, llm, lib, vlm.text_provider(),
                             affordance=robot.affordance, executor=robot.execute, world=WorldState.start(truth, (1.2, 1.0, 0.0)))
    assert plan.labels == steps + [DONE]
    assert plan.executed == [True, True, True]
    # by hand: pick at (1.2, 1.0) is in reach, navigate to the human, drop there
    assert plan.world.object_positions["peanuts"] == truth["human"]
    assert plan.world.robot_position == truth["human"] and plan.world.gripper is None


def test_affordance_step_at_reach():
    opt = Option("pick up the apple", "pick", "apple")
    for x in np.linspace(0.0, 2.0, 41):
        w = WorldState.start({"apple": (0.0, 0.0, 0.0)}, (float(x), 0.0, 0.0))
        assert affordance_sim(w, opt, reach=1.0) == (1.0 if x <= 1.0 else LOW_AFFORDANCE)
