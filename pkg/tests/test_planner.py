import numpy as np
import pytest

from nlmap.core import EmbeddingVector
from nlmap.embedding import MockProviderSpec, MockVLM
from nlmap.errors import InvalidArgumentError, UnboundOptionError
from nlmap.llm import PlanScript, ScriptedBackend
from nlmap.planner import (
    DONE,
    DetectedObject,
    Option,
    PlannerState,
    PlanningPrompt,
    Skill,
    SkillLibrary,
    TemplateSet,
    bind_options,
    bind_policy,
    generate_options,
    parse_plan,
    parse_planning_query,
    plan_step,
    plan_with_objects,
    render_planning_prompt,
    softmax,
)
from oracles import oracle_bind


class TableProvider:
    """Text provider backed by a fixed label -> vector table."""

    provider_id = "table"
    supports_text = True
    supports_region = False

    def __init__(self, table):
        self.table = table
        self.dimension = len(next(iter(table.values())))

    def embed_texts(self, texts):
        return [EmbeddingVector(self.table[t], "table", normalize=True) for t in texts]


def test_generate_options_order():
    opts = generate_options([DetectedObject("apple", (1.0, 2.0, 0.0)), DetectedObject("human")], TemplateSet.default())
    assert [o.label for o in opts] == [
        "find the apple", "pick up the apple", "put down the apple",
        "find the human", "pick up the human", "put down the human",
        DONE,
    ]
    assert opts[0].target_position == (1.0, 2.0, 0.0) and opts[1].target_position is None
    assert opts[-1].kind == "terminal"


def test_generate_options_empty_has_done():
    assert [o.label for o in generate_options([], TemplateSet.default())] == [DONE]


def test_template_validation():
    with pytest.raises(InvalidArgumentError):
        TemplateSet((("grab", "pick"),))
    with pytest.raises(InvalidArgumentError):
        TemplateSet((("stop {}", "terminal"),))


def test_library_validation(vlm):
    p = vlm.text_provider()
    with pytest.raises(InvalidArgumentError):
        SkillLibrary([Skill("a", "a", "pick")], p)
    with pytest.raises(InvalidArgumentError):
        SkillLibrary([Skill("done", "done", "terminal"), Skill("done", "x", "pick")], p)
    with pytest.raises(InvalidArgumentError):
        Skill("x", "x", "fly")


def test_tin_of_coke_binds_to_coke_can():
    spec = MockProviderSpec(confusion_pairs=(("pick up the coke can", "pick up the tin of coke", 0.9),))
    provider = MockVLM(spec).text_provider()
    lib = SkillLibrary.for_objects(["coke can", "pepsi can", "apple", "sponge"], provider)
    pid, sim = bind_policy("pick up the tin of coke", lib, provider)
    assert pid == "pick:coke can"
    assert sim == pytest.approx(0.9, abs=1e-6)


def test_unrelated_label_is_dropped(vlm):
    provider = vlm.text_provider()
    lib = SkillLibrary.for_objects(["apple"], provider)
    with pytest.raises(UnboundOptionError):
        bind_policy("pick up the unicorn", lib, provider)
    opts = generate_options([DetectedObject("unicorn"), DetectedObject("apple")], TemplateSet.default())
    bound, dropped = bind_options(opts, lib, provider)
    assert dropped == ["pick up the unicorn", "put down the unicorn"]
    by_label = {o.label: o.bound_policy for o in bound}
    assert by_label["find the unicorn"] == "navigate"
    assert by_label["pick up the apple"] == "pick:apple"
    assert by_label[DONE] == DONE


def test_bind_matches_argmax_oracle():
    rng = np.random.default_rng(0)
    for case in range(1000):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(1, 12))
        table = {f"skill {i}": rng.standard_normal(d) for i in range(n)}
        if rng.random() < 0.3 and n > 1:
            table["skill 1"] = table["skill 0"]  # exact tie
        table["done"] = rng.standard_normal(d)
        table["query"] = rng.standard_normal(d)
        provider = TableProvider(table)
        skills = [Skill(f"p{rng.integers(1000):03d}-{i}", f"skill {i}", "pick") for i in range(n)] + [Skill("done", "done", "terminal")]
        lib = SkillLibrary(skills, provider)
        q = provider.embed_texts(["query"])[0].values
        tau = float(rng.uniform(-1, 0.5))
        want = oracle_bind(q, lib.description_vectors, [s.policy_id for s in lib.skills], tau)
        if want is None:
            with pytest.raises(UnboundOptionError):
                bind_policy("query", lib, provider, tau)
        else:
            pid, sim = bind_policy("query", lib, provider, tau)
            assert pid == want[0]
            assert sim == pytest.approx(want[1], abs=1e-12)


def test_render_and_parse_query():
    fs = PlanningPrompt("HEADER", ())
    text = render_planning_prompt("Bring me the apple", ["apple", "human"], ["find the apple"], fs)
    assert text == "HEADER\nHuman: Bring me the apple\nAvailable objects are: apple, human.\nRobot: 1. find the apple\n2. "
    q = parse_planning_query(text)
    assert q.instruction == "Bring me the apple"
    assert q.available == ("apple", "human")
    assert q.history == ("find the apple",)


def test_parse_query_with_default_exemplars():
    text = render_planning_prompt("Throw away the apple", ["apple", "trash can"])
    q = parse_planning_query(text)
    assert q.available == ("apple", "trash can") and q.history == ()
    assert parse_planning_query("no human here") is None


def test_parse_plan():
    assert parse_plan("pick up the snickers\n2. done.\n\nHuman: next") == ["pick up the snickers", "done"]
    assert parse_plan("1. find the apple\n2. done\n3. find the mug") == ["find the apple", "done"]


def test_echo_reproduces_exemplar_plans():
    fs = PlanningPrompt.default()
    assert len(fs.examples) >= 1
    llm = ScriptedBackend.echo(planning_prompt=fs)
    for ex in fs.examples:
        completion = llm.generate(render_planning_prompt(ex.instruction, ex.available_objects, (), fs))
        assert tuple(parse_plan(completion)) == ex.steps


def test_softmax():
    s = softmax([0.0, -10.0, -10.0])
    assert s.sum() == pytest.approx(1.0)
    assert s[0] > 0.999
    assert np.allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])


def _lib(vlm, labels=("apple", "human", "trash can")):
    return SkillLibrary.for_objects(list(labels), vlm.text_provider())


def test_plan_step_tie_breaks_by_label(vlm):
    class Flat:
        def score(self, prompt, conts):
            return [0.0] * len(conts)

    opts = [Option("find the b", "navigate"), Option("find the a", "navigate"), Option(DONE, "terminal")]
    state = PlannerState("x", (DetectedObject("a"), DetectedObject("b")))
    choice, records = plan_step(state, opts, Flat(), None)
    assert choice.label == DONE  # "done" < "find the a"
    assert all(r.q_combined == pytest.approx(1 / 3) for r in records)


def test_plan_step_requires_done():
    with pytest.raises(InvalidArgumentError):
        plan_step(PlannerState("x", ()), [Option("find the a", "navigate")], ScriptedBackend(), None)


def test_positive_and_negative(vlm):
    llm = ScriptedBackend(plans={"Throw away the apple": PlanScript(("apple", "trash can"), ("find the apple", "pick up the apple", "find the trash can", "put down the apple", "done"))})
    lib = _lib(vlm)
    pos = plan_with_objects("Throw away the apple", [DetectedObject("apple"), DetectedObject("trash can")], llm, lib, vlm.text_provider())
    assert pos.labels == ["find the apple", "pick up the apple", "find the trash can", "put down the apple", DONE]
    assert pos.outcome == "completed"
    neg = plan_with_objects("Throw away the apple", [DetectedObject("trash can")], llm, lib, vlm.text_provider())
    assert neg.labels == [DONE] and neg.outcome == "infeasible"


def test_affordance_can_veto(vlm):
    llm = ScriptedBackend(plans={"Hold the apple": PlanScript(("apple",), ("pick up the apple",))})

    def aff(world, opt):
        return 0.0 if opt.kind == "pick" else 1.0

    plan = plan_with_objects("Hold the apple", [DetectedObject("apple")], llm, _lib(vlm), vlm.text_provider(), affordance=aff)
    assert plan.labels == [DONE]
    rec = plan.steps[0]
    assert rec.q_affordance == 1.0


def test_step_limit(vlm):
    llm = ScriptedBackend(plans={"Loop": PlanScript(("apple",), ("find the apple",) * 50)})
    plan = plan_with_objects("Loop", [DetectedObject("apple")], llm, _lib(vlm), vlm.text_provider(), max_steps=3)
    assert plan.outcome == "step-limit" and len(plan.steps) == 3
    with pytest.raises(InvalidArgumentError):
        plan_with_objects("Loop", [], llm, _lib(vlm), vlm.text_provider(), max_steps=0)


def test_executor_threads_world(vlm):
    llm = ScriptedBackend(plans={"Hold the apple": PlanScript(("apple",), ("pick up the apple",))})
    seen = []

    def execute(world, opt):
        seen.append(opt.bound_policy)
        return world + 1, True

    plan = plan_with_objects("Hold the apple", [DetectedObject("apple")], llm, _lib(vlm), vlm.text_provider(), executor=execute, world=0)
    assert seen == ["pick:apple"] and plan.world == 1 and plan.executed == [True]
    d = plan.to_dict()
    assert d["outcome"] == "completed" and d["executed"] == [True]
