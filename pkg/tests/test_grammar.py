"""Command grammar and dialog tests on the apartment scenario.

Round-trip checks compare the task steps decoded from a parse against the
ground truth recorded at generation time; entity expectations come from
reading the scenario file, not from the code under test.
"""

import json

import pytest

from homebot import DATA_DIR
from homebot.dialog import (
    BadTaskSchema,
    Complete,
    DialogFailed,
    EmptyCategory,
    GoalDirective,
    NextQuestion,
    Pronoun,
    Resolved,
    SkillDirective,
    TaskStep,
    UnknownTaskType,
    Unresolved,
    UnresolvedSlot,
    clarify,
    compile_steps,
    load_tasks,
    match_entity,
    mentions_from_tree,
    open_session,
    register_dialog_skills,
    resolve_coreferences,
    steps_from_tree,
    validate_grammar_tasks,
)
from homebot.grammar import (
    EmptyVocabulary,
    GrammarSyntaxError,
    LeftRecursion,
    MissingRoot,
    NoParse,
    UndefinedNonterminal,
    generate,
    load_grammar,
    parse,
    vocabulary,
)
from homebot.kb import KnowledgeBase
from homebot.planning import parse_goal
from homebot.runtime import Runtime
from homebot.skill_library import register_all
from homebot.skills import DONE, Failed, SkillGoal, Succeeded
from homebot.world import load_scenario

APARTMENT = DATA_DIR / "scenarios" / "apartment.json"

ROOMS = ["living_room", "kitchen", "hallway", "bedroom", "pantry", "dining_room"]
OBJECTS = ["coke", "sprite", "apple", "book", "rolling_chair", "table", "ball"]
CATEGORIES = ["drink", "snack", "furniture", "toy"]
PEOPLE = ["alice", "bob"]


@pytest.fixture(scope="module")
def kb():
    kb = KnowledgeBase()
    load_scenario(APARTMENT, kb=kb)
    return kb


@pytest.fixture(scope="module")
def grammar():
    return load_grammar((DATA_DIR / "grammar.txt").read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def tasks():
    return load_tasks(DATA_DIR / "tasks.json")


def named(kb, name):
    eid = kb.entity_named(name)
    assert eid is not None, name
    return eid


def decoded(grammar, kb, tasks, sentence):
    tree = parse(grammar, kb, sentence)
    steps = steps_from_tree(tree, tasks)
    resolve_coreferences(steps, mentions_from_tree(tree), kb, tasks)
    return steps


# -- loading -------------------------------------------------------------------


def test_load_rejects_malformed_grammars():
    with pytest.raises(MissingRoot):
        load_grammar("$cmd = hello")
    with pytest.raises(UndefinedNonterminal):
        load_grammar("$main = $nope")
    with pytest.raises(LeftRecursion):
        load_grammar("$main = $main again | stop")
    with pytest.raises(GrammarSyntaxError) as err:
        load_grammar("# fine\n$main = {widget}")
    assert err.value.line == 2
    with pytest.raises(GrammarSyntaxError):
        load_grammar("$main = a | | b")
    with pytest.raises(GrammarSyntaxError):
        load_grammar("main = hello")
    with pytest.raises(GrammarSyntaxError):
        load_grammar("$main = Hello")


def test_duplicate_production_lines_merge_in_order():
    g = load_grammar("$main = one\n$main = two | three")
    words = [alt[0].value for alt in g.productions["main"]]
    assert words == ["one", "two", "three"]


def test_vocabulary_reflects_scenario_entities(kb):
    def names(kind):
        return [" ".join(tokens) for _, tokens in vocabulary(kb, kind)]

    assert names("location") == [r.replace("_", " ") for r in ROOMS]
    assert names("object") == [o.replace("_", " ") for o in OBJECTS]
    assert names("person") == PEOPLE
    assert names("category") == CATEGORIES


# -- generation ----------------------------------------------------------------


def test_generation_is_deterministic_per_seed(grammar, kb):
    first, _ = generate(grammar, kb, 7)
    second, _ = generate(grammar, kb, 7)
    assert first == second
    sentences = {generate(grammar, kb, seed)[0] for seed in range(20)}
    assert len(sentences) > 5


def test_generation_reports_missing_fillers():
    empty = KnowledgeBase()
    load_scenario(
        {"grid": {"width": 5, "height": 5}, "rooms": {"room_a": [0, 0, 4, 4]}},
        kb=empty,
    )
    g = load_grammar("$main = find {person}")
    with pytest.raises(EmptyVocabulary) as err:
        generate(g, empty, 0)
    assert err.value.kind == "person"


# -- parsing -------------------------------------------------------------------


def test_parse_decodes_simple_command(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "go to the kitchen")
    assert steps == [
        TaskStep("navigate_to", {"destination": Resolved(named(kb, "kitchen"))})
    ]


def test_parse_matches_multiword_names(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "go to the living room")
    assert steps[0].slots["destination"] == Resolved(named(kb, "living_room"))


def test_parse_ignores_case_and_punctuation(grammar, kb, tasks):
    assert decoded(grammar, kb, tasks, "Go to the Kitchen!") == decoded(
        grammar, kb, tasks, "go to the kitchen"
    )


def test_parse_rejects_gibberish(grammar, kb):
    with pytest.raises(NoParse):
        parse(grammar, kb, "please polish the moon")


def test_unfilled_slots_stay_open_for_clarification(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "fetch something")
    assert steps == [TaskStep("fetch", {"object": Unresolved("object")})]


# -- coreference ---------------------------------------------------------------


def test_pronoun_binds_to_nearest_preceding_mention(grammar, kb, tasks):
    steps = decoded(
        grammar, kb, tasks, "grab the coke and bring it to the dining room"
    )
    assert steps == [
        TaskStep("fetch", {"object": Resolved(named(kb, "coke"))}),
        TaskStep(
            "deliver",
            {
                "object": Resolved(named(kb, "coke")),
                "destination": Resolved(named(kb, "dining_room")),
            },
        ),
    ]


def test_pronoun_skips_mentions_of_the_wrong_kind(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "go to the kitchen and bring it to the pantry")
    assert steps[1].slots["object"] == Unresolved("object")

    steps = decoded(grammar, kb, tasks, "find alice and follow her")
    assert steps[1].slots["target"] == Resolved(named(kb, "alice"))


def test_resolution_prefers_the_latest_matching_mention(kb, tasks):
    steps = [
        TaskStep(
            "deliver",
            {
                "object": Pronoun("it", 9),
                "destination": Resolved(named(kb, "pantry")),
            },
        )
    ]
    mentions = [
        (2, named(kb, "apple")),
        (5, named(kb, "coke")),
        (7, named(kb, "kitchen")),
        (12, named(kb, "sprite")),
    ]
    resolve_coreferences(steps, mentions, kb, tasks)
    assert steps[0].slots["object"] == Resolved(named(kb, "coke"))


def test_pronoun_without_antecedent_stays_open(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "bring it to the bedroom")
    assert steps[0].slots["object"] == Unresolved("object")


# -- round trip ----------------------------------------------------------------


def test_generated_sentences_parse_back_to_the_same_steps(grammar, kb, tasks):
    for seed in range(60):
        sentence, tree = generate(grammar, kb, seed)
        truth = steps_from_tree(tree, tasks)
        resolve_coreferences(truth, mentions_from_tree(tree), kb, tasks)
        assert decoded(grammar, kb, tasks, sentence) == truth, sentence


# -- clarification -------------------------------------------------------------


def test_clarify_fills_missing_slots_by_asking(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "fetch something")
    session = open_session(steps, tasks)
    opening = clarify(session, kb, tasks)
    assert opening == NextQuestion("which object should i fetch?")
    result = clarify(session, kb, tasks, answer="the coke please")
    assert result == Complete(steps)
    assert steps[0].slots["object"] == Resolved(named(kb, "coke"))
    assert session.retries_left == 3


def test_clarify_repeats_question_and_gives_up_after_three_misses(
    grammar, kb, tasks
):
    steps = decoded(grammar, kb, tasks, "fetch something")
    session = open_session(steps, tasks)
    question = clarify(session, kb, tasks)
    for answer in ("no idea", "you pick"):
        assert clarify(session, kb, tasks, answer=answer) == question
    assert clarify(session, kb, tasks, answer="whatever") == DialogFailed(
        "too many unrecognized answers"
    )


def test_clarify_walks_every_open_slot(kb, tasks):
    steps = [
        TaskStep(
            "deliver",
            {"object": Unresolved("object"), "destination": Unresolved("location")},
        )
    ]
    session = open_session(steps, tasks)
    assert clarify(session, kb, tasks) == NextQuestion(
        "which object should i deliver?"
    )
    assert clarify(session, kb, tasks, answer="the apple") == NextQuestion(
        "where should i deliver?"
    )
    assert isinstance(clarify(session, kb, tasks, answer="the bedroom"), Complete)
    assert steps[0].slots == {
        "object": Resolved(named(kb, "apple")),
        "destination": Resolved(named(kb, "bedroom")),
    }


def test_answers_match_leftmost_longest_entity_name(kb):
    assert match_entity(kb, "location", "put it in the living room") == named(
        kb, "living_room"
    )
    assert match_entity(kb, "object", "the coke not the sprite") == named(kb, "coke")
    assert match_entity(kb, "object", "nothing here") is None


# -- compilation ---------------------------------------------------------------


def test_compile_builds_skill_directives(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "go to the kitchen")
    assert compile_steps(steps, kb, tasks) == [
        SkillDirective((SkillGoal("navigate_to", {"destination": "kitchen"}),))
    ]
    steps = decoded(grammar, kb, tasks, "greet alice")
    assert compile_steps(steps, kb, tasks) == [
        SkillDirective((SkillGoal("speak", {"text": "hello alice"}),))
    ]


def test_compile_builds_goal_directives(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "fetch the coke")
    assert compile_steps(steps, kb, tasks) == [
        GoalDirective(parse_goal("holding(robot,coke)"))
    ]


def test_compile_picks_the_first_instance_of_a_category(grammar, kb, tasks):
    steps = decoded(grammar, kb, tasks, "bring me a drink")
    assert compile_steps(steps, kb, tasks) == [
        GoalDirective(parse_goal("holding(robot,coke)"))
    ]

    scenario = json.loads(APARTMENT.read_text(encoding="utf-8"))
    scenario["concepts"].append(["tool", "object"])
    bare = KnowledgeBase()
    load_scenario(scenario, kb=bare)
    steps = decoded(grammar, bare, tasks, "bring me a tool")
    with pytest.raises(EmptyCategory):
        compile_steps(steps, bare, tasks)


def test_compile_rejects_unknown_or_open_steps(kb, tasks):
    with pytest.raises(UnknownTaskType):
        compile_steps([TaskStep("juggle", {})], kb, tasks)
    with pytest.raises(UnresolvedSlot):
        compile_steps(
            [TaskStep("fetch", {"object": Unresolved("object")})], kb, tasks
        )


def test_load_tasks_rejects_bad_schemas(tasks):
    good = json.loads((DATA_DIR / "tasks.json").read_text(encoding="utf-8"))

    def broken(mutate):
        data = json.loads(json.dumps(good))
        mutate(data["tasks"])
        with pytest.raises(BadTaskSchema):
            load_tasks(data)

    broken(lambda t: t["fetch"]["slots"].append(["thing", "gadget"]))
    broken(lambda t: t["deliver"]["slots"].append(["object", "object"]))
    broken(lambda t: t["fetch"].pop("verb"))
    broken(lambda t: t["fetch"]["directive"].update(kind="magic"))
    broken(lambda t: t["fetch"]["directive"].update(goal="holding(robot,$widget)"))
    broken(lambda t: t["fetch"]["directive"].update(goal="holding(robot,$object.instance)"))
    broken(lambda t: t["fetch"]["directive"].update(goal="holding robot coke"))
    broken(lambda t: t["greet"]["directive"]["skills"].clear())


def test_shipped_grammar_and_tasks_agree(grammar, tasks):
    assert validate_grammar_tasks(grammar, tasks) == []


def test_validation_flags_grammar_task_mismatches(grammar, tasks):
    extra = dict(tasks)
    extra["juggle"] = tasks["fetch"]
    assert "task juggle has no grammar production" in validate_grammar_tasks(
        grammar, extra
    )

    nested = load_grammar(
        "$main = $fetch\n$fetch = fetch the {object} $greet\n$greet = hi {person}"
    )
    defects = validate_grammar_tasks(nested, tasks)
    assert any("embeds task greet" in d for d in defects)

    lopsided = load_grammar("$main = $fetch\n$fetch = fetch the {location}")
    defects = validate_grammar_tasks(lopsided, tasks)
    assert any("no slot to fill" in d for d in defects)


# -- the dialog skill ----------------------------------------------------------


def make_runtime():
    kb = KnowledgeBase()
    world = load_scenario(APARTMENT, kb=kb)
    rt = Runtime(world, kb=kb)
    register_all(rt.registry)
    return rt


def dialog_events(rt):
    return [
        (e["speaker"], e["text"]) for e in rt.event_log if e["kind"] == "dialog"
    ]


def test_command_dialog_skill_converses_and_compiles(grammar, tasks):
    rt = make_runtime()
    register_dialog_skills(rt.registry, grammar, tasks)
    handle = rt.dispatch(SkillGoal("command_dialog", {}))
    rt.tick()
    rt.tick()
    assert dialog_events(rt) == [("robot", "how can i help?")]

    rt.post_operator_text("fetch something")
    rt.tick()
    rt.tick()
    assert dialog_events(rt)[-1] == ("robot", "which object should i fetch?")

    rt.post_operator_text("the coke")
    rt.tick()
    rt.tick()
    assert handle.state == DONE
    assert isinstance(rt.invocations[handle.id].outcome, Succeeded)

    compiled = rt.dispatch(SkillGoal("compile_command", {}))
    rt.tick()
    rt.tick()
    assert isinstance(rt.invocations[compiled.id].outcome, Succeeded)
    assert rt.blackboard["directives"] == [
        GoalDirective(parse_goal("holding(robot,coke)"))
    ]


def test_command_dialog_skill_gives_up_after_three_bad_parses(grammar, tasks):
    rt = make_runtime()
    register_dialog_skills(rt.registry, grammar, tasks)
    handle = rt.dispatch(SkillGoal("command_dialog", {}))
    rt.tick()
    rt.tick()
    for _ in range(3):
        rt.post_operator_text("gleep glorp")
        rt.tick()
        rt.tick()
    assert handle.state == DONE
    assert rt.invocations[handle.id].outcome == Failed("dialog failed")
    rephrases = [t for _, t in dialog_events(rt) if "rephrase" in t]
    assert len(rephrases) == 2
