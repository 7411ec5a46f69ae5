"""Turning parsed operator commands into executable directives.

A parse tree is decoded into task steps with typed slots; pronouns are
resolved against earlier mentions; anything still missing is asked about
in a short clarification exchange; finally each step compiles to either a
fixed skill sequence or a declarative goal for the deliberative layer.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from homebot.grammar import (
    Grammar,
    Node,
    NoParse,
    WildcardTok,
    WordTok,
    WILDCARD_KINDS,
    flatten,
    parse,
    tokenize,
    vocabulary,
)
from homebot.kb import KnowledgeBase
from homebot.planning import Goal, PlanningError, parse_goal
from homebot.skills import SkillDescriptor, SkillGoal
from homebot.world import Speak

DEFAULT_RETRIES = 3

TEMPLATES = {
    "object": "which object should i {verb}?",
    "location": "where should i {verb}?",
    "person": "who should i {verb}?",
    "category": "what kind of object should i {verb}?",
}


class DialogError(Exception):
    pass


class BadTaskSchema(DialogError):
    pass


class UnknownTaskType(DialogError):
    def __init__(self, name: str):
        super().__init__(f"no task type {name!r}")
        self.name = name


class UnresolvedSlot(DialogError):
    def __init__(self, task: str, slot: str):
        super().__init__(f"slot {slot!r} of {task} is unresolved")
        self.task = task
        self.slot = slot


class EmptyCategory(DialogError):
    def __init__(self, category: str):
        super().__init__(f"no {category} is available")
        self.category = category


# -- slot states -------------------------------------------------------------


@dataclass(frozen=True)
class Resolved:
    entity: int


@dataclass(frozen=True)
class Pronoun:
    word: str
    index: int  # token position in the original sentence


@dataclass(frozen=True)
class Unresolved:
    kind: str


@dataclass
class TaskStep:
    task_type: str
    slots: dict[str, object]


# -- task schema -------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    name: str
    slots: tuple[tuple[str, str], ...]  # (slot name, wildcard kind)
    verb: str
    directive: dict

    def slot_kind(self, slot: str) -> str:
        return dict(self.slots)[slot]


_REF_RE = re.compile(r"\$([a-z][a-z0-9_]*)(\.instance)?")


def load_tasks(source: Union[Path, str, dict]) -> dict[str, TaskSpec]:
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    raw = data.get("tasks")
    if not isinstance(raw, dict) or not raw:
        raise BadTaskSchema("expected a nonempty `tasks` table")
    tasks: dict[str, TaskSpec] = {}
    for name, cfg in raw.items():
        slots = []
        for pair in cfg.get("slots", []):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise BadTaskSchema(f"{name}: slots must be [name, kind] pairs")
            slot, kind = pair
            if kind not in WILDCARD_KINDS:
                raise BadTaskSchema(f"{name}: unknown slot kind {kind!r}")
            if any(slot == s for s, _ in slots):
                raise BadTaskSchema(f"{name}: duplicate slot {slot!r}")
            slots.append((slot, kind))
        verb = cfg.get("verb")
        if not isinstance(verb, str) or not verb:
            raise BadTaskSchema(f"{name}: missing verb")
        directive = cfg.get("directive")
        if not isinstance(directive, dict):
            raise BadTaskSchema(f"{name}: missing directive")
        spec = TaskSpec(name, tuple(slots), verb, directive)
        _check_directive(spec)
        tasks[name] = spec
    return tasks


def _check_refs(spec: TaskSpec, text: str) -> str:
    """Validate $slot references in a template; returns it with dummy names
    substituted so goal syntax can be checked up front."""
    kinds = dict(spec.slots)

    def repl(m: re.Match) -> str:
        slot, instance = m.group(1), m.group(2)
        if slot not in kinds:
            raise BadTaskSchema(f"{spec.name}: no slot {slot!r} for ${slot}")
        if instance and kinds[slot] != "category":
            raise BadTaskSchema(
                f"{spec.name}: .instance needs a category slot, not {slot!r}"
            )
        return "x"

    return _REF_RE.sub(repl, text)


def _check_directive(spec: TaskSpec) -> None:
    d = spec.directive
    kind = d.get("kind")
    if kind == "skills":
        entries = d.get("skills")
        if not isinstance(entries, list) or not entries:
            raise BadTaskSchema(f"{spec.name}: empty skill list")
        for entry in entries:
            if not isinstance(entry.get("skill"), str):
                raise BadTaskSchema(f"{spec.name}: skill entry without a name")
            for value in entry.get("args", {}).values():
                if isinstance(value, str):
                    _check_refs(spec, value)
                elif not isinstance(value, (int, float)):
                    raise BadTaskSchema(f"{spec.name}: bad arg value {value!r}")
    elif kind == "goal":
        goal = d.get("goal")
        if not isinstance(goal, str):
            raise BadTaskSchema(f"{spec.name}: goal directive without a goal")
        try:
            parse_goal(_check_refs(spec, goal))
        except PlanningError as err:
            raise BadTaskSchema(f"{spec.name}: {err}") from err
    else:
        raise BadTaskSchema(f"{spec.name}: directive kind must be skills or goal")


# -- tree decoding ------------------------------------------------------------


def _step_from_node(node: Node, spec: TaskSpec) -> TaskStep:
    slots: dict[str, object] = {name: Unresolved(kind) for name, kind in spec.slots}

    def assign(fits) -> Optional[str]:
        for name, kind in spec.slots:
            if isinstance(slots[name], Unresolved) and fits(kind):
                return name
        return None

    for leaf in flatten(node):
        if isinstance(leaf, WildcardTok):
            name = assign(lambda kind: kind == leaf.kind)
            if name is not None:
                slots[name] = Resolved(leaf.entity)
        elif leaf.pronoun:
            name = assign(lambda kind: kind in leaf.pronoun)
            if name is not None:
                slots[name] = Pronoun(leaf.text, leaf.index)
    return TaskStep(spec.name, slots)


def steps_from_tree(tree: Node, tasks: dict[str, TaskSpec]) -> list[TaskStep]:
    """Task steps in sentence order; fills bind to the first open slot of a
    compatible kind, leftover slots stay unresolved for clarification."""
    steps: list[TaskStep] = []

    def walk(node: Node) -> None:
        if node.name in tasks:
            steps.append(_step_from_node(node, tasks[node.name]))
            return
        for child in node.children:
            if isinstance(child, Node):
                walk(child)

    walk(tree)
    return steps


def mentions_from_tree(tree: Node) -> list[tuple[int, int]]:
    """(token position, entity) for every name mention, in sentence order."""
    return [
        (leaf.start, leaf.entity)
        for leaf in flatten(tree)
        if isinstance(leaf, WildcardTok)
    ]


def resolve_coreferences(
    steps: list[TaskStep],
    mentions: list[tuple[int, int]],
    kb: KnowledgeBase,
    tasks: dict[str, TaskSpec],
) -> None:
    """Bind each pronoun slot to the nearest preceding mention of the slot's
    kind; pronouns with no antecedent fall back to unresolved."""
    for step in steps:
        spec = tasks[step.task_type]
        for name, kind in spec.slots:
            value = step.slots[name]
            if not isinstance(value, Pronoun):
                continue
            concept = kb.entity_named(kind)
            antecedent = None
            for position, entity in mentions:
                if position >= value.index:
                    break
                if concept is not None and kb.is_a(entity, concept):
                    antecedent = entity
            step.slots[name] = (
                Resolved(antecedent) if antecedent is not None else Unresolved(kind)
            )


def validate_grammar_tasks(
    grammar: Grammar, tasks: dict[str, TaskSpec]
) -> list[str]:
    """Configuration defects: tasks without productions, tasks nested inside
    tasks, and alternatives whose fills do not fit the declared slots."""
    defects = []
    for name in tasks:
        if name not in grammar.productions:
            defects.append(f"task {name} has no grammar production")

    def fill_kinds(name: str, seen: tuple[str, ...]) -> list[list[tuple[str, str]]]:
        variants: list[list[tuple[str, str]]] = []
        for alt in grammar.productions[name]:
            partial: list[list[tuple[str, str]]] = [[]]
            for sym in alt:
                if sym.kind == "wildcard":
                    partial = [p + [("wildcard", sym.value)] for p in partial]
                elif sym.kind == "word" and sym.value in grammar.pronouns:
                    partial = [p + [("pronoun", sym.value)] for p in partial]
                elif sym.kind == "nonterminal":
                    if sym.value in tasks:
                        defects.append(f"task {seen[0]} embeds task {sym.value}")
                        continue
                    if sym.value in seen:
                        continue  # recursion: kinds already covered elsewhere
                    expanded = fill_kinds(sym.value, seen + (sym.value,))
                    partial = [p + e for p in partial for e in expanded]
            variants.extend(partial)
        return variants

    for name, spec in tasks.items():
        if name not in grammar.productions:
            continue
        for variant in fill_kinds(name, (name,)):
            defect = _simulate(variant, spec, grammar)
            if defect is not None:
                defects.append(f"{name}: {defect}")
    return sorted(set(defects))


def _simulate(
    variant: list[tuple[str, str]], spec: TaskSpec, grammar: Grammar
) -> Optional[str]:
    open_slots = list(spec.slots)
    for source, value in variant:
        fits = (
            (lambda kind: kind == value)
            if source == "wildcard"
            else (lambda kind: kind in grammar.pronoun_kinds(value))
        )
        for i, (_, kind) in enumerate(open_slots):
            if fits(kind):
                del open_slots[i]
                break
        else:
            return f"{source} {value!r} has no slot to fill"
    return None


# -- clarification ------------------------------------------------------------


@dataclass
class DialogSession:
    steps: list[TaskStep]
    missing: deque
    pending: Optional[tuple[int, str]] = None
    retries_left: int = DEFAULT_RETRIES
    transcript: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class NextQuestion:
    text: str


@dataclass(frozen=True)
class Complete:
    steps: list[TaskStep]


@dataclass(frozen=True)
class DialogFailed:
    reason: str


def open_session(
    steps: list[TaskStep],
    tasks: dict[str, TaskSpec],
    retries: int = DEFAULT_RETRIES,
) -> DialogSession:
    missing: deque = deque()
    for i, step in enumerate(steps):
        spec = tasks.get(step.task_type)
        if spec is None:
            raise UnknownTaskType(step.task_type)
        for name, _ in spec.slots:
            if isinstance(step.slots[name], Unresolved):
                missing.append((i, name))
    return DialogSession(steps=steps, missing=missing, retries_left=retries)


def match_entity(kb: KnowledgeBase, kind: str, text: str) -> Optional[int]:
    """Leftmost entity name of the kind in the text, longest name first."""
    tokens = tokenize(text)
    fillers = sorted(vocabulary(kb, kind), key=lambda f: (-len(f[1]), f[0]))
    for start in range(len(tokens)):
        for entity, name in fillers:
            if tuple(tokens[start:start + len(name)]) == name:
                return entity
    return None


def clarify(
    session: DialogSession,
    kb: KnowledgeBase,
    tasks: dict[str, TaskSpec],
    answer: Optional[str] = None,
):
    """Advance the exchange one turn.

    With an answer, try to fill the pending slot; unrecognized answers
    burn one retry and repeat the question. Returns the next question,
    the completed steps, or failure once the retries run out.
    """
    if answer is not None:
        if session.pending is None:
            raise DialogError("no question is pending")
        session.transcript.append(("operator", answer))
        i, slot = session.pending
        step = session.steps[i]
        kind = tasks[step.task_type].slot_kind(slot)
        entity = match_entity(kb, kind, answer)
        if entity is None:
            session.retries_left -= 1
            if session.retries_left <= 0:
                return DialogFailed("too many unrecognized answers")
        else:
            step.slots[slot] = Resolved(entity)
            session.pending = None
    if session.pending is None:
        if not session.missing:
            return Complete(session.steps)
        session.pending = session.missing.popleft()
    i, slot = session.pending
    spec = tasks[session.steps[i].task_type]
    question = TEMPLATES[spec.slot_kind(slot)].format(verb=spec.verb)
    session.transcript.append(("robot", question))
    return NextQuestion(question)


# -- compilation --------------------------------------------------------------


@dataclass(frozen=True)
class SkillDirective:
    goals: tuple[SkillGoal, ...]


@dataclass(frozen=True)
class GoalDirective:
    goal: Goal


def compile_steps(
    steps: list[TaskStep],
    kb: KnowledgeBase,
    tasks: dict[str, TaskSpec],
) -> list[Union[SkillDirective, GoalDirective]]:
    """Fully resolved steps become directives: a fixed skill sequence, or a
    goal handed to the deliberative layer. ``$slot`` substitutes the bound
    entity name; ``$slot.instance`` the first instance of a bound category."""
    directives: list[Union[SkillDirective, GoalDirective]] = []
    for step in steps:
        spec = tasks.get(step.task_type)
        if spec is None:
            raise UnknownTaskType(step.task_type)
        names: dict[str, str] = {}
        for slot, _ in spec.slots:
            value = step.slots[slot]
            if not isinstance(value, Resolved):
                raise UnresolvedSlot(step.task_type, slot)
            names[slot] = kb.entity(value.entity).name

        def substitute(text: str) -> str:
            def repl(m: re.Match) -> str:
                name = names[m.group(1)]
                if m.group(2) is None:
                    return name
                concept = kb.entity_named(name)
                instances = kb.instances_of(concept) if concept is not None else []
                if not instances:
                    raise EmptyCategory(name)
                return kb.entity(instances[0]).name

            return _REF_RE.sub(repl, text)

        d = spec.directive
        if d["kind"] == "skills":
            goals = tuple(
                SkillGoal(
                    entry["skill"],
                    {
                        key: substitute(value) if isinstance(value, str) else value
                        for key, value in entry.get("args", {}).items()
                    },
                )
                for entry in d["skills"]
            )
            directives.append(SkillDirective(goals))
        else:
            directives.append(GoalDirective(parse_goal(substitute(d["goal"]))))
    return directives


# -- dialog and compile skills -------------------------------------------------


class CommandDialog:
    """Operator conversation: hear a command, ask about anything unclear,
    leave the agreed steps on the blackboard."""

    def __init__(self, grammar: Grammar, tasks: dict[str, TaskSpec]):
        self.grammar = grammar
        self.tasks = tasks
        self.session: Optional[DialogSession] = None
        self.parse_retries = DEFAULT_RETRIES
        self.greeted = False

    def _say(self, ctx, text: str) -> None:
        ctx.runtime.publish({"kind": "dialog", "speaker": "robot", "text": text})
        ctx.command(Speak(text))

    def step(self, ctx) -> None:
        if not self.greeted:
            self.greeted = True
            self._say(ctx, "how can i help?")
            return
        if not ctx.runtime.operator_inbox:
            return
        text = ctx.runtime.operator_inbox.popleft()
        ctx.runtime.publish({"kind": "dialog", "speaker": "operator", "text": text})

        if self.session is None:
            try:
                tree = parse(self.grammar, ctx.kb, text)
            except NoParse:
                self.parse_retries -= 1
                if self.parse_retries <= 0:
                    ctx.fail("dialog failed")
                    return
                self._say(ctx, "i did not understand. please rephrase.")
                return
            steps = steps_from_tree(tree, self.tasks)
            resolve_coreferences(steps, mentions_from_tree(tree), ctx.kb, self.tasks)
            self.session = open_session(steps, self.tasks)
            result = clarify(self.session, ctx.kb, self.tasks)
        else:
            result = clarify(self.session, ctx.kb, self.tasks, answer=text)

        if isinstance(result, NextQuestion):
            self._say(ctx, result.text)
        elif isinstance(result, Complete):
            ctx.blackboard["steps"] = result.steps
            ctx.succeed()
        else:
            self._say(ctx, "we are not getting anywhere. never mind.")
            ctx.fail("dialog failed")


class CompileCommand:
    """Turn the steps agreed in dialog into directives for execution."""

    def __init__(self, tasks: dict[str, TaskSpec]):
        self.tasks = tasks

    def step(self, ctx) -> None:
        steps = ctx.blackboard.get("steps")
        if not steps:
            ctx.fail("nothing to do")
            return
        try:
            ctx.blackboard["directives"] = compile_steps(steps, ctx.kb, self.tasks)
        except DialogError as err:
            ctx.fail(str(err))
            return
        ctx.succeed()


def register_dialog_skills(registry, grammar: Grammar, tasks: dict[str, TaskSpec]):
    registry.register(
        SkillDescriptor("command_dialog", ()), lambda: CommandDialog(grammar, tasks)
    )
    registry.register(
        SkillDescriptor("compile_command", ()), lambda: CompileCommand(tasks)
    )
