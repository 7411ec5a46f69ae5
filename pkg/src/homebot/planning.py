"""Goal-to-action-sequence planning over a typed STRIPS-style domain.

Plans come from uniform-cost forward search over eagerly grounded actions,
bounded by a step horizon. Cost ties break on the lexicographic ordering
of ground action names, which makes every result unique and replayable.
"""

from __future__ import annotations

import heapq
import itertools
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from homebot.kb import KnowledgeBase, QueryPattern
from homebot.skills import DELIBERATIVE, SkillGoal


class PlanningError(Exception):
    pass


class BadDomain(PlanningError):
    pass


class UngroundableDomain(PlanningError):
    pass


@dataclass(frozen=True)
class Fluent:
    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.name}({','.join(self.args)})"


@dataclass(frozen=True)
class Literal:
    fluent: Fluent
    positive: bool = True

    def __str__(self) -> str:
        return str(self.fluent) if self.positive else f"not {self.fluent}"


@dataclass(frozen=True)
class Goal:
    literals: tuple[Literal, ...]

    def __post_init__(self):
        if not self.literals:
            raise PlanningError("goal must have at least one literal")

    def satisfied_by(self, state: frozenset[Fluent]) -> bool:
        return all(
            (lit.fluent in state) == lit.positive for lit in self.literals
        )

    def __str__(self) -> str:
        return " & ".join(str(lit) for lit in self.literals)


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]  # (variable, type)
    pre: tuple[Literal, ...]  # args may be variables or constants
    add: tuple[Fluent, ...]
    delete: tuple[Fluent, ...]
    skill: str
    skill_args: tuple[tuple[str, str], ...]  # skill param -> variable/constant
    cost: float = 1.0


@dataclass(frozen=True)
class PlanStep:
    name: str  # ground action name, e.g. go(living_room,kitchen)
    skill_goal: SkillGoal
    pre_pos: frozenset[Fluent]
    pre_neg: frozenset[Fluent]
    add: frozenset[Fluent]
    delete: frozenset[Fluent]
    cost: float


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    @property
    def cost(self) -> float:
        return sum(s.cost for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Unsolvable:
    horizon: int


@dataclass(frozen=True)
class Domain:
    types: dict[str, Optional[str]]  # type -> parent type
    objects: dict[str, str]  # object name -> type
    fluents: dict[str, int]  # fluent name -> arity
    actions: tuple[ActionSchema, ...]

    def type_le(self, child: str, parent: str) -> bool:
        node: Optional[str] = child
        while node is not None:
            if node == parent:
                return True
            node = self.types.get(node)
        return False

    def objects_of(self, typ: str) -> list[str]:
        return sorted(
            name for name, t in self.objects.items() if self.type_le(t, typ)
        )


# ---------------------------------------------------------------------------
# domain files
# ---------------------------------------------------------------------------


def load_domain(source: Union[Path, str, dict]) -> Domain:
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))

    types: dict[str, Optional[str]] = dict(data.get("types", {}))
    for typ, parent in types.items():
        if parent is not None and parent not in types:
            raise BadDomain(f"type {typ} has unknown parent {parent}")

    objects = dict(data.get("objects", {}))
    for name, typ in objects.items():
        if typ not in types:
            raise BadDomain(f"object {name} has unknown type {typ}")

    fluents = {name: int(arity) for name, arity in data.get("fluents", {}).items()}

    actions = []
    for cfg in data.get("actions", []):
        params = tuple((v, t) for v, t in cfg.get("params", []))
        for _, typ in params:
            if typ not in types:
                raise BadDomain(f"action {cfg['name']}: unknown type {typ}")
        variables = {v for v, _ in params}

        def parse_fluent(entry, where):
            name, args = entry[0], tuple(entry[1:])
            if name not in fluents:
                raise BadDomain(f"action {cfg['name']}: unknown fluent {name}")
            if len(args) != fluents[name]:
                raise BadDomain(f"action {cfg['name']}: {name} arity in {where}")
            return Fluent(name, args)

        pre = []
        for entry in cfg.get("pre", []):
            if entry and entry[0] == "not":
                pre.append(Literal(parse_fluent(entry[1:], "pre"), False))
            else:
                pre.append(Literal(parse_fluent(entry, "pre"), True))
        add = tuple(parse_fluent(e, "add") for e in cfg.get("add", []))
        delete = tuple(parse_fluent(e, "del") for e in cfg.get("del", []))
        for fl in add + delete:
            for arg in fl.args:
                if arg not in variables and arg not in objects:
                    raise BadDomain(
                        f"action {cfg['name']}: effect argument {arg!r} is "
                        "neither a parameter nor a known object"
                    )
        skill_cfg = cfg.get("skill", {})
        actions.append(
            ActionSchema(
                name=cfg["name"],
                params=params,
                pre=tuple(pre),
                add=add,
                delete=delete,
                skill=skill_cfg.get("name", ""),
                skill_args=tuple(sorted(skill_cfg.get("args", {}).items())),
                cost=float(cfg.get("cost", 1)),
            )
        )
        if actions[-1].cost <= 0:
            raise BadDomain(f"action {cfg['name']}: cost must be positive")

    return Domain(types=types, objects=objects, fluents=fluents,
                  actions=tuple(actions))


# ---------------------------------------------------------------------------
# grounding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundAction:
    name: str
    step: PlanStep


def ground_actions(domain: Domain) -> list[GroundAction]:
    """All type-correct instantiations of every schema, sorted by name."""
    out = []
    for schema in domain.actions:
        pools = []
        for var, typ in schema.params:
            pool = domain.objects_of(typ)
            if not pool:
                raise UngroundableDomain(
                    f"{schema.name}: no objects of type {typ} for {var}"
                )
            pools.append(pool)
        for combo in itertools.product(*pools):
            binding = {var: value
                       for (var, _), value in zip(schema.params, combo)}
            out.append(_bind(schema, binding, domain))
    out.sort(key=lambda g: g.name)
    return out


def _bind(schema: ActionSchema, binding: dict[str, str],
          domain: Domain) -> GroundAction:
    def sub(args: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(binding.get(a, a) for a in args)

    pre_pos = frozenset(
        Fluent(l.fluent.name, sub(l.fluent.args)) for l in schema.pre if l.positive
    )
    pre_neg = frozenset(
        Fluent(l.fluent.name, sub(l.fluent.args))
        for l in schema.pre
        if not l.positive
    )
    add = frozenset(Fluent(f.name, sub(f.args)) for f in schema.add)
    delete = frozenset(Fluent(f.name, sub(f.args)) for f in schema.delete)
    args = ",".join(binding[v] for v, _ in schema.params)
    name = f"{schema.name}({args})"
    skill_goal = SkillGoal(
        schema.skill,
        {param: binding.get(value, value) for param, value in schema.skill_args},
        supervisor=DELIBERATIVE,
    )
    return GroundAction(
        name=name,
        step=PlanStep(
            name=name,
            skill_goal=skill_goal,
            pre_pos=pre_pos,
            pre_neg=pre_neg,
            add=add,
            delete=delete,
            cost=schema.cost,
        ),
    )


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def plan(
    domain: Domain,
    state: frozenset[Fluent],
    goal: Goal,
    horizon: int = 12,
) -> Union[Plan, Unsolvable]:
    """Minimal-cost plan of length at most horizon, or Unsolvable.

    Uniform-cost search over (state, depth) with priority (cost, names);
    the name tuple gives a total lexicographic tie-break, so the result is
    unique for a given input.
    """
    if horizon < 1:
        raise PlanningError("horizon must be at least 1")
    grounded = ground_actions(domain)
    start = frozenset(state)

    # Pareto frontier of (cost, depth) pairs already expanded per state.
    # A later arrival that is no cheaper and no shallower cannot lead to a
    # better plan: with positive costs its name tuple already compares
    # larger at the first differing action, whatever the suffix.
    expanded: dict[frozenset[Fluent], list[tuple[float, int]]] = {}

    def dominated(s: frozenset[Fluent], cost: float, depth: int) -> bool:
        return any(g <= cost and d <= depth for g, d in expanded.get(s, ()))

    counter = itertools.count()
    frontier: list = [(0.0, (), next(counter), start, 0, ())]
    while frontier:
        cost, names, _, current, depth, steps = heapq.heappop(frontier)
        if goal.satisfied_by(current):
            result = Plan(steps=steps)
            _check_plan(result, start, goal)
            return result
        if dominated(current, cost, depth) or depth >= horizon:
            continue
        expanded.setdefault(current, []).append((cost, depth))
        for ga in grounded:
            if not ga.step.pre_pos <= current:
                continue
            if ga.step.pre_neg & current:
                continue
            succ = (current - ga.step.delete) | ga.step.add
            if dominated(succ, cost + ga.step.cost, depth + 1):
                continue
            heapq.heappush(
                frontier,
                (
                    cost + ga.step.cost,
                    names + (ga.name,),
                    next(counter),
                    succ,
                    depth + 1,
                    steps + (ga.step,),
                ),
            )
    return Unsolvable(horizon)


def _check_plan(result: Plan, start: frozenset[Fluent], goal: Goal) -> None:
    """Self-check on emit: declared effects simulated from the snapshot must
    pass every precondition and reach the goal."""
    state = start
    for i, step in enumerate(result.steps):
        if not step.pre_pos <= state or (step.pre_neg & state):
            raise PlanningError(f"emitted plan invalid at step {i} ({step.name})")
        state = (state - step.delete) | step.add
    if not goal.satisfied_by(state):
        raise PlanningError("emitted plan does not reach its goal")


# ---------------------------------------------------------------------------
# bridges
# ---------------------------------------------------------------------------


def state_from_kb(kb: KnowledgeBase, domain: Domain) -> frozenset[Fluent]:
    """Project the KB's situated facts onto the domain's fluent vocabulary.

    Only attributes whose name is a domain fluent and whose entities are
    domain objects become state fluents.
    """
    fluents = set()
    for name, arity in domain.fluents.items():
        for attr in kb.query(QueryPattern(name=name)):
            subject = kb.entity(attr.subject).name
            if subject not in domain.objects:
                continue
            if arity == 1:
                fluents.add(Fluent(name, (subject,)))
            elif arity == 2 and attr.value_type == "entity":
                value = kb.entity(int(attr.value)).name
                if value in domain.objects:
                    fluents.add(Fluent(name, (subject, value)))
    return frozenset(fluents)


def load_state(source: Union[Path, str, dict]) -> frozenset[Fluent]:
    """State file: {"fluents": [[name, arg, ...], ...]}."""
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    return frozenset(
        Fluent(entry[0], tuple(entry[1:])) for entry in data.get("fluents", [])
    )


_LITERAL_RE = re.compile(r"^\s*(not\s+|!)?\s*(\w+)\(([^)]*)\)\s*$")


def parse_goal(text: str, domain: Optional[Domain] = None) -> Goal:
    """Parse goals like "at(robot,kitchen)" or "holding(robot,coke) & !at(robot,pantry)"."""
    literals = []
    for chunk in text.split("&"):
        m = _LITERAL_RE.match(chunk)
        if m is None:
            raise PlanningError(f"cannot parse goal literal {chunk!r}")
        negated, name, raw_args = m.groups()
        args = tuple(a.strip() for a in raw_args.split(",") if a.strip())
        if domain is not None:
            if name not in domain.fluents:
                raise PlanningError(f"unknown fluent {name!r}")
            if len(args) != domain.fluents[name]:
                raise PlanningError(f"wrong arity for {name!r}")
            for arg in args:
                if arg not in domain.objects:
                    raise PlanningError(f"unknown object {arg!r}")
        literals.append(Literal(Fluent(name, args), positive=not negated))
    return Goal(tuple(literals))
