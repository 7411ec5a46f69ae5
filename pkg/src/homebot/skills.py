"""Uniform skill interface: descriptors, goals, feedback, outcomes.

Every capability the robot has is a skill with the same contract: it is
dispatched with a goal, steps once per runtime tick, may emit feedback to
its supervisor, and ends with exactly one outcome. Cancellation must take
effect within one tick.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from homebot.kb import Attribute

PARAM_KINDS = ("entity-ref", "location-ref", "person-ref", "text", "number")

REACTIVE = "reactive"
DELIBERATIVE = "deliberative"


class SkillError(Exception):
    pass


class DuplicateSkill(SkillError):
    pass


class InvalidDescriptor(SkillError):
    pass


class UnknownSkill(SkillError):
    pass


class MissingParameter(SkillError):
    def __init__(self, name: str):
        super().__init__(f"missing parameter {name!r}")
        self.name = name


class UnexpectedParameter(SkillError):
    def __init__(self, name: str):
        super().__init__(f"unexpected parameter {name!r}")
        self.name = name


class KindMismatch(SkillError):
    def __init__(self, name: str):
        super().__init__(f"parameter {name!r} has the wrong kind")
        self.name = name


class UnknownInvocation(SkillError):
    pass


class Timeout(SkillError):
    pass


@dataclass(frozen=True)
class SkillDescriptor:
    name: str
    params: tuple[tuple[str, str], ...] = ()  # (param name, kind)
    cancellable: bool = True


@dataclass(frozen=True)
class SkillGoal:
    skill: str
    args: dict = field(default_factory=dict)
    supervisor: str = REACTIVE


@dataclass(frozen=True)
class SkillFeedback:
    invocation: int
    note: str
    tick: int


@dataclass(frozen=True)
class Succeeded:
    payload: tuple[Attribute, ...] = ()


@dataclass(frozen=True)
class Failed:
    reason: str


@dataclass(frozen=True)
class Preempted:
    pass


SkillOutcome = Union[Succeeded, Failed, Preempted]

PENDING = "Pending"
ACTIVE = "Active"
DONE = "Done"


class SkillRegistry:
    """Name -> (descriptor, behavior factory). A behavior factory builds a
    fresh stepper object per invocation; the stepper exposes step(ctx) and
    optionally on_cancel(ctx)."""

    def __init__(self) -> None:
        self._skills: dict[str, tuple[SkillDescriptor, Callable]] = {}

    def register(self, descriptor: SkillDescriptor, factory: Callable) -> None:
        if not descriptor.name or not descriptor.name.strip():
            raise InvalidDescriptor("empty skill name")
        names = [p for p, _ in descriptor.params]
        if len(names) != len(set(names)):
            raise InvalidDescriptor(f"duplicate param names in {descriptor.name}")
        for _, kind in descriptor.params:
            if kind not in PARAM_KINDS:
                raise InvalidDescriptor(f"bad param kind {kind!r}")
        if descriptor.name in self._skills:
            raise DuplicateSkill(descriptor.name)
        self._skills[descriptor.name] = (descriptor, factory)

    def descriptor(self, name: str) -> SkillDescriptor:
        if name not in self._skills:
            raise UnknownSkill(name)
        return self._skills[name][0]

    def factory(self, name: str) -> Callable:
        if name not in self._skills:
            raise UnknownSkill(name)
        return self._skills[name][1]

    def names(self) -> list[str]:
        return sorted(self._skills)

    def __contains__(self, name: str) -> bool:
        return name in self._skills

    def validate_goal(self, goal: SkillGoal) -> None:
        descriptor = self.descriptor(goal.skill)
        declared = dict(descriptor.params)
        for name in declared:
            if name not in goal.args:
                raise MissingParameter(name)
        for name, value in goal.args.items():
            kind = declared.get(name)
            if kind is None:
                raise UnexpectedParameter(name)
            if kind == "number":
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise KindMismatch(name)
            else:  # every ref kind and text carry a nonempty string
                if not isinstance(value, str) or not value:
                    raise KindMismatch(name)


class Invocation:
    """Runtime-owned record of one skill dispatch."""

    def __init__(self, inv_id: int, goal: SkillGoal, behavior, dispatch_tick: int):
        self.id = inv_id
        self.goal = goal
        self.behavior = behavior
        self.dispatch_tick = dispatch_tick
        self.state = PENDING
        self.outcome: Optional[SkillOutcome] = None
        self.outcome_tick: Optional[int] = None
        self.cancel_requested = False
        self.cancel_tick: Optional[int] = None
        self.feedback: list[SkillFeedback] = []

    @property
    def skill(self) -> str:
        return self.goal.skill


class InvocationHandle:
    """Shareable immutable view of an invocation."""

    __slots__ = ("_record",)

    def __init__(self, record: Invocation):
        object.__setattr__(self, "_record", record)

    @property
    def id(self) -> int:
        return self._record.id

    @property
    def skill(self) -> str:
        return self._record.skill

    @property
    def state(self) -> str:
        return self._record.state

    def __setattr__(self, name, value):
        raise AttributeError("handles are immutable")

    def __eq__(self, other):
        return isinstance(other, InvocationHandle) and other.id == self.id

    def __hash__(self):
        return hash(("invocation", self.id))

    def __repr__(self):
        return f"InvocationHandle(i{self.id} {self.skill} {self.state})"
