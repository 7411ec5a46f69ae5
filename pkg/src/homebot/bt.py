"""Behavior tree engine with memoryless sequence/fallback composites.

Composites re-tick from the left every tick, so the tree re-evaluates its
conditions continuously. Actions bridge into the skill runtime: the first
tick dispatches an invocation, later ticks report its state, and a Running
action that the tree stops reaching is cancelled within one tick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

from homebot.runtime import Runtime
from homebot.skills import DONE, InvocationHandle, SkillGoal, Succeeded
from homebot.world import facing

SUCCESS = "Success"
FAILURE = "Failure"
RUNNING = "Running"


class InvalidTree(Exception):
    pass


@dataclass
class Sequence:
    children: tuple
    label: str = "seq"


@dataclass
class Fallback:
    children: tuple
    label: str = "fb"


@dataclass
class Action:
    goal: SkillGoal
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = f"act:{self.goal.skill}"


@dataclass
class Condition:
    name: str
    predicate: Callable[[Runtime], bool]
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = f"cond:{self.name}"


BTNode = Union[Sequence, Fallback, Action, Condition]


def validate(tree: BTNode, registry=None) -> None:
    if isinstance(tree, (Sequence, Fallback)):
        if not tree.children:
            raise InvalidTree(f"{tree.label} has no children")
        for child in tree.children:
            validate(child, registry)
    elif isinstance(tree, Action):
        if registry is not None and tree.goal.skill not in registry:
            raise InvalidTree(f"unregistered skill {tree.goal.skill}")
    elif not isinstance(tree, Condition):
        raise InvalidTree(f"not a tree node: {tree!r}")


def census(tree: BTNode) -> dict[str, int]:
    counts = {"Sequence": 0, "Fallback": 0, "Action": 0, "Condition": 0}

    def walk(node):
        counts[type(node).__name__] += 1
        if isinstance(node, (Sequence, Fallback)):
            for child in node.children:
                walk(child)

    walk(tree)
    return counts


class BTRunner:
    """Ticks one tree against the runtime, keeping per-action invocation
    handles and cancelling actions the tree no longer reaches."""

    def __init__(self, tree: BTNode, runtime: Runtime):
        validate(tree, runtime.registry)
        self.tree = tree
        self.runtime = runtime
        self._handles: dict[int, InvocationHandle] = {}  # id(node) -> handle
        self._trace: list[tuple[str, str]] = []

    def tick(self) -> str:
        """One tree tick; returns the root status. The visit trace for the
        tick is kept in last_trace."""
        self._trace = []
        ticked: set[int] = set()
        status = self._tick_node(self.tree, ticked)
        for node_id, handle in list(self._handles.items()):
            if node_id not in ticked:
                if handle.state != DONE:
                    self.runtime.cancel(handle)
                del self._handles[node_id]
        return status

    @property
    def last_trace(self) -> list[tuple[str, str]]:
        return list(self._trace)

    def cancel_all(self) -> None:
        for handle in self._handles.values():
            if handle.state != DONE:
                self.runtime.cancel(handle)
        self._handles.clear()

    def _tick_node(self, node: BTNode, ticked: set[int]) -> str:
        if isinstance(node, Sequence):
            status = SUCCESS
            for child in node.children:
                status = self._tick_node(child, ticked)
                if status != SUCCESS:
                    break
        elif isinstance(node, Fallback):
            status = FAILURE
            for child in node.children:
                status = self._tick_node(child, ticked)
                if status != FAILURE:
                    break
        elif isinstance(node, Condition):
            status = SUCCESS if node.predicate(self.runtime) else FAILURE
        else:
            status = self._tick_action(node, ticked)
        self._trace.append((node.label, status))
        return status

    def _tick_action(self, node: Action, ticked: set[int]) -> str:
        ticked.add(id(node))
        handle = self._handles.get(id(node))
        if handle is None:
            self._handles[id(node)] = self.runtime.dispatch(node.goal)
            return RUNNING
        if handle.state != DONE:
            return RUNNING
        outcome = self.runtime.outcome_of(handle)
        del self._handles[id(node)]  # memoryless: next tick redispatches
        return SUCCESS if isinstance(outcome, Succeeded) else FAILURE


# ---------------------------------------------------------------------------
# person following (Fig. 3 layout: question marks are fallbacks, arrows
# sequences; exactly two of each)
# ---------------------------------------------------------------------------


def person_following_tree(target: str, follow_distance: int = 2) -> BTNode:
    """Follow a person: keep navigating while the target is visible and the
    head is tracking it; re-aim the head when tracking slips; fall back to
    a re-detect scan when the target is lost."""

    def visible(rt: Runtime) -> bool:
        person = rt.world.person_named(target)
        return person is not None and person.id in rt.world.sense_ground().people

    def tracked(rt: Runtime) -> bool:
        person = rt.world.person_named(target)
        if person is None or person.id not in rt.world.sense_ground().people:
            return False
        return rt.world.robot.heading == facing(rt.world.robot.cell, person.cell)

    navigate = Action(
        SkillGoal(
            "navigate_to_target",
            {"target": target, "follow_distance": follow_distance},
        )
    )
    track = Action(SkillGoal("track_head", {"target": target}))
    detect = Action(SkillGoal("detect_target", {"target": target}))

    return Fallback(
        children=(
            Sequence(
                children=(
                    Condition("target_visible", visible),
                    Fallback(
                        children=(
                            Sequence(
                                children=(
                                    Condition("target_tracked", tracked),
                                    navigate,
                                ),
                                label="seq:navigate",
                            ),
                            track,
                        ),
                        label="fb:track",
                    ),
                ),
                label="seq:engaged",
            ),
            detect,
        ),
        label="fb:root",
    )


def run_following(scenario, max_ticks: int, target: Optional[str] = None) -> list[dict]:
    """Standalone following run: build a world from the scenario, tick the
    tree once per runtime tick, and log per-tick node statuses until the
    root fails or max_ticks pass."""
    from homebot.skill_library import register_all
    from homebot.world import load_scenario

    world = load_scenario(scenario)
    runtime = Runtime(world)
    register_all(runtime.registry)
    if target is None:
        if not world.people:
            raise InvalidTree("scenario has no person to follow")
        target = world.people[min(world.people)].name
    runner = BTRunner(person_following_tree(target), runtime)

    log: list[dict] = []
    for _ in range(max_ticks):
        status = runner.tick()
        log.append(
            {
                "tick": runtime.now,
                "root": status,
                "statuses": runner.last_trace,
                "robot": world.robot.cell,
                "target": world.person_named(target).cell,
            }
        )
        runtime.tick()
        if status == FAILURE:
            break
    runner.cancel_all()
    return log


# ---------------------------------------------------------------------------
# optional tree definition files
# ---------------------------------------------------------------------------

# name -> builder(**params) -> predicate(runtime) -> bool
PREDICATES: dict[str, Callable] = {}


def _predicate(name: str):
    def deco(fn):
        PREDICATES[name] = fn
        return fn

    return deco


@_predicate("target_visible")
def _target_visible(target: str):
    def check(rt: Runtime) -> bool:
        person = rt.world.person_named(target)
        return person is not None and person.id in rt.world.sense_ground().people

    return check


@_predicate("target_tracked")
def _target_tracked(target: str):
    def check(rt: Runtime) -> bool:
        person = rt.world.person_named(target)
        if person is None or person.id not in rt.world.sense_ground().people:
            return False
        return rt.world.robot.heading == facing(rt.world.robot.cell, person.cell)

    return check


def load_tree(source: Union[Path, str, dict]) -> BTNode:
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    return _parse_node(data)


def _parse_node(data: dict) -> BTNode:
    kind = data.get("kind")
    if kind in ("sequence", "fallback"):
        children = tuple(_parse_node(c) for c in data.get("children", []))
        cls = Sequence if kind == "sequence" else Fallback
        node = cls(children=children)
        if "label" in data:
            node.label = data["label"]
        return node
    if kind == "action":
        return Action(
            SkillGoal(data["skill"], data.get("args", {}),
                      data.get("supervisor", "reactive"))
        )
    if kind == "condition":
        builder = PREDICATES.get(data["name"])
        if builder is None:
            raise InvalidTree(f"unknown predicate {data['name']!r}")
        return Condition(data["name"], builder(**data.get("args", {})))
    raise InvalidTree(f"unknown node kind {kind!r}")
