"""Reactive control: hierarchical state machines over skills and goals.

A machine is a flat table of states; states either run one skill, nest
another machine, delegate a goal to the deliberative layer, or terminate
with a label. Monitors turn detector skills into named events; preemption
rules map events to jump targets within a stated machine scope. The
executive owns exactly one activity at a time and records a replayable
trace of everything it does.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from homebot.executor import DEFAULT_BUDGET, DEFAULT_HORIZON
from homebot.planning import Goal, PlanningError, parse_goal
from homebot.skills import DONE, SkillGoal, Succeeded
from homebot.dialog import GoalDirective, SkillDirective

SKILL_LABELS = ("succeeded", "failed", "preempted")
DELEGATE_LABELS = ("achieved", "abandoned", "preempted")

SESSION_MACHINE = "@session_directives"
SESSION_LABELS = ("ok", "failed", "preempted")

_CASCADE_LIMIT = 100


class MachineError(Exception):
    pass


class BadMachine(MachineError):
    pass


class UnhandledOutcome(MachineError):
    def __init__(self, machine: str, state: str, label: str):
        super().__init__(f"{machine}:{state} has no edge for {label!r}")
        self.machine = machine
        self.state = state
        self.label = label


# -- definitions ---------------------------------------------------------------


@dataclass(frozen=True)
class SkillState:
    skill: str
    args: dict
    on: dict  # outcome label -> target state id


@dataclass(frozen=True)
class SubMachine:
    machine: str
    on: dict  # child terminal label -> target state id


@dataclass(frozen=True)
class Delegate:
    goal: Union[str, Goal]  # parsed when the state is entered
    on: dict
    budget: int = DEFAULT_BUDGET
    horizon: int = DEFAULT_HORIZON


@dataclass(frozen=True)
class Terminal:
    label: str


StateNode = Union[SkillState, SubMachine, Delegate, Terminal]


@dataclass(frozen=True)
class MachineDef:
    id: str
    initial: str
    states: dict

    def terminal_labels(self) -> tuple[str, ...]:
        labels = [n.label for n in self.states.values() if isinstance(n, Terminal)]
        return tuple(dict.fromkeys(labels))


@dataclass(frozen=True)
class PreemptionRule:
    event: str
    target: str
    scope: str  # machine id the rule belongs to


@dataclass(frozen=True)
class MonitorSpec:
    skill: str
    event: str
    args: dict = field(default_factory=dict)


@dataclass
class MachineSet:
    machines: dict
    preemptions: list
    monitors: list
    root: str


def _node_from_config(machine: str, state: str, cfg: dict) -> StateNode:
    kind = cfg.get("kind")
    on = cfg.get("on", {})
    if not isinstance(on, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in on.items()
    ):
        raise BadMachine(f"{machine}:{state}: bad transition table")
    if kind == "skill":
        if not isinstance(cfg.get("skill"), str):
            raise BadMachine(f"{machine}:{state}: skill state without a skill")
        return SkillState(cfg["skill"], dict(cfg.get("args", {})), on)
    if kind == "submachine":
        if not isinstance(cfg.get("machine"), str):
            raise BadMachine(f"{machine}:{state}: submachine without a machine")
        return SubMachine(cfg["machine"], on)
    if kind == "delegate":
        if not isinstance(cfg.get("goal"), str):
            raise BadMachine(f"{machine}:{state}: delegate without a goal")
        return Delegate(
            cfg["goal"],
            on,
            budget=int(cfg.get("budget", DEFAULT_BUDGET)),
            horizon=int(cfg.get("horizon", DEFAULT_HORIZON)),
        )
    if kind == "terminal":
        if not isinstance(cfg.get("label"), str):
            raise BadMachine(f"{machine}:{state}: terminal without a label")
        if on:
            raise BadMachine(f"{machine}:{state}: terminals take no transitions")
        return Terminal(cfg["label"])
    raise BadMachine(f"{machine}:{state}: unknown state kind {kind!r}")


def load_machines(source: Union[Path, str, dict]) -> MachineSet:
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    raw = data.get("machines")
    if not isinstance(raw, dict) or not raw:
        raise BadMachine("expected a nonempty `machines` table")
    machines = {}
    for mid, cfg in raw.items():
        states = cfg.get("states")
        if not isinstance(states, dict) or not states:
            raise BadMachine(f"{mid}: machine without states")
        initial = cfg.get("initial")
        if not isinstance(initial, str):
            raise BadMachine(f"{mid}: machine without an initial state")
        machines[mid] = MachineDef(
            mid,
            initial,
            {sid: _node_from_config(mid, sid, s) for sid, s in states.items()},
        )
    root = data.get("root", next(iter(machines)))
    if root not in machines:
        raise BadMachine(f"root machine {root!r} is not defined")
    preemptions = [
        PreemptionRule(r["event"], r["target"], r["scope"])
        for r in data.get("preemptions", [])
    ]
    monitors = [
        MonitorSpec(m["skill"], m["event"], dict(m.get("args", {})))
        for m in data.get("monitors", [])
    ]
    return MachineSet(machines, preemptions, monitors, root)


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Defect:
    machine: str
    state: Optional[str]
    kind: str
    detail: str


def _emittable_labels(node: StateNode, machines: dict) -> Optional[tuple[str, ...]]:
    if isinstance(node, SkillState):
        return ("succeeded", "failed")
    if isinstance(node, Delegate):
        return ("achieved", "abandoned")
    if isinstance(node, SubMachine):
        if node.machine == SESSION_MACHINE:
            return SESSION_LABELS
        child = machines.get(node.machine)
        return child.terminal_labels() if child is not None else None
    return None


def validate(machine_set: MachineSet, registry=None) -> list[Defect]:
    """Configuration defects, reported as data so a caller can decide how
    strict to be. A clean machine set returns an empty list."""
    defects: list[Defect] = []
    machines = machine_set.machines

    def defect(machine, state, kind, detail):
        defects.append(Defect(machine, state, kind, detail))

    def known_skill(name: str) -> bool:
        if registry is None:
            return True
        try:
            registry.descriptor(name)
            return True
        except Exception:
            return False

    # scopes with preemption rules need preempted edges throughout
    scoped = {rule.scope for rule in machine_set.preemptions}
    covered = set(scoped)
    changed = True
    while changed:
        changed = False
        for mid in list(covered):
            machine = machines.get(mid)
            if machine is None:
                continue
            for node in machine.states.values():
                if isinstance(node, SubMachine) and node.machine in machines:
                    if node.machine not in covered:
                        covered.add(node.machine)
                        changed = True

    for rule in machine_set.preemptions:
        scope = machines.get(rule.scope)
        if scope is None:
            defect(rule.scope, None, "unknown_machine",
                   f"preemption scope {rule.scope!r} is not defined")
        elif rule.target not in scope.states:
            defect(rule.scope, None, "missing_target",
                   f"preemption target {rule.target!r} is not a state")

    for spec in machine_set.monitors:
        if not known_skill(spec.skill):
            defect(machine_set.root, None, "unknown_skill",
                   f"monitor skill {spec.skill!r} is not registered")

    for mid, machine in machines.items():
        if machine.initial not in machine.states:
            defect(mid, None, "unknown_initial",
                   f"initial state {machine.initial!r} is not defined")
        for sid, node in machine.states.items():
            on = getattr(node, "on", {})
            for label, target in on.items():
                if target not in machine.states:
                    defect(mid, sid, "missing_target",
                           f"edge {label!r} points at unknown state {target!r}")
            if isinstance(node, SkillState):
                if not set(on) <= set(SKILL_LABELS):
                    defect(mid, sid, "unknown_label",
                           f"skill states emit {SKILL_LABELS}")
                if not known_skill(node.skill):
                    defect(mid, sid, "unknown_skill",
                           f"skill {node.skill!r} is not registered")
            elif isinstance(node, Delegate):
                if not set(on) <= set(DELEGATE_LABELS):
                    defect(mid, sid, "unknown_label",
                           f"delegate states emit {DELEGATE_LABELS}")
                if isinstance(node.goal, str):
                    try:
                        parse_goal(node.goal)
                    except PlanningError as err:
                        defect(mid, sid, "bad_goal", str(err))
            elif isinstance(node, SubMachine):
                if node.machine != SESSION_MACHINE and node.machine not in machines:
                    defect(mid, sid, "unknown_machine",
                           f"references undefined machine {node.machine!r}")
            emittable = _emittable_labels(node, machines)
            if emittable is not None:
                for label in emittable:
                    if label not in on:
                        defect(mid, sid, "missing_transition",
                               f"no edge for {label!r}")
                if mid in covered and not isinstance(node, SubMachine):
                    if "preempted" not in on:
                        defect(mid, sid, "missing_preempted_edge",
                               "preemption rules reach this machine")

        # terminals must be reachable from the initial state
        reached = set()
        frontier = [machine.initial]
        while frontier:
            sid = frontier.pop()
            if sid in reached or sid not in machine.states:
                continue
            reached.add(sid)
            frontier.extend(getattr(machine.states[sid], "on", {}).values())
        for sid, node in machine.states.items():
            if isinstance(node, Terminal) and sid not in reached:
                defect(mid, sid, "unreachable_terminal",
                       f"terminal {node.label!r} cannot be reached")

    # nesting must be acyclic
    stack: list[str] = []

    def visit(mid: str) -> None:
        if mid in stack:
            cycle = " -> ".join(stack[stack.index(mid):] + [mid])
            defect(mid, None, "recursive_nesting", cycle)
            return
        machine = machines.get(mid)
        if machine is None:
            return
        stack.append(mid)
        for node in machine.states.values():
            if isinstance(node, SubMachine) and node.machine != SESSION_MACHINE:
                visit(node.machine)
        stack.pop()

    visit(machine_set.root)
    return defects


# -- the executive -------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    path: str
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.tick}\t{self.path}\t{self.kind}\t{self.detail}"


@dataclass
class _Frame:
    machine: MachineDef
    state_id: str
    handle: object = None
    delegating: bool = False


def _session_machine(rt) -> MachineDef:
    """Build a one-shot chain machine from the directives agreed in dialog."""
    states: dict[str, StateNode] = {
        "done": Terminal("ok"),
        "failed": Terminal("failed"),
        "stopped": Terminal("preempted"),
    }
    chain: list[tuple[str, StateNode]] = []
    for i, directive in enumerate(rt.blackboard.get("directives") or []):
        if isinstance(directive, SkillDirective):
            for j, goal in enumerate(directive.goals):
                node = SkillState(goal.skill, dict(goal.args), {})
                chain.append((f"d{i}_s{j}", node))
        elif isinstance(directive, GoalDirective):
            chain.append((f"d{i}_goal", Delegate(directive.goal, {})))
        else:
            raise BadMachine(f"unknown directive {directive!r}")
    for index, (sid, node) in enumerate(chain):
        follow = chain[index + 1][0] if index + 1 < len(chain) else "done"
        if isinstance(node, SkillState):
            on = {"succeeded": follow, "failed": "failed", "preempted": "stopped"}
            states[sid] = SkillState(node.skill, node.args, on)
        else:
            on = {"achieved": follow, "abandoned": "failed", "preempted": "stopped"}
            states[sid] = Delegate(node.goal, on, node.budget, node.horizon)
    initial = chain[0][0] if chain else "done"
    return MachineDef("session", initial, states)


class Executive:
    """Steps the machine hierarchy once per tick: monitors fire events,
    events trigger preemptions, and the single active state advances."""

    def __init__(self, machine_set: MachineSet, registry=None, strict: bool = True):
        if strict:
            defects = validate(machine_set, registry)
            if defects:
                listing = "; ".join(
                    f"{d.machine}:{d.state or '-'} {d.kind} ({d.detail})"
                    for d in defects
                )
                raise BadMachine(listing)
        self.machine_set = machine_set
        self.frames: list[_Frame] = []
        self.events: deque[str] = deque()
        self.trace: list[TraceRecord] = []
        self.done: Optional[str] = None
        self._monitor_handles: list = [None] * len(machine_set.monitors)

    # -- introspection ----------------------------------------------------

    def path(self) -> str:
        if not self.frames:
            return self.machine_set.root
        parts = [self.frames[0].machine.id] + [f.state_id for f in self.frames]
        return "/".join(parts)

    def post_event(self, name: str) -> None:
        self.events.append(name)

    def bind_monitor(self, registry, skill: str, event: str,
                     args: Optional[dict] = None) -> None:
        registry.descriptor(skill)  # raises UnknownSkill
        self.machine_set.monitors.append(MonitorSpec(skill, event, args or {}))
        self._monitor_handles.append(None)

    def _note(self, rt, kind: str, detail: str) -> None:
        self.trace.append(TraceRecord(rt.now, self.path(), kind, detail))

    # -- per-tick step ----------------------------------------------------

    def step(self, rt) -> None:
        if self.done is not None:
            return
        if not self.frames:
            root = self.machine_set.machines[self.machine_set.root]
            self.frames.append(_Frame(root, root.initial))
            self._note(rt, "enter", root.initial)
        self._step_monitors(rt)
        self._drain_milestones(rt)
        self._drain_events(rt)
        if self.done is None:
            self._advance(rt)

    def _step_monitors(self, rt) -> None:
        for i, spec in enumerate(self.machine_set.monitors):
            handle = self._monitor_handles[i]
            if handle is not None:
                inv = rt.invocations[handle.id]
                if inv.state != DONE:
                    continue
                if isinstance(inv.outcome, Succeeded):
                    self.events.append(spec.event)
                self._monitor_handles[i] = None
            self._monitor_handles[i] = rt.dispatch(
                SkillGoal(spec.skill, dict(spec.args))
            )

    def _drain_milestones(self, rt) -> None:
        deliberative = getattr(rt, "deliberative", None)
        if deliberative is None:
            return
        for m in deliberative.take_milestones():
            detail = m.kind if m.reason is None else f"{m.kind} ({m.reason})"
            self._note(rt, "milestone", detail)

    def _rule_for(self, event: str) -> Optional[tuple[int, PreemptionRule]]:
        for depth in range(len(self.frames) - 1, -1, -1):
            mid = self.frames[depth].machine.id
            for rule in self.machine_set.preemptions:
                if rule.event == event and rule.scope == mid:
                    return depth, rule
        return None

    def _drain_events(self, rt) -> None:
        while self.events:
            event = self.events.popleft()
            self._note(rt, "event", event)
            hit = self._rule_for(event)
            if hit is None:
                self._note(rt, "dropped", event)
                continue
            depth, rule = hit
            self._cancel_activity(rt, self.frames[-1])
            del self.frames[depth + 1:]
            frame = self.frames[depth]
            frame.state_id = rule.target
            frame.handle = None
            frame.delegating = False
            self._note(rt, "preempt", f"{event} -> {rule.scope}:{rule.target}")

    def _cancel_activity(self, rt, frame: _Frame) -> None:
        if frame.handle is not None:
            inv = rt.invocations[frame.handle.id]
            if inv.state != DONE:
                rt.cancel(frame.handle)
        if frame.delegating and rt.deliberative is not None:
            rt.deliberative.abort(rt)

    def _advance(self, rt) -> None:
        for _ in range(_CASCADE_LIMIT):
            frame = self.frames[-1]
            node = frame.machine.states.get(frame.state_id)
            if node is None:
                raise BadMachine(
                    f"{frame.machine.id}: no state {frame.state_id!r}"
                )
            if isinstance(node, Terminal):
                self._note(rt, "terminal", node.label)
                self.frames.pop()
                if not self.frames:
                    self.done = node.label
                    return
                self._transition(rt, self.frames[-1], node.label)
                continue
            if isinstance(node, SkillState):
                if frame.handle is None:
                    frame.handle = rt.dispatch(SkillGoal(node.skill, dict(node.args)))
                    self._note(rt, "dispatch", f"{node.skill} i{frame.handle.id}")
                    return
                inv = rt.invocations[frame.handle.id]
                if inv.state != DONE:
                    return
                label = type(inv.outcome).__name__.lower()
                self._note(rt, "outcome", f"{node.skill} {label}")
                frame.handle = None
                self._transition(rt, frame, label)
                continue
            if isinstance(node, Delegate):
                if not frame.delegating:
                    goal = (
                        node.goal
                        if isinstance(node.goal, Goal)
                        else parse_goal(node.goal)
                    )
                    if rt.deliberative is None:
                        raise MachineError("no deliberative layer attached")
                    rt.deliberative.submit(rt, goal, node.budget, node.horizon)
                    frame.delegating = True
                    self._note(rt, "delegate", str(goal))
                    return
                episode = rt.deliberative.episode
                if episode is None or not episode.done:
                    return
                status = episode.status
                if status.kind == "Achieved":
                    label = "achieved"
                elif status.reason == "preempted":
                    label = "preempted"
                else:
                    label = "abandoned"
                self._note(rt, "outcome", f"delegate {label}")
                frame.delegating = False
                self._transition(rt, frame, label)
                continue
            # submachine: push a child frame and keep going
            if node.machine == SESSION_MACHINE:
                child = _session_machine(rt)
            else:
                child = self.machine_set.machines[node.machine]
            self.frames.append(_Frame(child, child.initial))
            self._note(rt, "enter", child.initial)
        raise MachineError("state entry cascade did not settle")

    def _transition(self, rt, frame: _Frame, label: str) -> None:
        node = frame.machine.states[frame.state_id]
        target = node.on.get(label)
        if target is None:
            raise UnhandledOutcome(frame.machine.id, frame.state_id, label)
        frame.state_id = target
        frame.handle = None
        frame.delegating = False
        self._note(rt, "enter", target)


def run(rt, machine_set: MachineSet, max_ticks: int = 2000,
        registry=None, strict: bool = True) -> tuple[str, list[TraceRecord]]:
    """Drive the tick loop until the root machine terminates."""
    executive = Executive(machine_set, registry=registry, strict=strict)
    previous = rt.executive
    rt.executive = executive
    try:
        for _ in range(max_ticks):
            rt.tick()
            if executive.done is not None:
                return executive.done, executive.trace
    finally:
        rt.executive = previous
    raise MachineError(f"machine did not terminate within {max_ticks} ticks")
