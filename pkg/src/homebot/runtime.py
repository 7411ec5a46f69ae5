"""Cooperative tick loop that owns the world, the knowledge base and every
skill invocation.

One tick runs, in order: external control commands, the reactive layer,
the deliberative layer, one step of every active skill, one world step,
then a world-to-knowledge-base mirror. All mutation happens inside tick(),
so callers on other threads go through the control queue and the whole
run is replayable.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Callable, Optional

from homebot.kb import Attribute, KnowledgeBase, QueryPattern
from homebot.skills import (
    ACTIVE,
    DONE,
    PENDING,
    Failed,
    Invocation,
    InvocationHandle,
    Preempted,
    SkillError,
    SkillFeedback,
    SkillGoal,
    SkillOutcome,
    SkillRegistry,
    Succeeded,
    Timeout,
    UnknownInvocation,
)
from homebot.world import Command, WorldState

# attribute names the mirror owns; everything else in the KB is left alone
_MIRRORED = ("at", "holding", "hand_empty")


class SkillContext:
    """Per-invocation view of the runtime handed to behavior steppers."""

    def __init__(self, runtime: "Runtime", invocation: Invocation):
        self._rt = runtime
        self._inv = invocation

    @property
    def args(self) -> dict:
        return self._inv.goal.args

    @property
    def world(self) -> WorldState:
        return self._rt.world

    @property
    def kb(self) -> Optional[KnowledgeBase]:
        return self._rt.kb

    @property
    def tick(self) -> int:
        return self._rt.now

    @property
    def runtime(self) -> "Runtime":
        return self._rt

    @property
    def blackboard(self) -> dict:
        return self._rt.blackboard

    def events(self) -> list[dict]:
        """World events from the previous tick."""
        return self._rt.last_events

    def feedback(self, note: str) -> None:
        self._rt._emit_feedback(self._inv, note)

    def command(self, cmd: Command) -> None:
        self._rt._submit_command(self._inv, cmd)

    def succeed(self, payload: tuple[Attribute, ...] = ()) -> None:
        self._rt._finish(self._inv, Succeeded(tuple(payload)))

    def fail(self, reason: str) -> None:
        self._rt._finish(self._inv, Failed(reason))

    @property
    def done(self) -> bool:
        return self._inv.state == DONE


class Runtime:
    def __init__(
        self,
        world: WorldState,
        kb: Optional[KnowledgeBase] = None,
        registry: Optional[SkillRegistry] = None,
    ):
        self.world = world
        self.kb = kb
        self.registry = registry or SkillRegistry()
        self.blackboard: dict = {}
        self.operator_inbox: deque[str] = deque()
        self.executive = None
        self.deliberative = None

        self.invocations: dict[int, Invocation] = {}
        self.last_events: list[dict] = []
        self.event_log: list[dict] = []
        self._feedback: dict[str, list[SkillFeedback]] = {
            "reactive": [],
            "deliberative": [],
        }

        self._next_inv = 1
        self._lock = threading.RLock()
        self._cv = threading.Condition(self._lock)
        self._control: deque[Callable[[], None]] = deque()
        self._commands: list[tuple[int, Command]] = []
        self._command_owners: set[int] = set()
        self._tick_owner: Optional[int] = None
        self.loop_running = False

        if self.kb is not None:
            self._mirror()

    @property
    def now(self) -> int:
        return self.world.tick

    # -- external entry points ----------------------------------------------

    def post(self, fn: Callable[[], None]) -> None:
        """Queue a control action to run at the start of the next tick."""
        with self._lock:
            self._control.append(fn)

    def post_operator_text(self, text: str) -> None:
        self.post(lambda: self.operator_inbox.append(text))

    def dispatch(self, goal: SkillGoal) -> InvocationHandle:
        self.registry.validate_goal(goal)
        factory = self.registry.factory(goal.skill)
        with self._lock:
            inv = Invocation(self._next_inv, goal, factory(), self.now)
            self._next_inv += 1
            self.invocations[inv.id] = inv
        return InvocationHandle(inv)

    def cancel(self, handle) -> None:
        inv = self._record(handle)
        if inv.state == DONE:
            return
        inv.cancel_requested = True
        if inv.cancel_tick is None:
            inv.cancel_tick = self.now
        if self._in_tick():
            self._finish(inv, Preempted())
        else:
            self.post(lambda: None)  # wake the loop; tick applies the flag

    def await_outcome(self, handle, timeout: int) -> SkillOutcome:
        """Block (or, with no loop running, drive ticks) until the outcome
        lands or `timeout` ticks pass."""
        inv = self._record(handle)
        deadline = self.now + timeout
        while True:
            if inv.outcome is not None:
                return inv.outcome
            if self.now >= deadline:
                raise Timeout(f"invocation i{inv.id} still {inv.state}")
            if self.loop_running:
                with self._cv:
                    self._cv.wait(timeout=0.5)
            else:
                self.tick()

    def outcome_of(self, handle) -> Optional[SkillOutcome]:
        return self._record(handle).outcome

    def publish(self, event: dict) -> None:
        event.setdefault("tick", self.now)
        self.event_log.append(event)
        with self._cv:
            self._cv.notify_all()

    def take_feedback(self, supervisor: str) -> list[SkillFeedback]:
        out = self._feedback[supervisor]
        self._feedback[supervisor] = []
        return out

    # -- the tick pipeline ---------------------------------------------------

    def tick(self) -> None:
        self._tick_owner = threading.get_ident()
        try:
            with self._lock:
                control = list(self._control)
                self._control.clear()
            for fn in control:
                fn()

            if self.executive is not None:
                self.executive.step(self)
            if self.deliberative is not None:
                self.deliberative.step(self)

            self._step_skills()

            commands = self._commands
            self._commands = []
            self._command_owners = set()
            events = self.world.step(commands)
            self.last_events = events
            for event in events:
                self.event_log.append(event)

            if self.kb is not None:
                self._mirror()
        finally:
            self._tick_owner = None
        with self._cv:
            self._cv.notify_all()

    def _step_skills(self) -> None:
        with self._lock:
            ids = sorted(self.invocations)
        for inv_id in ids:
            inv = self.invocations[inv_id]
            if inv.state == DONE:
                continue
            if inv.cancel_requested:
                self._finish(inv, Preempted())
                continue
            if inv.dispatch_tick >= self.now:
                continue  # dispatched this tick; first step is next tick
            rejection = self._rejection_for(inv.id)
            if rejection is not None:
                self._finish(inv, Failed(rejection))
                continue
            if inv.state == PENDING:
                inv.state = ACTIVE
            ctx = SkillContext(self, inv)
            try:
                inv.behavior.step(ctx)
            except Exception as err:  # a skill bug must not kill the loop
                if inv.state != DONE:
                    self._finish(inv, Failed(f"{type(err).__name__}: {err}"))

    def _rejection_for(self, inv_id: int) -> Optional[str]:
        for event in self.last_events:
            if event["kind"] == "command_rejected" and event["source"] == inv_id:
                return event["reason"]
        return None

    # -- invocation bookkeeping ----------------------------------------------

    def _record(self, handle) -> Invocation:
        inv_id = handle.id if isinstance(handle, InvocationHandle) else handle
        with self._lock:
            inv = self.invocations.get(inv_id)
        if inv is None:
            raise UnknownInvocation(f"i{inv_id}")
        return inv

    def _in_tick(self) -> bool:
        return self._tick_owner == threading.get_ident()

    def _emit_feedback(self, inv: Invocation, note: str) -> None:
        if inv.state == DONE:
            raise SkillError("feedback after outcome")
        fb = SkillFeedback(inv.id, note, self.now)
        inv.feedback.append(fb)
        self._feedback[inv.goal.supervisor].append(fb)

    def _submit_command(self, inv: Invocation, cmd: Command) -> None:
        if inv.id in self._command_owners:
            raise SkillError(f"i{inv.id} already issued a command this tick")
        self._command_owners.add(inv.id)
        self._commands.append((inv.id, cmd))

    def _finish(self, inv: Invocation, outcome: SkillOutcome) -> None:
        if inv.outcome is not None:
            raise SkillError(f"i{inv.id} already has an outcome")
        inv.outcome = outcome
        inv.outcome_tick = self.now
        inv.state = DONE
        if isinstance(outcome, Preempted):
            hook = getattr(inv.behavior, "on_cancel", None)
            if hook is not None:
                hook(SkillContext(self, inv))
        if isinstance(outcome, Succeeded) and self.kb is not None:
            for attr in outcome.payload:
                self.kb.assert_attr(attr)
        self.publish(
            {
                "kind": "outcome",
                "invocation": inv.id,
                "skill": inv.skill,
                "variant": type(outcome).__name__,
            }
        )

    # -- world to knowledge base mirror ---------------------------------------

    def _mirror(self) -> None:
        """Rewrite the mirrored situated facts from the current world.

        Sensing is perfect at desk scale: at/holding/hand_empty always match
        the world. Entities missing from the KB are skipped.
        """
        kb = self.kb
        robot_id = kb.entity_named("robot")
        if robot_id is None:
            return
        desired: set[Attribute] = set()

        def room_attr(subject: int, cell) -> None:
            room = self.world.room_of(cell)
            if room is not None:
                room_id = kb.entity_named(room)
                if room_id is not None:
                    desired.add(Attribute.entity(subject, "at", room_id))

        room_attr(robot_id, self.world.robot.cell)
        held = self.world.robot.holding
        if held is not None and kb.has_entity(held):
            desired.add(Attribute.entity(robot_id, "holding", held))
        else:
            desired.add(Attribute.text(robot_id, "hand_empty", "true"))
        for obj in self.world.objects.values():
            if obj.footprint and kb.has_entity(obj.id):
                room_attr(obj.id, min(obj.footprint))
        for person in self.world.people.values():
            if kb.has_entity(person.id):
                room_attr(person.id, person.cell)

        existing = set()
        for name in _MIRRORED:
            existing.update(kb.query(QueryPattern(name=name)))
        for attr in sorted(existing - desired, key=_attr_key):
            kb.retract_attr(attr)
        for attr in sorted(desired - existing, key=_attr_key):
            kb.assert_attr(attr)


def _attr_key(attr: Attribute):
    return (attr.subject, attr.name, attr.value_type, str(attr.value))
