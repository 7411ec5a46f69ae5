"""Plan execution with effect monitoring, replanning and milestones.

An episode dispatches each plan step's skill, waits for the outcome, and
one tick later compares the knowledge base against the step's declared
effects. Divergence or failure triggers a replan from a fresh snapshot
while the replan budget lasts. Milestones stream to the reactive layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

from homebot.planning import (
    Domain,
    Fluent,
    Goal,
    Plan,
    PlanStep,
    Unsolvable,
    plan as make_plan,
    state_from_kb,
)
from homebot.runtime import Runtime
from homebot.skills import DONE, Failed, Preempted, Succeeded

ACTION_COMPLETED = "ActionCompleted"
ACTION_FAILED = "ActionFailed"
DIVERGENCE = "Divergence"
PLAN_COMPLETED = "PlanCompleted"
GOAL_ACHIEVED = "GoalAchieved"
GOAL_ABANDONED = "GoalAbandoned"

DEFAULT_HORIZON = 12
DEFAULT_BUDGET = 3


@dataclass(frozen=True)
class Milestone:
    kind: str
    tick: int
    index: Optional[int] = None
    reason: Optional[str] = None
    missing: tuple[Fluent, ...] = ()
    extra: tuple[Fluent, ...] = ()


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class Divergence:
    missing: tuple[Fluent, ...]
    extra: tuple[Fluent, ...]


def check_effects(step: PlanStep, observed: frozenset[Fluent]) -> Union[Ok, Divergence]:
    """Ok iff every add effect is present and every del effect absent."""
    missing = tuple(sorted(step.add - observed, key=str))
    extra = tuple(sorted(step.delete & observed, key=str))
    if missing or extra:
        return Divergence(missing=missing, extra=extra)
    return Ok()


@dataclass(frozen=True)
class ExecStatus:
    kind: str  # Completed | Diverged | Failed | Preempted
    index: Optional[int] = None


@dataclass(frozen=True)
class SolveStatus:
    kind: str  # Achieved | Abandoned
    reason: Optional[str] = None


class PlanRun:
    """Advances one plan a step per outcome, checking effects as it goes."""

    def __init__(self, plan_: Plan, domain: Domain,
                 notify: Callable[[Milestone], None]):
        self.plan = plan_
        self.domain = domain
        self.notify = notify
        self.index = 0
        self.handle = None
        self.status: Optional[ExecStatus] = None
        self.milestones: list[Milestone] = []

    @property
    def done(self) -> bool:
        return self.status is not None

    def _milestone(self, kind: str, tick: int, **extra) -> None:
        m = Milestone(kind=kind, tick=tick, **extra)
        self.milestones.append(m)
        self.notify(m)

    def step(self, rt: Runtime) -> None:
        if self.done:
            return
        if self.handle is None:
            if self.index >= len(self.plan.steps):
                self._milestone(PLAN_COMPLETED, rt.now)
                self.status = ExecStatus("Completed")
                return
            self.handle = rt.dispatch(self.plan.steps[self.index].skill_goal)
            return
        outcome = rt.outcome_of(self.handle)
        if outcome is None:
            return
        # the outcome landed last tick, so the KB now shows one further
        # world step: the fixed observation point for effect checks
        step = self.plan.steps[self.index]
        self.handle = None
        if isinstance(outcome, Succeeded):
            verdict = check_effects(step, state_from_kb(rt.kb, self.domain))
            if isinstance(verdict, Ok):
                self._milestone(ACTION_COMPLETED, rt.now, index=self.index)
                self.index += 1
            else:
                self._milestone(
                    DIVERGENCE,
                    rt.now,
                    index=self.index,
                    missing=verdict.missing,
                    extra=verdict.extra,
                )
                self.status = ExecStatus("Diverged", self.index)
        elif isinstance(outcome, Failed):
            self._milestone(ACTION_FAILED, rt.now, index=self.index,
                            reason=outcome.reason)
            self.status = ExecStatus("Failed", self.index)
        elif isinstance(outcome, Preempted):
            self.status = ExecStatus("Preempted", self.index)

    def preempt(self, rt: Runtime) -> None:
        if self.handle is not None and self.handle.state != DONE:
            rt.cancel(self.handle)


class GoalRun:
    """One goal episode: plan, execute, replan on trouble, finish with a
    terminal milestone either way."""

    def __init__(
        self,
        goal: Goal,
        domain: Domain,
        notify: Callable[[Milestone], None],
        budget: int = DEFAULT_BUDGET,
        horizon: int = DEFAULT_HORIZON,
    ):
        self.goal = goal
        self.domain = domain
        self.notify = notify
        self.budget = budget
        self.horizon = horizon
        self.plans_generated = 0
        self.plans: list[Plan] = []
        self.run: Optional[PlanRun] = None
        self.status: Optional[SolveStatus] = None
        self.milestones: list[Milestone] = []
        self._preempt_requested = False

    @property
    def done(self) -> bool:
        return self.status is not None

    def _note(self, m: Milestone) -> None:
        self.milestones.append(m)
        self.notify(m)

    def _terminal(self, rt: Runtime, kind: str, reason: Optional[str] = None):
        self._note(Milestone(kind=kind, tick=rt.now, reason=reason))
        self.status = SolveStatus(
            "Achieved" if kind == GOAL_ACHIEVED else "Abandoned", reason
        )

    def step(self, rt: Runtime) -> None:
        if self.done:
            return
        if self._preempt_requested and self.run is None:
            self._terminal(rt, GOAL_ABANDONED, "preempted")
            return
        if self.run is None:
            state = state_from_kb(rt.kb, self.domain)
            result = make_plan(self.domain, state, self.goal, self.horizon)
            if isinstance(result, Unsolvable):
                self._terminal(rt, GOAL_ABANDONED,
                               f"unsolvable within horizon {result.horizon}")
                return
            self.plans_generated += 1
            self.plans.append(result)
            self.run = PlanRun(result, self.domain, self._note)
            return
        self.run.step(rt)
        if not self.run.done:
            return
        status = self.run.status
        self.run = None
        if status.kind == "Completed":
            state = state_from_kb(rt.kb, self.domain)
            if self.goal.satisfied_by(state):
                self._terminal(rt, GOAL_ACHIEVED)
                return
            # plan finished but the goal does not hold: treat as divergence
        elif status.kind == "Preempted":
            self._terminal(rt, GOAL_ABANDONED, "preempted")
            return
        if self.budget <= 0:
            self._terminal(rt, GOAL_ABANDONED, "budget exhausted")
            return
        self.budget -= 1  # replan from a fresh snapshot next tick

    def preempt(self, rt: Runtime) -> None:
        self._preempt_requested = True
        if self.run is not None:
            self.run.preempt(rt)

    def abort(self, rt: Runtime) -> None:
        """Stop immediately on behalf of a supervisor that is taking over.

        Unlike `preempt` this ends the episode in the same tick and emits
        no terminal milestone: the supervisor already knows why it stopped.
        """
        if self.done:
            return
        if self.run is not None:
            self.run.preempt(rt)
            if self.run.status is None:
                self.run.status = ExecStatus("Preempted", self.run.index)
            self.run = None
        self.status = SolveStatus("Abandoned", "preempted")


class Deliberative:
    """The tick-loop adapter: hosts at most one goal episode at a time and
    forwards milestones to the reactive layer and the event log."""

    def __init__(self, domain: Domain):
        self.domain = domain
        self.episode: Optional[GoalRun] = None
        self.outbox: list[Milestone] = []
        self._rt: Optional[Runtime] = None

    def submit(self, rt: Runtime, goal: Goal, budget: int = DEFAULT_BUDGET,
               horizon: int = DEFAULT_HORIZON) -> GoalRun:
        if self.episode is not None and not self.episode.done:
            raise RuntimeError("an episode is already running")
        self._rt = rt
        self.episode = GoalRun(goal, self.domain, self._milestone, budget, horizon)
        return self.episode

    def _milestone(self, m: Milestone) -> None:
        self.outbox.append(m)
        if self._rt is not None:
            self._rt.publish(
                {
                    "kind": "milestone",
                    "milestone": m.kind,
                    "tick": m.tick,
                    "index": m.index,
                    "reason": m.reason,
                    "missing": [str(f) for f in m.missing],
                    "extra": [str(f) for f in m.extra],
                }
            )

    def take_milestones(self) -> list[Milestone]:
        out = self.outbox
        self.outbox = []
        return out

    def abort(self, rt: Runtime) -> None:
        if self.episode is not None and not self.episode.done:
            self.episode.abort(rt)

    def step(self, rt: Runtime) -> None:
        self._rt = rt
        if self.episode is not None and not self.episode.done:
            self.episode.step(rt)


# -- synchronous drivers (tests and the plan/run CLI) -------------------------


def execute(rt: Runtime, domain: Domain, plan_: Plan,
            max_ticks: int = 2000) -> tuple[list[Milestone], ExecStatus]:
    """Run one plan to its final status, driving the tick loop."""
    run = PlanRun(plan_, domain, lambda m: None)
    _drive(rt, run, max_ticks)
    return run.milestones, run.status


def solve_goal(
    rt: Runtime,
    domain: Domain,
    goal: Goal,
    budget: int = DEFAULT_BUDGET,
    horizon: int = DEFAULT_HORIZON,
    max_ticks: int = 5000,
) -> tuple[GoalRun, SolveStatus]:
    """Run one goal episode to its final status, driving the tick loop."""
    run = GoalRun(goal, domain, lambda m: None, budget, horizon)
    _drive(rt, run, max_ticks)
    return run, run.status


class _Adapter:
    def __init__(self, run):
        self.run = run

    def step(self, rt: Runtime) -> None:
        self.run.step(rt)


def _drive(rt: Runtime, run, max_ticks: int) -> None:
    previous = rt.deliberative
    rt.deliberative = _Adapter(run)
    try:
        for _ in range(max_ticks):
            if run.done:
                return
            rt.tick()
        raise AssertionError("episode did not finish in time")
    finally:
        rt.deliberative = previous
