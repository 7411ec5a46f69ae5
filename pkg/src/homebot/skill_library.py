"""The robot's simulated skill pool.

Each behavior is a per-invocation stepper advanced once per tick. They
observe the world read-only and act through world commands; results land
in the knowledge base via outcome payloads and the runtime mirror.
"""

from __future__ import annotations

import math
from typing import Optional

from homebot.kb import Attribute
from homebot.skills import SkillDescriptor, SkillRegistry
from homebot.world import Grasp, Move, Release, Rotate, Speak, classify_movable, facing

DETECT_BUDGET = 8  # scan ticks before detect_target gives up

_SCAN_ORDER = ("N", "E", "S", "W")


def _step_toward(ctx, path) -> None:
    nxt = path[1]
    here = ctx.world.robot.cell
    ctx.command(Move(nxt[0] - here[0], nxt[1] - here[1]))


def _entity(ctx, name: str) -> Optional[int]:
    if ctx.kb is None:
        return None
    return ctx.kb.entity_named(name)


class NavigateTo:
    """Drive to a room's navigation point, one cell per tick."""

    def __init__(self):
        self.announced = False

    def step(self, ctx):
        dest = ctx.args["destination"]
        poi = ctx.world.pois.get(dest)
        if poi is None:
            ctx.fail(f"unknown destination {dest}")
            return
        if ctx.world.robot.cell == tuple(poi):
            payload = []
            robot, room = _entity(ctx, "robot"), _entity(ctx, dest)
            if robot and room:
                payload.append(Attribute.entity(robot, "at", room))
            ctx.succeed(tuple(payload))
            return
        if not self.announced:
            ctx.feedback(f"en route to {dest}")
            self.announced = True
        path = ctx.world.find_path(ctx.world.robot.cell, tuple(poi))
        if path is None:
            ctx.fail("no path")
            return
        _step_toward(ctx, path)


class PickObject:
    """Approach an object in the current room and grasp it."""

    def step(self, ctx):
        obj = ctx.world.object_named(ctx.args["object"])
        if obj is None:
            ctx.fail(f"unknown object {ctx.args['object']}")
            return
        if ctx.world.robot.holding == obj.id:
            payload = []
            robot = _entity(ctx, "robot")
            if robot and ctx.kb.has_entity(obj.id):
                payload.append(Attribute.entity(robot, "holding", obj.id))
            ctx.succeed(tuple(payload))
            return
        if ctx.world.robot.holding is not None:
            ctx.fail("hand not empty")
            return
        if not obj.footprint:
            ctx.fail(f"{obj.name} is not anywhere graspable")
            return
        if not classify_movable(obj):
            ctx.fail(f"{obj.name} is not movable")
            return
        # cross-room transport belongs to the deliberative layer
        obj_room = ctx.world.room_of(min(obj.footprint))
        robot_room = ctx.world.room_of(ctx.world.robot.cell)
        if obj_room is not None and robot_room is not None and obj_room != robot_room:
            ctx.fail(f"{obj.name} is not in this room")
            return
        here = ctx.world.robot.cell
        if any(abs(here[0] - x) + abs(here[1] - y) == 1 for x, y in obj.footprint):
            ctx.command(Grasp(obj.id))
            return
        path = self._approach(ctx, obj)
        if path is None:
            ctx.fail("no path")
            return
        _step_toward(ctx, path)

    def _approach(self, ctx, obj):
        world = ctx.world
        sides = set()
        for x, y in obj.footprint:
            for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
                sides.add((x + dx, y + dy))
        best = None
        for cell in sorted(sides, key=lambda c: (c[1], c[0])):
            path = world.find_path(world.robot.cell, cell)
            if path is not None and (best is None or len(path) < len(best)):
                best = path
        return best


class PlaceObject:
    """Release the held object onto a free neighboring cell."""

    def __init__(self):
        self.released = False

    def step(self, ctx):
        obj = ctx.world.object_named(ctx.args["object"])
        if obj is None:
            ctx.fail(f"unknown object {ctx.args['object']}")
            return
        if ctx.world.robot.holding != obj.id:
            if self.released:
                payload = []
                room = ctx.world.room_of(min(obj.footprint)) if obj.footprint else None
                room_id = _entity(ctx, room) if room else None
                if room_id and ctx.kb.has_entity(obj.id):
                    payload.append(Attribute.entity(obj.id, "at", room_id))
                ctx.succeed(tuple(payload))
            else:
                ctx.fail(f"not holding {obj.name}")
            return
        ctx.command(Release())
        self.released = True


class SpeakText:
    def step(self, ctx):
        ctx.command(Speak(ctx.args["text"]))
        ctx.succeed()


class AnswerQuestion:
    """Answer a where-is question from the knowledge base, out loud."""

    def step(self, ctx):
        question = ctx.args["question"].strip().rstrip("?").lower()
        answer = "i do not know"
        if question.startswith("where is ") and ctx.kb is not None:
            name = question[len("where is "):].strip()
            if name.startswith("the "):
                name = name[4:]
            eid = ctx.kb.entity_named(name)
            if eid is not None:
                from homebot.kb import QueryPattern

                hits = ctx.kb.query(QueryPattern(subject=eid, name="at"))
                if hits:
                    room = ctx.kb.entity(int(hits[0].value)).name
                    answer = f"the {name} is in the {room.replace('_', ' ')}"
        ctx.command(Speak(answer))
        payload = []
        robot = _entity(ctx, "robot")
        if robot:
            payload.append(Attribute.text(robot, "last_answer", answer))
        ctx.succeed(tuple(payload))


class DetectTarget:
    """Scan for the target person, rotating in place, with a tick budget."""

    def __init__(self):
        self.budget = DETECT_BUDGET

    def step(self, ctx):
        person = ctx.world.person_named(ctx.args["target"])
        if person is not None and person.id in ctx.world.sense_ground().people:
            ctx.succeed()
            return
        self.budget -= 1
        if self.budget <= 0:
            ctx.fail("target not found")
            return
        heading = ctx.world.robot.heading
        nxt = _SCAN_ORDER[(_SCAN_ORDER.index(heading) + 1) % 4]
        ctx.command(Rotate(nxt))


class TrackHead:
    """Turn the head until it faces the target."""

    def step(self, ctx):
        person = ctx.world.person_named(ctx.args["target"])
        if person is None or person.id not in ctx.world.sense_ground().people:
            ctx.fail("target lost")
            return
        want = facing(ctx.world.robot.cell, person.cell)
        if ctx.world.robot.heading == want:
            ctx.succeed()
            return
        ctx.command(Rotate(want))


class NavigateToTarget:
    """Station-keep behind the target: close in while it is farther than
    the follow distance, never finish on its own."""

    def step(self, ctx):
        person = ctx.world.person_named(ctx.args["target"])
        if person is None or person.id not in ctx.world.sense_ground().people:
            ctx.fail("target lost")
            return
        keep = float(ctx.args["follow_distance"])
        here = ctx.world.robot.cell
        if math.dist(here, person.cell) <= keep:
            return  # close enough; hold position
        path = self._path_to_side(ctx, person)
        if path is not None and len(path) > 1:
            _step_toward(ctx, path)

    def _path_to_side(self, ctx, person):
        world = ctx.world
        best = None
        cells = [
            (person.cell[0] + dx, person.cell[1] + dy)
            for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0))
        ]
        for cell in sorted(cells, key=lambda c: (c[1], c[0])):
            path = world.find_path(world.robot.cell, cell)
            if path is not None and (best is None or len(path) < len(best)):
                best = path
        return best


class TapDetector:
    """Monitor: succeeds when a wrist tap arrives."""

    def step(self, ctx):
        for event in ctx.events():
            if event["kind"] == "tap":
                ctx.succeed()
                return


class EngagementDetector:
    """Monitor: succeeds when a person engages the robot."""

    def step(self, ctx):
        for event in ctx.events():
            if event["kind"] == "engagement" and event.get("engaged"):
                ctx.succeed()
                return


class Idle:
    """Runs until preempted."""

    def step(self, ctx):
        pass


class FollowPerson:
    """Behavior-tree backed following; runs until preempted or the tree
    reports failure."""

    def __init__(self):
        self.runner = None

    def step(self, ctx):
        from homebot.bt import FAILURE, BTRunner, person_following_tree

        if self.runner is None:
            tree = person_following_tree(ctx.args["target"])
            self.runner = BTRunner(tree, ctx.runtime)
        if self.runner.tick() == FAILURE:
            self.runner.cancel_all()
            ctx.fail("lost the person")

    def on_cancel(self, ctx):
        if self.runner is not None:
            self.runner.cancel_all()


def register_all(registry: SkillRegistry) -> None:
    entries = [
        (SkillDescriptor("navigate_to", (("destination", "location-ref"),)),
         NavigateTo),
        (SkillDescriptor("pick_object", (("object", "entity-ref"),)), PickObject),
        (SkillDescriptor("place_object", (("object", "entity-ref"),)), PlaceObject),
        (SkillDescriptor("speak", (("text", "text"),)), SpeakText),
        (SkillDescriptor("answer_question", (("question", "text"),)),
         AnswerQuestion),
        (SkillDescriptor("detect_target", (("target", "person-ref"),)),
         DetectTarget),
        (SkillDescriptor("track_head", (("target", "person-ref"),)), TrackHead),
        (SkillDescriptor(
            "navigate_to_target",
            (("target", "person-ref"), ("follow_distance", "number")),
        ), NavigateToTarget),
        (SkillDescriptor("tap_detector", ()), TapDetector),
        (SkillDescriptor("engagement_detector", ()), EngagementDetector),
        (SkillDescriptor("idle", ()), Idle),
        (SkillDescriptor("follow_person", (("target", "person-ref"),)),
         FollowPerson),
    ]
    for descriptor, factory in entries:
        registry.register(descriptor, factory)
