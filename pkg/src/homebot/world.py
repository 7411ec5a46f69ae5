"""Grid apartment simulator.

A 4-connected occupancy grid with rooms, movable objects, scripted people
and a single robot. The world only advances through step(), which applies
skill commands and scripted injections in a fixed order, so identical
seeds and command streams replay identical trajectories.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

Cell = tuple[int, int]

FREE = 0
STATIC = -1

HEADINGS = ("N", "E", "S", "W")

# neighbor probe order; fixed so path search is deterministic
_STEPS = ((0, -1), (1, 0), (0, 1), (-1, 0))

DEFAULT_VISIBILITY = 12


class WorldError(Exception):
    pass


class IllegalMove(WorldError):
    pass


class BadEvent(WorldError):
    pass


class BadScenario(WorldError):
    pass


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


class GridMap:
    """Per-cell occupancy: FREE, STATIC, or a positive object id."""

    def __init__(self, width: int, height: int):
        if width < 3 or height < 3:
            raise BadScenario("grid too small")
        self.width = width
        self.height = height
        self._cells = [[FREE] * width for _ in range(height)]
        for x in range(width):
            self._cells[0][x] = STATIC
            self._cells[height - 1][x] = STATIC
        for y in range(height):
            self._cells[y][0] = STATIC
            self._cells[y][width - 1] = STATIC

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def occ(self, cell: Cell) -> int:
        x, y = cell
        return self._cells[y][x]

    def set_occ(self, cell: Cell, value: int) -> None:
        x, y = cell
        self._cells[y][x] = value

    def copy(self) -> "GridMap":
        twin = GridMap.__new__(GridMap)
        twin.width = self.width
        twin.height = self.height
        twin._cells = [row[:] for row in self._cells]
        return twin


@dataclass
class ObjectModel:
    id: int
    name: str
    footprint: tuple[Cell, ...]  # empty while held by the robot
    curved_surface: bool
    dof: int
    category: Optional[str] = None
    # footprint normalized to its minimum cell; survives grasping so a
    # later release can restore the full shape
    shape: tuple[Cell, ...] = ()


@dataclass
class PersonModel:
    id: int
    name: str
    cell: Cell
    waypoints: list[Cell] = field(default_factory=list)
    engaged: bool = False


@dataclass
class RobotState:
    cell: Cell
    heading: str = "E"
    holding: Optional[int] = None


@dataclass
class SensorFrame:
    tick: int
    cells: dict[Cell, int]  # visible cell -> occupancy value
    people: dict[int, Cell]  # visible person id -> cell


# skill commands, applied in batch by step()


@dataclass(frozen=True)
class Move:
    dx: int
    dy: int


@dataclass(frozen=True)
class Rotate:
    heading: str


@dataclass(frozen=True)
class Grasp:
    object_id: int


@dataclass(frozen=True)
class Release:
    cell: Optional[Cell] = None  # None: first free neighbor of the robot


@dataclass(frozen=True)
class Speak:
    text: str


Command = Union[Move, Rotate, Grasp, Release, Speak]


class WorldState:
    def __init__(
        self,
        grid: GridMap,
        rooms: dict[str, tuple[int, int, int, int]],
        pois: dict[str, Cell],
        robot: RobotState,
        seed: int = 0,
        visibility: int = DEFAULT_VISIBILITY,
    ):
        self.grid = grid
        self.rooms = rooms  # name -> inclusive (x1, y1, x2, y2)
        self.pois = pois  # room name -> navigation target cell
        self.robot = robot
        self.objects: dict[int, ObjectModel] = {}
        self.people: dict[int, PersonModel] = {}
        self.tick = 0
        self.seed = seed
        self.visibility = visibility
        self._injections: list[dict] = []
        self._next_id = 1

    # -- construction ------------------------------------------------------

    def fresh_id(self) -> int:
        eid = self._next_id
        self._next_id += 1
        return eid

    def add_object(self, obj: ObjectModel) -> None:
        if not obj.footprint:
            raise BadScenario(f"object {obj.name} has empty footprint")
        if not _connected(obj.footprint):
            raise BadScenario(f"object {obj.name} footprint not connected")
        for cell in obj.footprint:
            if not self.grid.in_bounds(cell) or self.grid.occ(cell) != FREE:
                raise BadScenario(f"object {obj.name} cell {cell} not free")
        for cell in obj.footprint:
            self.grid.set_occ(cell, obj.id)
        obj.shape = _normalize(obj.footprint)
        self.objects[obj.id] = obj
        self._next_id = max(self._next_id, obj.id + 1)

    def add_person(self, person: PersonModel) -> None:
        if not self._walkable(person.cell, ignore=person.id):
            raise BadScenario(f"person {person.name} cell not free")
        for wp in person.waypoints:
            if not self.grid.in_bounds(wp):
                raise BadScenario(f"person {person.name} waypoint out of bounds")
        self.people[person.id] = person
        self._next_id = max(self._next_id, person.id + 1)

    # -- lookups -----------------------------------------------------------

    def object_named(self, name: str) -> Optional[ObjectModel]:
        for obj in self.objects.values():
            if obj.name == name:
                return obj
        return None

    def person_named(self, name: str) -> Optional[PersonModel]:
        for person in self.people.values():
            if person.name == name:
                return person
        return None

    def room_of(self, cell: Cell) -> Optional[str]:
        for name, (x1, y1, x2, y2) in self.rooms.items():
            if x1 <= cell[0] <= x2 and y1 <= cell[1] <= y2:
                return name
        return None

    def _walkable(self, cell: Cell, ignore: Optional[int] = None) -> bool:
        if not self.grid.in_bounds(cell) or self.grid.occ(cell) != FREE:
            return False
        if cell == self.robot.cell:
            return False
        for person in self.people.values():
            if person.id != ignore and person.cell == cell:
                return False
        return True

    # -- injections --------------------------------------------------------

    def inject(self, event: dict) -> None:
        kind = event.get("kind")
        if kind == "tap":
            if not isinstance(event.get("tick"), int):
                raise BadEvent("tap needs an integer tick")
        elif kind == "move_object":
            obj = self.object_named(event.get("object", ""))
            if obj is None:
                raise BadEvent(f"unknown object {event.get('object')!r}")
            to = event.get("to")
            if not (isinstance(to, (list, tuple)) and len(to) == 2):
                raise BadEvent("move_object needs a target cell")
            for cell in _place(obj.shape, tuple(to)):
                occ = self.grid.occ(cell) if self.grid.in_bounds(cell) else STATIC
                if occ != FREE and occ != obj.id:
                    raise BadEvent(f"target cell {cell} occupied")
            has_tick = isinstance(event.get("tick"), int)
            has_trigger = isinstance(event.get("when_holding"), (list, tuple))
            if has_tick == has_trigger:
                raise BadEvent("move_object needs exactly one of tick / when_holding")
        elif kind == "set_waypoints":
            if self.person_named(event.get("person", "")) is None:
                raise BadEvent(f"unknown person {event.get('person')!r}")
            if not isinstance(event.get("tick"), int):
                raise BadEvent("set_waypoints needs an integer tick")
        elif kind == "engage":
            if self.person_named(event.get("person", "")) is None:
                raise BadEvent(f"unknown person {event.get('person')!r}")
            if not isinstance(event.get("tick"), int):
                raise BadEvent("engage needs an integer tick")
        else:
            raise BadEvent(f"unknown injection kind {kind!r}")
        self._injections.append(dict(event))

    def _injection_due(self, event: dict) -> bool:
        if "tick" in event:
            return event["tick"] == self.tick
        holder, obj_name = event["when_holding"]
        del holder  # only the robot can hold things
        obj = self.object_named(obj_name)
        return obj is not None and self.robot.holding == obj.id

    # -- stepping ----------------------------------------------------------

    def step(self, commands: list[tuple[str, Command]]) -> list[dict]:
        """Advance one tick.

        Injections due this tick fire first (triggers are evaluated against
        the pre-step state), then skill commands in list order, then every
        scripted person advances one cell. Command failures do not raise;
        they come back as command_rejected events for the issuing skill.
        """
        events: list[dict] = []
        now = self.tick

        pending = self._injections
        self._injections = []
        for event in pending:
            if self._injection_due(event):
                events.extend(self._apply_injection(event))
            else:
                self._injections.append(event)

        for source, cmd in commands:
            try:
                events.extend(self._apply_command(source, cmd))
            except IllegalMove as err:
                events.append(
                    {
                        "tick": now,
                        "kind": "command_rejected",
                        "source": source,
                        "reason": f"IllegalMove: {err}",
                    }
                )

        for pid in sorted(self.people):
            self._step_person(self.people[pid])

        for event in events:
            event.setdefault("tick", now)
        self.tick = now + 1
        return events

    def _apply_injection(self, event: dict) -> list[dict]:
        kind = event["kind"]
        if kind == "tap":
            return [{"kind": "tap"}]
        if kind == "move_object":
            obj = self.object_named(event["object"])
            target = tuple(event["to"])
            cells = _place(obj.shape, target)
            for cell in cells:
                occ = self.grid.occ(cell) if self.grid.in_bounds(cell) else STATIC
                if occ != FREE and occ != obj.id:
                    return [
                        {
                            "kind": "injection_dropped",
                            "reason": f"target cell {cell} occupied",
                        }
                    ]
            for cell in obj.footprint:
                self.grid.set_occ(cell, FREE)
            if self.robot.holding == obj.id:
                self.robot.holding = None
            obj.footprint = cells
            for cell in cells:
                self.grid.set_occ(cell, obj.id)
            return [{"kind": "object_moved", "object": obj.name, "to": list(target)}]
        if kind == "set_waypoints":
            person = self.person_named(event["person"])
            person.waypoints = [tuple(wp) for wp in event["waypoints"]]
            return [{"kind": "waypoints_changed", "person": person.name}]
        if kind == "engage":
            person = self.person_named(event["person"])
            engaged = bool(event.get("engaged", True))
            if person.engaged == engaged:
                return []
            person.engaged = engaged
            return [
                {"kind": "engagement", "person": person.name, "engaged": engaged}
            ]
        raise BadEvent(kind)

    def _apply_command(self, source: str, cmd: Command) -> list[dict]:
        if isinstance(cmd, Move):
            if abs(cmd.dx) + abs(cmd.dy) != 1:
                raise IllegalMove("move must be one cell along an axis")
            target = (self.robot.cell[0] + cmd.dx, self.robot.cell[1] + cmd.dy)
            if not self.grid.in_bounds(target) or self.grid.occ(target) != FREE:
                raise IllegalMove(f"cell {target} occupied")
            for person in self.people.values():
                if person.cell == target:
                    raise IllegalMove(f"cell {target} occupied by {person.name}")
            self.robot.cell = target
            return []
        if isinstance(cmd, Rotate):
            if cmd.heading not in HEADINGS:
                raise IllegalMove(f"bad heading {cmd.heading!r}")
            self.robot.heading = cmd.heading
            return []
        if isinstance(cmd, Grasp):
            obj = self.objects.get(cmd.object_id)
            if obj is None:
                raise IllegalMove(f"no object {cmd.object_id}")
            if self.robot.holding is not None:
                raise IllegalMove("hand not empty")
            if not any(_adjacent(self.robot.cell, c) for c in obj.footprint):
                raise IllegalMove(f"{obj.name} not adjacent")
            for cell in obj.footprint:
                self.grid.set_occ(cell, FREE)
            obj.footprint = ()
            self.robot.holding = obj.id
            return [{"kind": "grasped", "object": obj.name}]
        if isinstance(cmd, Release):
            if self.robot.holding is None:
                raise IllegalMove("hand empty")
            obj = self.objects[self.robot.holding]
            targets = [cmd.cell] if cmd.cell else [
                (self.robot.cell[0] + dx, self.robot.cell[1] + dy)
                for dx, dy in _STEPS
            ]
            for target in targets:
                cells = _place(obj.shape, tuple(target))
                if all(
                    self.grid.in_bounds(c)
                    and self.grid.occ(c) == FREE
                    and self._walkable(c)
                    for c in cells
                ):
                    obj.footprint = cells
                    for c in cells:
                        self.grid.set_occ(c, obj.id)
                    self.robot.holding = None
                    return [
                        {"kind": "released", "object": obj.name, "to": list(cells[0])}
                    ]
            raise IllegalMove("no free cell to release onto")
        if isinstance(cmd, Speak):
            return [{"kind": "speech", "source": source, "text": cmd.text}]
        raise IllegalMove(f"unknown command {cmd!r}")

    def _step_person(self, person: PersonModel) -> None:
        while person.waypoints and person.cell == person.waypoints[0]:
            person.waypoints.pop(0)
        if not person.waypoints:
            return
        path = self.find_path(person.cell, person.waypoints[0], mover=person.id)
        if path and len(path) > 1:
            person.cell = path[1]

    # -- sensing -----------------------------------------------------------

    def find_path(
        self, start: Cell, goal: Cell, mover: Optional[int] = None
    ) -> Optional[list[Cell]]:
        """Shortest 4-connected path, deterministic tie-break by probe order.

        mover: person id when a person is pathing (the robot then blocks);
        None means the robot is pathing (people block).
        """
        if start == goal:
            return [start]
        parent: dict[Cell, Cell] = {start: start}
        frontier = [start]
        while frontier:
            nxt: list[Cell] = []
            for cell in frontier:
                for dx, dy in _STEPS:
                    cand = (cell[0] + dx, cell[1] + dy)
                    if cand in parent:
                        continue
                    if cand == goal and self._passable(cand, mover):
                        parent[cand] = cell
                        path = [cand]
                        while path[-1] != start:
                            path.append(parent[path[-1]])
                        path.reverse()
                        return path
                    if self._passable(cand, mover):
                        parent[cand] = cell
                        nxt.append(cand)
            frontier = nxt
        return None

    def _passable(self, cell: Cell, mover: Optional[int]) -> bool:
        if not self.grid.in_bounds(cell) or self.grid.occ(cell) != FREE:
            return False
        if mover is None:
            return all(p.cell != cell for p in self.people.values())
        if cell == self.robot.cell:
            return False
        return all(p.id == mover or p.cell != cell for p in self.people.values())

    def sense_ground(self) -> SensorFrame:
        """Line-of-sight visibility out to the configured radius.

        Static cells and object cells block sight to cells behind them;
        people do not.
        """
        origin = self.robot.cell
        radius = self.visibility
        cells: dict[Cell, int] = {}
        for y in range(origin[1] - radius, origin[1] + radius + 1):
            for x in range(origin[0] - radius, origin[0] + radius + 1):
                cell = (x, y)
                if not self.grid.in_bounds(cell):
                    continue
                dx, dy = x - origin[0], y - origin[1]
                if dx * dx + dy * dy > radius * radius:
                    continue
                if self._line_clear(origin, cell):
                    cells[cell] = self.grid.occ(cell)
        people = {
            p.id: p.cell for p in self.people.values() if p.cell in cells
        }
        return SensorFrame(tick=self.tick, cells=cells, people=people)

    def _line_clear(self, a: Cell, b: Cell) -> bool:
        for cell in _line(a, b)[1:-1]:
            if self.grid.occ(cell) != FREE:
                return False
        return True


# ---------------------------------------------------------------------------
# detection operations
# ---------------------------------------------------------------------------


def ground_map_diff(baseline: GridMap, frame: SensorFrame) -> list[list[Cell]]:
    """4-connected clusters of visible cells whose occupancy changed.

    Clusters are ordered by their top-left cell (row, then column), and the
    cells inside each cluster the same way.
    """
    changed = {
        cell for cell, occ in frame.cells.items() if baseline.occ(cell) != occ
    }
    clusters: list[list[Cell]] = []
    while changed:
        seed_cell = min(changed, key=lambda c: (c[1], c[0]))
        cluster = [seed_cell]
        changed.discard(seed_cell)
        queue = [seed_cell]
        while queue:
            cx, cy = queue.pop()
            for dx, dy in _STEPS:
                cand = (cx + dx, cy + dy)
                if cand in changed:
                    changed.discard(cand)
                    cluster.append(cand)
                    queue.append(cand)
        cluster.sort(key=lambda c: (c[1], c[0]))
        clusters.append(cluster)
    clusters.sort(key=lambda cl: (cl[0][1], cl[0][0]))
    return clusters


def classify_movable(obj: ObjectModel) -> bool:
    """Movable iff the object shows a curved surface and at most two
    accumulated degrees of freedom."""
    return obj.curved_surface and obj.dof <= 2


def state_hash(world: WorldState) -> str:
    payload = {
        "tick": world.tick,
        "robot": [list(world.robot.cell), world.robot.heading, world.robot.holding],
        "objects": [
            [o.id, o.name, sorted(o.footprint)]
            for o in sorted(world.objects.values(), key=lambda o: o.id)
        ],
        "people": [
            [p.id, p.name, list(p.cell), p.engaged, [list(w) for w in p.waypoints]]
            for p in sorted(world.people.values(), key=lambda p: p.id)
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------


def load_scenario(source: Union[Path, str, dict], kb=None) -> WorldState:
    """Build a world from a scenario JSON file or parsed dict.

    When a knowledge base is supplied, entities for the robot, rooms,
    objects, people and their concepts are registered there and the world
    reuses those entity ids.
    """
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))

    grid_cfg = data.get("grid", {})
    grid = GridMap(grid_cfg.get("width", 40), grid_cfg.get("height", 30))
    for x1, y1, x2, y2 in data.get("walls", []):
        for y in range(y1, y2 + 1):
            for x in range(x1, x2 + 1):
                grid.set_occ((x, y), STATIC)
    for x, y in data.get("doors", []):
        grid.set_occ((x, y), FREE)

    rooms = {name: tuple(rect) for name, rect in data.get("rooms", {}).items()}
    pois = {name: tuple(cell) for name, cell in data.get("pois", {}).items()}

    robot_cfg = data.get("robot", {})
    robot = RobotState(
        cell=tuple(robot_cfg.get("cell", (1, 1))),
        heading=robot_cfg.get("heading", "E"),
    )
    if grid.occ(robot.cell) != FREE:
        raise BadScenario("robot start cell not free")

    world = WorldState(
        grid,
        rooms,
        pois,
        robot,
        seed=data.get("seed", 0),
        visibility=data.get("visibility", DEFAULT_VISIBILITY),
    )

    ids = _EntityIds(kb)
    ids.concept("object")
    ids.concept("location")
    ids.concept("person")
    ids.subclass("room", "location")
    for child, parent in data.get("concepts", []):
        ids.subclass(child, parent)
    ids.instance("robot", None)
    for name in rooms:
        ids.instance(name, "room")

    for cfg in data.get("objects", []):
        oid = ids.instance(cfg["name"], cfg.get("category") or "object")
        world.add_object(
            ObjectModel(
                id=oid if kb is not None else world.fresh_id(),
                name=cfg["name"],
                footprint=tuple(tuple(c) for c in cfg["cells"]),
                curved_surface=bool(cfg.get("curved_surface", False)),
                dof=int(cfg.get("dof", 0)),
                category=cfg.get("category"),
            )
        )
    for cfg in data.get("people", []):
        pid = ids.instance(cfg["name"], "person")
        world.add_person(
            PersonModel(
                id=pid if kb is not None else world.fresh_id(),
                name=cfg["name"],
                cell=tuple(cfg["cell"]),
                waypoints=[tuple(c) for c in cfg.get("waypoints", [])],
                engaged=bool(cfg.get("engaged", False)),
            )
        )
    for event in data.get("injections", []):
        world.inject(event)
    return world


class _EntityIds:
    """Registers scenario entities in the knowledge base, if one is given."""

    def __init__(self, kb):
        self.kb = kb

    def concept(self, name: str) -> Optional[int]:
        if self.kb is None:
            return None
        from homebot.kb import CONCEPT

        return self.kb.upsert_entity(CONCEPT, name)

    def subclass(self, child: str, parent: str) -> None:
        if self.kb is None:
            return
        from homebot.kb import SUBCLASS_OF, Attribute

        cid = self.concept(child)
        pid = self.concept(parent)
        self.kb.assert_attr(Attribute.entity(cid, SUBCLASS_OF, pid))

    def instance(self, name: str, category: Optional[str]) -> Optional[int]:
        if self.kb is None:
            return None
        from homebot.kb import INSTANCE, INSTANCE_OF, Attribute

        eid = self.kb.upsert_entity(INSTANCE, name)
        if category:
            cid = self.concept(category)
            self.kb.assert_attr(Attribute.entity(eid, INSTANCE_OF, cid))
        return eid


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def facing(origin: Cell, target: Cell) -> str:
    """Heading that points from origin toward target, dominant axis first;
    exact diagonals prefer the x axis."""
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    if dx == 0 and dy == 0:
        return "N"
    if abs(dx) >= abs(dy):
        return "E" if dx > 0 else "W"
    return "S" if dy > 0 else "N"


def _adjacent(a: Cell, b: Cell) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _normalize(cells: tuple[Cell, ...]) -> tuple[Cell, ...]:
    base = min(cells)
    return tuple(sorted((x - base[0], y - base[1]) for x, y in cells))


def _place(shape: tuple[Cell, ...], anchor: Cell) -> tuple[Cell, ...]:
    """Render a normalized shape with its minimum cell on anchor."""
    return tuple((x + anchor[0], y + anchor[1]) for x, y in shape)


def _connected(cells: tuple[Cell, ...]) -> bool:
    todo = {cells[0]}
    seen: set[Cell] = set()
    rest = set(cells)
    while todo:
        cell = todo.pop()
        seen.add(cell)
        for dx, dy in _STEPS:
            cand = (cell[0] + dx, cell[1] + dy)
            if cand in rest and cand not in seen:
                todo.add(cand)
    return seen == rest


def _line(a: Cell, b: Cell) -> list[Cell]:
    """Bresenham cells from a to b, endpoints included."""
    x0, y0 = a
    x1, y1 = b
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = []
    while True:
        cells.append((x0, y0))
        if (x0, y0) == (x1, y1):
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return cells
