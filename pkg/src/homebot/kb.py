"""Entity/attribute knowledge base shared by every control layer.

The store keeps a concept network (``instance_of`` / ``subclass_of`` edges)
plus situated facts as a set of attribute triples. All read results are
deterministically ordered so the rest of the system can be replayed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

CONCEPT = "concept"
INSTANCE = "instance"

INSTANCE_OF = "instance_of"
SUBCLASS_OF = "subclass_of"

ValueType = Union[int, float, str]


class KnowledgeBaseError(Exception):
    pass


class InvalidName(KnowledgeBaseError):
    pass


class UnknownEntity(KnowledgeBaseError):
    def __init__(self, entity_id: int):
        super().__init__(f"unknown entity id {entity_id}")
        self.entity_id = entity_id


@dataclass(frozen=True)
class Entity:
    id: int
    kind: str  # CONCEPT or INSTANCE
    name: str


@dataclass(frozen=True)
class Attribute:
    """One (subject, name, value) triple.

    ``value_type`` disambiguates entity ids from plain numbers; use the
    ``entity`` / ``number`` / ``text`` constructors instead of building
    instances by hand.
    """

    subject: int
    name: str
    value: ValueType
    value_type: str  # "entity" | "number" | "text"

    @staticmethod
    def entity(subject: int, name: str, value: int) -> "Attribute":
        return Attribute(subject, name, int(value), "entity")

    @staticmethod
    def number(subject: int, name: str, value: float) -> "Attribute":
        return Attribute(subject, name, value, "number")

    @staticmethod
    def text(subject: int, name: str, value: str) -> "Attribute":
        return Attribute(subject, name, value, "text")


# A wildcard position in a query pattern.
_WILD = None


@dataclass(frozen=True)
class QueryPattern:
    subject: Optional[int] = _WILD
    name: Optional[str] = _WILD
    value: Optional[ValueType] = _WILD
    value_type: Optional[str] = _WILD


class KnowledgeBase:
    """In-memory triple store with set semantics and deterministic reads."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._entities: dict[int, Entity] = {}
        self._by_name: dict[tuple[str, str], int] = {}
        self._next_id = 1
        # attribute -> insertion sequence number (stable query ordering)
        self._attrs: dict[Attribute, int] = {}
        self._next_seq = 0

    # -- entities ----------------------------------------------------------

    def upsert_entity(self, kind: str, name: str) -> int:
        if kind not in (CONCEPT, INSTANCE):
            raise InvalidName(f"bad entity kind {kind!r}")
        if not name or not name.strip():
            raise InvalidName("entity name must be nonempty")
        with self._lock:
            key = (kind, name)
            existing = self._by_name.get(key)
            if existing is not None:
                return existing
            eid = self._next_id
            self._next_id += 1
            self._entities[eid] = Entity(eid, kind, name)
            self._by_name[key] = eid
            return eid

    def entity(self, entity_id: int) -> Entity:
        with self._lock:
            ent = self._entities.get(entity_id)
        if ent is None:
            raise UnknownEntity(entity_id)
        return ent

    def has_entity(self, entity_id: int) -> bool:
        with self._lock:
            return entity_id in self._entities

    def find_entity(self, kind: str, name: str) -> Optional[int]:
        with self._lock:
            return self._by_name.get((kind, name))

    def entity_named(self, name: str) -> Optional[int]:
        """Instance id for ``name``, falling back to a concept of that name."""
        with self._lock:
            eid = self._by_name.get((INSTANCE, name))
            if eid is None:
                eid = self._by_name.get((CONCEPT, name))
            return eid

    def entities(self) -> list[Entity]:
        with self._lock:
            return [self._entities[i] for i in sorted(self._entities)]

    # -- attributes --------------------------------------------------------

    def assert_attr(self, attr: Attribute) -> None:
        self._check_refs(attr)
        with self._lock:
            if attr not in self._attrs:
                self._attrs[attr] = self._next_seq
                self._next_seq += 1

    def retract_attr(self, attr: Attribute) -> None:
        self._check_refs(attr)
        with self._lock:
            self._attrs.pop(attr, None)

    def _check_refs(self, attr: Attribute) -> None:
        if not self.has_entity(attr.subject):
            raise UnknownEntity(attr.subject)
        if attr.value_type == "entity" and not self.has_entity(int(attr.value)):
            raise UnknownEntity(int(attr.value))

    def query(self, pattern: QueryPattern = QueryPattern()) -> list[Attribute]:
        with self._lock:
            items = list(self._attrs.items())
        out = []
        for attr, seq in items:
            if pattern.subject is not _WILD and attr.subject != pattern.subject:
                continue
            if pattern.name is not _WILD and attr.name != pattern.name:
                continue
            if pattern.value_type is not _WILD and attr.value_type != pattern.value_type:
                continue
            if pattern.value is not _WILD and attr.value != pattern.value:
                continue
            out.append((attr, seq))
        out.sort(key=lambda pair: (pair[0].subject, pair[0].name, pair[1]))
        return [attr for attr, _ in out]

    def value_of(self, subject: int, name: str) -> Optional[ValueType]:
        """First value of ``name`` on ``subject``, or None."""
        hits = self.query(QueryPattern(subject=subject, name=name))
        return hits[0].value if hits else None

    # -- concept network ---------------------------------------------------

    def is_a(self, entity_id: int, concept_id: int) -> bool:
        """True iff ``concept_id`` is reachable from ``entity_id`` via one
        optional instance_of edge followed by any number of subclass_of
        edges. A visited set keeps cyclic hierarchies terminating."""
        self.entity(entity_id)
        self.entity(concept_id)
        frontier = [entity_id]
        for attr in self.query(QueryPattern(subject=entity_id, name=INSTANCE_OF)):
            frontier.append(int(attr.value))
        seen: set[int] = set()
        while frontier:
            node = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            if node == concept_id:
                return True
            for attr in self.query(QueryPattern(subject=node, name=SUBCLASS_OF)):
                frontier.append(int(attr.value))
        return False

    def instances_of(self, concept_id: int) -> list[int]:
        """Instance ids under ``concept_id``, ordered by id."""
        out = []
        for ent in self.entities():
            if ent.kind == INSTANCE and self.is_a(ent.id, concept_id):
                out.append(ent.id)
        return out

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> tuple[Attribute, ...]:
        """Immutable copy of all attributes in insertion order."""
        with self._lock:
            items = sorted(self._attrs.items(), key=lambda pair: pair[1])
        return tuple(attr for attr, _ in items)

    def restore(self, snap: Iterable[Attribute]) -> None:
        with self._lock:
            self._attrs.clear()
            self._next_seq = 0
        for attr in snap:
            self.assert_attr(attr)

    # -- file snapshots ----------------------------------------------------
    # One record per line, tab separated:
    #   E <id> <kind> <name>
    #   A <subject> <name> <valuetype> <value>

    def save(self, path: Path) -> None:
        lines = []
        for ent in self.entities():
            lines.append(f"E\t{ent.id}\t{ent.kind}\t{ent.name}")
        for attr in self.snapshot():
            lines.append(
                f"A\t{attr.subject}\t{attr.name}\t{attr.value_type}\t{attr.value}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: Path) -> "KnowledgeBase":
        kb = KnowledgeBase()
        id_map: dict[int, int] = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if parts[0] == "E":
                _, old_id, kind, name = parts
                id_map[int(old_id)] = kb.upsert_entity(kind, name)
            elif parts[0] == "A":
                _, subject, name, value_type, raw_value = parts
                value: ValueType
                if value_type == "entity":
                    value = id_map[int(raw_value)]
                elif value_type == "number":
                    value = float(raw_value)
                    if value.is_integer():
                        value = int(value)
                else:
                    value = raw_value
                kb.assert_attr(
                    Attribute(id_map[int(subject)], name, value, value_type)
                )
            else:
                raise KnowledgeBaseError(f"bad snapshot record: {raw!r}")
        return kb

    def __iter__(self) -> Iterator[Attribute]:
        return iter(self.snapshot())

    def __len__(self) -> int:
        with self._lock:
            return len(self._attrs)
