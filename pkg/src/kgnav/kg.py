"""Immutable in-memory knowledge graph with head and tail adjacency indexes."""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, NamedTuple

from kgnav.errors import NotFoundError, ParseError


class SymbolTable:
    """Bidirectional map between strings and dense integer ids."""

    __slots__ = ("_ids", "_names")

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise NotFoundError(f"unknown symbol {name!r}") from None

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    def resolve(self, idx: int) -> str:
        if not 0 <= idx < len(self._names):
            raise NotFoundError(f"unknown id {idx}")
        return self._names[idx]

    def __contains__(self, name: object) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SymbolTable) and self._names == other._names


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Direction(str, Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"


@dataclass(frozen=True, order=True)
class DirectedRelation:
    """A relation incident to an entity. ``name`` is what an oracle is shown."""

    name: str
    direction: Direction
    relation: int


class KnowledgeGraph:
    """Read-only triple store.

    Entities and relations are interned separately; triples are kept in load
    order with duplicates removed. ``out_index[h]`` lists ``(relation, tail)``
    and ``in_index[t]`` lists ``(relation, head)``, both in load order.
    ``entities`` pre-registers names so a graph can hold isolated entities.
    """

    def __init__(self, triples: Iterable[tuple[str, str, str]] = (), entities: Iterable[str] = ()):
        self.entities = SymbolTable(entities)
        self.relations = SymbolTable()
        seen: set[Triple] = set()
        ordered: list[Triple] = []
        for h, r, t in triples:
            triple = Triple(self.entities.intern(h), self.relations.intern(r), self.entities.intern(t))
            if triple not in seen:
                seen.add(triple)
                ordered.append(triple)
        self._triples: tuple[Triple, ...] = tuple(ordered)
        self._triple_set = frozenset(seen)
        out_index: list[list[tuple[int, int]]] = [[] for _ in range(len(self.entities))]
        in_index: list[list[tuple[int, int]]] = [[] for _ in range(len(self.entities))]
        for h, r, t in ordered:
            out_index[h].append((r, t))
            in_index[t].append((r, h))
        self.out_index = tuple(tuple(x) for x in out_index)
        self.in_index = tuple(tuple(x) for x in in_index)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self._triple_set

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self._triples == other._triples
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.n_entities}, relations={self.n_relations}, "
            f"triples={len(self)})"
        )

    def entity_id(self, name: str) -> int:
        return self.entities.id_of(name)

    def relation_id(self, name: str) -> int:
        return self.relations.id_of(name)

    def entity_name(self, idx: int) -> str:
        return self.entities.resolve(idx)

    def relation_name(self, idx: int) -> str:
        return self.relations.resolve(idx)

    def names(self, triple: Triple) -> tuple[str, str, str]:
        return (
            self.entities.resolve(triple.head),
            self.relations.resolve(triple.relation),
            self.entities.resolve(triple.tail),
        )

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < len(self.entities):
            raise NotFoundError(f"unknown entity id {entity}")

    def relations_of(self, entity: int) -> list[DirectedRelation]:
        """Distinct (relation, direction) pairs touching ``entity``.

        Sorted by relation name, outgoing before incoming.
        """
        self._check_entity(entity)
        found = {(r, Direction.OUTGOING) for r, _ in self.out_index[entity]}
        found |= {(r, Direction.INCOMING) for r, _ in self.in_index[entity]}
        rels = [DirectedRelation(self.relations.resolve(r), d, r) for r, d in found]
        rels.sort(key=lambda x: (x.name, x.direction is Direction.INCOMING))
        return rels

    def expand(self, entity: int, relation: int) -> list[Triple]:
        """All triples with ``relation`` where ``entity`` is head or tail.

        Outgoing matches come first, then incoming, each in load order; a
        self-loop is reported once.
        """
        self._check_entity(entity)
        if not 0 <= relation < len(self.relations):
            raise NotFoundError(f"unknown relation id {relation}")
        result = [Triple(entity, r, t) for r, t in self.out_index[entity] if r == relation]
        result.extend(
            Triple(h, r, entity) for r, h in self.in_index[entity] if r == relation and h != entity
        )
        return result


def relations_of(g: KnowledgeGraph, entity: int) -> list[DirectedRelation]:
    return g.relations_of(entity)


def expand(g: KnowledgeGraph, entity: int, relation: int) -> list[Triple]:
    return g.expand(entity, relation)


def _parse_kb_lines(lines: Iterable[str], source: str | None):
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise ParseError(f"expected 3 '|'-separated fields, got {len(parts)}", lineno, source)
        yield parts[0], parts[1], parts[2]


def load_metaqa_kb(reader: BinaryIO | bytes | str | Path) -> KnowledgeGraph:
    """Load a MetaQA ``kb.txt`` (``subject|relation|object`` per line).

    Accepts a binary stream, raw bytes, or a filesystem path. Duplicate lines
    collapse; an empty input gives an empty graph.
    """
    source = None
    if isinstance(reader, (str, Path)):
        source = str(reader)
        with open(reader, "rb") as fh:
            data = fh.read()
    elif isinstance(reader, bytes):
        data = reader
    else:
        data = reader.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not valid UTF-8: {exc}", source=source) from None
    return KnowledgeGraph(_parse_kb_lines(io.StringIO(text, newline=None), source))
