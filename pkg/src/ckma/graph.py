"""Typed knowledge minigraphs and their text/JSON forms.

A minigraph is an ordered list of ``head - relation -> tail`` triples whose
entity and relation labels come from closed scientific vocabularies. Entities
have no storage of their own; they exist only through the relations that
mention them.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, NamedTuple

from .errors import MinigraphParseError, MinigraphValidationError


class EntityType(str, enum.Enum):
    TASK = "Task"
    METHOD = "Method"
    METRIC = "Metric"
    MATERIAL = "Material"
    GENERIC = "Generic"
    OTHER_SCIENTIFIC_TERM = "OtherScientificTerm"

    @classmethod
    def parse(cls, label: str) -> "EntityType":
        return cls(label.strip())


class RelationType(str, enum.Enum):
    COMPARE = "Compare"
    USED_FOR = "Used-for"
    FEATURE_OF = "Feature-of"
    HYPONYM_OF = "Hyponym-of"
    EVALUATE_FOR = "Evaluate-for"
    PART_OF = "Part-of"
    CONJUNCTION = "Conjunction"

    @classmethod
    def parse(cls, label: str) -> "RelationType":
        return cls(label.strip())


ENTITY_TYPE_NAMES = tuple(t.value for t in EntityType)
RELATION_TYPE_NAMES = tuple(t.value for t in RelationType)


def normalize_name(name: str) -> str:
    # Collapsing inner whitespace keeps every relation on one text line.
    return " ".join(name.split())


@dataclass(frozen=True)
class Entity:
    name: str
    etype: EntityType

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("entity name must be non-empty")
        if self.name != normalize_name(self.name):
            raise ValueError(f"entity name is not whitespace-normalized: {self.name!r}")
        object.__setattr__(self, "etype", EntityType(self.etype))

    @property
    def key(self) -> str:
        return self.name.casefold()


@dataclass(frozen=True)
class Relation:
    head: Entity
    rtype: RelationType
    tail: Entity

    def __post_init__(self):
        object.__setattr__(self, "rtype", RelationType(self.rtype))
        if self.head.key == self.tail.key:
            raise ValueError(f"self-loop on entity {self.head.name!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head.key, self.rtype.value, self.tail.key)


@dataclass(frozen=True)
class KnowledgeMinigraph:
    relations: tuple[Relation, ...] = ()
    volume_limit: int = 32

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.volume_limit < 1:
            raise ValueError("volume_limit must be positive")
        if len(self.relations) > self.volume_limit:
            raise ValueError(
                f"{len(self.relations)} relations exceed volume limit {self.volume_limit}"
            )
        keys = [r.key for r in self.relations]
        if len(set(keys)) != len(keys):
            raise ValueError("minigraph contains duplicate relations")

    def __len__(self) -> int:
        return len(self.relations)

    @property
    def entities(self) -> list[Entity]:
        """Distinct entities in order of first mention."""
        seen: dict[str, Entity] = {}
        for rel in self.relations:
            for ent in (rel.head, rel.tail):
                seen.setdefault(ent.key, ent)
        return list(seen.values())


@dataclass(frozen=True)
class CandidateRelation:
    """One unvalidated relation record, as parsed from model output."""

    head_name: Any
    head_type: Any
    relation: Any
    tail_name: Any
    tail_type: Any

    @classmethod
    def from_relation(cls, rel: Relation) -> "CandidateRelation":
        return cls(rel.head.name, rel.head.etype.value, rel.rtype.value,
                   rel.tail.name, rel.tail.etype.value)


class DroppedRecord(NamedTuple):
    index: int
    reason: str


class ValidationResult(NamedTuple):
    graph: KnowledgeMinigraph
    dropped: list[DroppedRecord]


def _as_candidate(record: Any) -> CandidateRelation:
    if isinstance(record, CandidateRelation):
        return record
    if isinstance(record, Relation):
        return CandidateRelation.from_relation(record)
    if isinstance(record, Mapping):
        return _candidate_from_mapping(record, "$")
    raise TypeError(f"cannot interpret {type(record).__name__} as a relation record")


def _build_relation(cand: CandidateRelation) -> Relation:
    """Turn a candidate into a Relation or raise ValueError with a short reason."""
    for label, value in (("head name", cand.head_name), ("tail name", cand.tail_name)):
        if not isinstance(value, str):
            raise ValueError(f"{label} is not a string")
        if not value.strip():
            raise ValueError(f"empty {label}")
    for label, value in (("head type", cand.head_type), ("tail type", cand.tail_type),
                         ("relation type", cand.relation)):
        if not isinstance(value, str):
            raise ValueError(f"{label} is not a string")
    try:
        rtype = RelationType.parse(cand.relation)
    except ValueError:
        raise ValueError(f"unknown relation type {cand.relation!r}") from None
    try:
        head_type = EntityType.parse(cand.head_type)
        tail_type = EntityType.parse(cand.tail_type)
    except ValueError:
        bad = cand.head_type if cand.head_type.strip() not in ENTITY_TYPE_NAMES else cand.tail_type
        raise ValueError(f"unknown entity type {bad!r}") from None
    head = Entity(normalize_name(cand.head_name), head_type)
    tail = Entity(normalize_name(cand.tail_name), tail_type)
    if head.key == tail.key:
        raise ValueError(f"self-loop on entity {head.name!r}")
    return Relation(head, rtype, tail)


def validate_minigraph(raw_relations: Iterable[Any], volume_limit: int,
                       strict: bool = False) -> ValidationResult:
    """Filter candidate records into a valid minigraph.

    Records keep their input order. Unknown types, empty names, self-loops and
    case-insensitive duplicates of an earlier record are dropped; survivors
    past ``volume_limit`` are cut off, since the model is asked to list
    relations most-significant first. With ``strict=True`` the first rejected
    record raises ``MinigraphValidationError`` instead.
    """
    if volume_limit < 1:
        raise ValueError("volume_limit must be positive")
    kept: list[Relation] = []
    seen: set[tuple[str, str, str]] = set()
    dropped: list[DroppedRecord] = []

    def reject(index: int, reason: str) -> None:
        if strict:
            raise MinigraphValidationError(index, reason)
        dropped.append(DroppedRecord(index, reason))

    for index, record in enumerate(raw_relations):
        try:
            rel = _build_relation(_as_candidate(record))
        except (ValueError, TypeError, MinigraphParseError) as exc:
            reject(index, str(exc))
            continue
        if rel.key in seen:
            reject(index, "duplicate relation")
            continue
        if len(kept) >= volume_limit:
            reject(index, f"over volume limit {volume_limit}")
            continue
        seen.add(rel.key)
        kept.append(rel)
    return ValidationResult(KnowledgeMinigraph(tuple(kept), volume_limit), dropped)


def minigraph_to_text(graph: KnowledgeMinigraph) -> str:
    """Render one ``head - Rel -> tail`` line per relation."""
    return "\n".join(f"{r.head.name} - {r.rtype.value} -> {r.tail.name}" for r in graph.relations)


def _relation_to_dict(rel: Relation) -> dict:
    return {
        "head": {"name": rel.head.name, "type": rel.head.etype.value},
        "relation": rel.rtype.value,
        "tail": {"name": rel.tail.name, "type": rel.tail.etype.value},
    }


def minigraph_to_dict(graph: KnowledgeMinigraph) -> dict:
    return {"relations": [_relation_to_dict(r) for r in graph.relations]}


def minigraph_to_json(graph: KnowledgeMinigraph, indent: int | None = None) -> str:
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(minigraph_to_dict(graph), indent=indent, separators=separators,
                      ensure_ascii=False)


def _require(obj: Mapping, key: str, path: str) -> Any:
    if key not in obj:
        raise MinigraphParseError(f"missing key: {key}", path)
    return obj[key]


def _candidate_from_mapping(item: Mapping, path: str) -> CandidateRelation:
    head = _require(item, "head", path)
    tail = _require(item, "tail", path)
    relation = _require(item, "relation", path)
    for key, node in (("head", head), ("tail", tail)):
        if not isinstance(node, Mapping):
            raise MinigraphParseError(f"{key} must be an object", f"{path}.{key}")
    return CandidateRelation(
        head_name=_require(head, "name", f"{path}.head"),
        head_type=_require(head, "type", f"{path}.head"),
        relation=relation,
        tail_name=_require(tail, "name", f"{path}.tail"),
        tail_type=_require(tail, "type", f"{path}.tail"),
    )


def minigraph_from_dict(payload: Any) -> list[CandidateRelation]:
    if not isinstance(payload, Mapping):
        raise MinigraphParseError("top level must be an object")
    items = _require(payload, "relations", "$")
    if not isinstance(items, list):
        raise MinigraphParseError("relations must be an array", "$.relations")
    out = []
    for i, item in enumerate(items):
        path = f"$.relations[{i}]"
        if not isinstance(item, Mapping):
            raise MinigraphParseError("relation must be an object", path)
        out.append(_candidate_from_mapping(item, path))
    return out


def minigraph_from_json(text: str) -> list[CandidateRelation]:
    """Parse canonical minigraph JSON into candidate records (order preserved)."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MinigraphParseError(f"malformed JSON: {exc.msg}", f"char {exc.pos}") from exc
    return minigraph_from_dict(payload)


def load_minigraph(text: str, volume_limit: int) -> KnowledgeMinigraph:
    return validate_minigraph(minigraph_from_json(text), volume_limit).graph
