"""Domain records, identifiers and canonical serialization.

Records are frozen dataclasses. A record is never edited in place; updates
are expressed by storing a new revision built with :func:`dataclasses.replace`.
Each record class declares a ``FIELDS`` codec map that drives canonical JSON
encoding, decoding, and the SQL column types used by the store export.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, ClassVar, Mapping

from .errors import UnknownKind

_TOKEN = re.compile(r"^[^\s/]+$")
_RFC3339 = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z$")
EPOCH = "1970-01-01T00:00:00Z"

CATEGORIES = ("static", "thematic", "object-level", "systemic")


def utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def is_timestamp(value: Any) -> bool:
    return isinstance(value, str) and bool(_RFC3339.match(value))


def is_token(value: Any) -> bool:
    return isinstance(value, str) and bool(_TOKEN.match(value))


class EntityId(str):
    """A ``site/local`` identifier.

    Subclassing ``str`` keeps ids hashable, sortable and JSON-ready while
    guaranteeing the format at construction time.
    """

    __slots__ = ()

    def __new__(cls, value: str) -> EntityId:
        if isinstance(value, EntityId):
            return value
        if not isinstance(value, str) or value.count("/") != 1:
            raise ValueError(f"malformed entity id {value!r}")
        site, local = value.split("/")
        if not (is_token(site) and is_token(local)):
            raise ValueError(f"malformed entity id {value!r}")
        return super().__new__(cls, value)

    @classmethod
    def of(cls, site: str, local: str) -> EntityId:
        return cls(f"{site}/{local}")

    @classmethod
    def parse(cls, text: str) -> EntityId:
        return cls(text)

    @property
    def site(self) -> str:
        return self.split("/", 1)[0]

    @property
    def local(self) -> str:
        return self.split("/", 1)[1]


def is_entity_id(value: Any) -> bool:
    try:
        EntityId(value)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, order=True)
class Revision:
    rev: int
    origin: str


# Codec tokens used in FIELDS maps:
#   id / id?      entity reference (optional)
#   ids           set of references, serialized sorted
#   idlist        ordered list of references
#   str / str?    text (optional)
#   strs          ordered list of text
#   map           text -> text mapping
#   bool, ts      boolean, RFC 3339 timestamp
_SQL_TYPES = {
    "id": "VARCHAR(255)",
    "id?": "VARCHAR(255)",
    "ids": "TEXT",
    "idlist": "TEXT",
    "str": "TEXT",
    "str?": "TEXT",
    "strs": "TEXT",
    "map": "TEXT",
    "bool": "BOOLEAN",
    "ts": "VARCHAR(32)",
}


@dataclass(frozen=True)
class Record:
    KIND: ClassVar[str] = ""
    TABLE: ClassVar[str] = ""
    CATEGORY: ClassVar[str] = ""
    FIELDS: ClassVar[dict[str, str]] = {}

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name, codec in self.FIELDS.items():
            out[name] = _encode(getattr(self, name), codec)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Record:
        kwargs = {}
        for name, codec in cls.FIELDS.items():
            if name in data:
                kwargs[name] = _decode(data[name], codec)
        return cls(**kwargs)

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def violations(self) -> list[str]:
        return []


def _encode(value: Any, codec: str) -> Any:
    if value is None:
        return None
    if codec == "ids":
        return sorted(str(v) for v in value)
    if codec in ("idlist", "strs"):
        return [str(v) for v in value]
    if codec == "map":
        return {str(k): str(v) for k, v in value.items()}
    if codec in ("id", "id?", "str", "str?", "ts"):
        return str(value)
    return value


def _as_id(value: Any) -> Any:
    # tolerate malformed ids so that validate_record can report them
    try:
        return EntityId(value)
    except ValueError:
        return value


def _decode(value: Any, codec: str) -> Any:
    if value is None:
        return None
    if codec in ("id", "id?"):
        return _as_id(value)
    if codec == "ids":
        return frozenset(_as_id(v) for v in value)
    if codec == "idlist":
        return tuple(_as_id(v) for v in value)
    if codec == "strs":
        return tuple(value)
    if codec == "map":
        return dict(value)
    return value


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _check_token_list(values, label: str, out: list[str]) -> None:
    if any(not is_token(v) for v in values):
        out.append(f"{label} format")


@dataclass(frozen=True)
class Site(Record):
    KIND: ClassVar[str] = "site"
    TABLE: ClassVar[str] = "site"
    CATEGORY: ClassVar[str] = "static"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "contact": "str", "endpoint": "str?",
        "systems": "strs", "retired": "bool",
    }

    id: EntityId
    name: str
    contact: str = ""
    endpoint: str | None = None
    systems: tuple[str, ...] = ()
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if self.endpoint is not None and not self.endpoint:
            out.append("endpoint non-empty")
        _check_token_list(self.systems, "systems", out)
        return out


@dataclass(frozen=True)
class Researcher(Record):
    KIND: ClassVar[str] = "researcher"
    TABLE: ClassVar[str] = "researcher"
    CATEGORY: ClassVar[str] = "static"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "contact": "str", "affiliation": "id",
        "retired": "bool",
    }

    id: EntityId
    name: str
    affiliation: EntityId
    contact: str = ""
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if not is_entity_id(self.affiliation):
            out.append("affiliation format")
        return out


SEMANTIC, STORAGE = "semantic", "storage"
TYPE_KINDS = (SEMANTIC, STORAGE)


@dataclass(frozen=True)
class TypeNode(Record):
    KIND: ClassVar[str] = "type"
    TABLE: ClassVar[str] = "type_node"
    CATEGORY: ClassVar[str] = "systemic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "kind": "str", "parents": "ids",
        "annotations": "map", "retired": "bool",
    }

    id: EntityId
    name: str
    kind: str
    parents: frozenset[EntityId] = frozenset()
    annotations: dict[str, str] = field(default_factory=dict)
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if self.kind not in TYPE_KINDS:
            out.append("type kind")
        if self.id in self.parents:
            out.append("self parent")
        if any(not is_entity_id(p) for p in self.parents):
            out.append("parents format")
        return out


REPRESENTED_AS, DERIVED_FROM_TYPE = "represented-as", "derived-from-type"
RELATIONS = (REPRESENTED_AS, DERIVED_FROM_TYPE)


@dataclass(frozen=True)
class TypeAssociation(Record):
    KIND: ClassVar[str] = "association"
    TABLE: ClassVar[str] = "type_association"
    CATEGORY: ClassVar[str] = "systemic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "subject": "id", "object": "id", "relation": "str",
        "retired": "bool",
    }

    id: EntityId
    subject: EntityId
    object: EntityId
    relation: str
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if self.subject == self.object:
            out.append("self association")
        if self.relation not in RELATIONS:
            out.append("relation")
        if not (is_entity_id(self.subject) and is_entity_id(self.object)):
            out.append("endpoint format")
        return out


@dataclass(frozen=True)
class DataObject(Record):
    KIND: ClassVar[str] = "object"
    TABLE: ClassVar[str] = "data_object"
    CATEGORY: ClassVar[str] = "object-level"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "site": "id", "uri": "str", "types": "ids",
        "created_by": "id?", "entered_by": "id?", "created_at": "ts",
        "retired": "bool",
    }

    id: EntityId
    name: str
    site: EntityId
    uri: str
    types: frozenset[EntityId]
    created_by: EntityId | None = None
    entered_by: EntityId | None = None
    created_at: str = EPOCH
    retired: bool = False

    @property
    def location(self) -> tuple[EntityId, str]:
        return (self.site, self.uri)

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if not self.types:
            out.append("types non-empty")
        if (self.created_by is None) == (self.entered_by is None):
            out.append("provenance origin")
        if not is_timestamp(self.created_at):
            out.append("timestamp format")
        if not is_entity_id(self.site):
            out.append("site format")
        return out


@dataclass(frozen=True)
class Collection(Record):
    KIND: ClassVar[str] = "collection"
    TABLE: ClassVar[str] = "data_collection"
    CATEGORY: ClassVar[str] = "thematic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "members": "ids", "subcollections": "ids",
        "retired": "bool",
    }

    id: EntityId
    name: str
    members: frozenset[EntityId] = frozenset()
    subcollections: frozenset[EntityId] = frozenset()
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if self.id in self.subcollections:
            out.append("self subcollection")
        return out


@dataclass(frozen=True)
class FunctionDescriptor(Record):
    KIND: ClassVar[str] = "function"
    TABLE: ClassVar[str] = "function_descriptor"
    CATEGORY: ClassVar[str] = "systemic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "input_types": "idlist",
        "output_types": "idlist", "is_converter": "bool", "tool": "id?",
        "enabled": "bool", "retired": "bool",
    }

    id: EntityId
    name: str
    input_types: tuple[EntityId, ...] = ()
    output_types: tuple[EntityId, ...] = ()
    is_converter: bool = False
    tool: EntityId | None = None
    enabled: bool = True
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if self.is_converter:
            if len(self.input_types) != 1 or len(self.output_types) != 1:
                out.append("converter arity")
            elif self.input_types[0] == self.output_types[0]:
                out.append("converter identity")
        return out


@dataclass(frozen=True)
class ToolDescriptor(Record):
    KIND: ClassVar[str] = "tool"
    TABLE: ClassVar[str] = "tool_descriptor"
    CATEGORY: ClassVar[str] = "systemic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "name": "str", "version": "str", "handles_types": "ids",
        "favorite_of": "ids", "retired": "bool",
    }

    id: EntityId
    name: str
    version: str
    handles_types: frozenset[EntityId] = frozenset()
    favorite_of: frozenset[EntityId] = frozenset()
    retired: bool = False

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("name non-empty")
        if not self.version:
            out.append("version non-empty")
        return out


@dataclass(frozen=True)
class Document(Record):
    KIND: ClassVar[str] = "document"
    TABLE: ClassVar[str] = "document"
    CATEGORY: ClassVar[str] = "thematic"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "title": "str", "uri": "str", "about_types": "ids",
        "authors": "ids", "retired": "bool",
    }

    id: EntityId
    title: str
    uri: str
    about_types: frozenset[EntityId] = frozenset()
    authors: frozenset[EntityId] = frozenset()
    retired: bool = False

    @property
    def name(self) -> str:
        return self.title

    def violations(self) -> list[str]:
        out = []
        if not self.title:
            out.append("title non-empty")
        if not self.uri:
            out.append("uri non-empty")
        return out


@dataclass(frozen=True)
class Responsibility(Record):
    KIND: ClassVar[str] = "responsibility"
    TABLE: ClassVar[str] = "responsibility"
    CATEGORY: ClassVar[str] = "static"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "entity": "id", "researcher": "id", "role": "str",
        "retired": "bool",
    }

    id: EntityId
    entity: EntityId
    researcher: EntityId
    role: str
    retired: bool = False

    @property
    def name(self) -> str:
        return self.role

    def violations(self) -> list[str]:
        out = []
        if not self.role:
            out.append("role non-empty")
        if not (is_entity_id(self.entity) and is_entity_id(self.researcher)):
            out.append("reference format")
        return out


SUCCEEDED, FAILED = "succeeded", "failed"


@dataclass(frozen=True)
class ProcessRun(Record):
    KIND: ClassVar[str] = "run"
    TABLE: ClassVar[str] = "process_run"
    CATEGORY: ClassVar[str] = "object-level"
    FIELDS: ClassVar[dict[str, str]] = {
        "id": "id", "function": "id", "inputs": "idlist", "outputs": "idlist",
        "host": "str", "site": "id", "parameters": "map", "started": "ts",
        "ended": "ts", "status": "str", "retired": "bool",
    }

    id: EntityId
    function: EntityId
    host: str
    site: EntityId
    inputs: tuple[EntityId, ...] = ()
    outputs: tuple[EntityId, ...] = ()
    parameters: dict[str, str] = field(default_factory=dict)
    started: str = EPOCH
    ended: str = EPOCH
    status: str = SUCCEEDED
    retired: bool = False

    @property
    def name(self) -> str:
        return str(self.id)

    def violations(self) -> list[str]:
        out = []
        if set(self.inputs) & set(self.outputs):
            out.append("input output overlap")
        if not is_token(self.host):
            out.append("host format")
        if self.status not in (SUCCEEDED, FAILED):
            out.append("status")
        if not (is_timestamp(self.started) and is_timestamp(self.ended)):
            out.append("timestamp format")
        elif self.ended < self.started:
            out.append("timestamp order")
        return out


RECORD_TYPES: dict[str, type[Record]] = {
    cls.KIND: cls
    for cls in (
        Site, Researcher, TypeNode, TypeAssociation, DataObject, Collection,
        FunctionDescriptor, ToolDescriptor, Document, Responsibility, ProcessRun,
    )
}
KINDS = tuple(sorted(RECORD_TYPES))

# id prefixes for generated local tokens
ID_PREFIX = {
    "site": "site", "researcher": "res", "type": "type", "association": "assoc",
    "object": "obj", "collection": "coll", "function": "fn", "tool": "tool",
    "document": "doc", "responsibility": "resp", "run": "run",
}


def record_class(kind: str) -> type[Record]:
    try:
        return RECORD_TYPES[kind]
    except KeyError:
        raise UnknownKind(f"unknown record kind {kind!r}") from None


def kind_of(record: Any) -> str:
    if isinstance(record, Record) and type(record) in RECORD_TYPES.values():
        return record.KIND
    raise UnknownKind(f"not a model record: {type(record).__name__}")


def decode(kind: str, body: Mapping[str, Any] | str) -> Record:
    if isinstance(body, str):
        body = json.loads(body)
    return record_class(kind).from_dict(body)


def sql_type(codec: str) -> str:
    return _SQL_TYPES[codec]


def validate_record(record: Any) -> list[str]:
    """Return every invariant violation of ``record``; empty means valid."""
    kind_of(record)
    out = []
    if not is_entity_id(record.id):
        out.append("id format")
    out.extend(record.violations())
    if not isinstance(record.retired, bool):
        out.append("retired flag")
    return out


def classify_record(record: Any) -> str:
    """Metadata category: static, thematic, object-level or systemic."""
    kind_of(record)
    return record.CATEGORY


def display_name(record: Record) -> str:
    return getattr(record, "name", str(record.id))
