"""Registration surface: how the catalog learns types, tools, objects and runs.

Nothing is inferred. Every fact enters through one of these calls, is
checked against the records already stored, and is appended as a new
revision. References may be given as ids or as exact names.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    ConverterArity,
    CycleRejected,
    Duplicate,
    DuplicateType,
    EmptyTypes,
    InputOutputOverlap,
    KindMismatch,
    NotFound,
    RelationConstraint,
    SelfAssociation,
    UnknownEntity,
    UnknownFunction,
    UnknownSite,
    UnknownType,
    ValidationFailed,
)
from .model import (
    KINDS,
    REPRESENTED_AS,
    SEMANTIC,
    STORAGE,
    SUCCEEDED,
    Collection,
    DataObject,
    EntityId,
    FunctionDescriptor,
    ProcessRun,
    Record,
    Responsibility,
    ToolDescriptor,
    TypeAssociation,
    TypeNode,
    is_entity_id,
    record_class,
    utcnow,
    validate_record,
)
from .store import Store

DESCRIPTOR_KINDS = ("site", "researcher", "tool", "document", "collection")


@dataclass(frozen=True)
class OutputSpec:
    """Declared output of a run: a new object, or an existing hand-entered one."""

    name: str
    uri: str
    types: tuple[str, ...]
    id: str | None = None

    @classmethod
    def coerce(cls, value: OutputSpec | Mapping[str, Any]) -> OutputSpec:
        if isinstance(value, OutputSpec):
            return value
        return cls(
            name=value.get("name", ""),
            uri=value.get("uri", ""),
            types=tuple(value.get("types", ())),
            id=value.get("id"),
        )


def _reachable(start: Iterable[str], edges: Mapping[str, Iterable[str]]) -> set[str]:
    seen: set[str] = set()
    stack = list(start)
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        stack.extend(edges.get(node, ()))
    return seen


class Catalog:
    def __init__(self, store: Store, clock=utcnow):
        self.store = store
        self.clock = clock

    @property
    def site(self) -> str:
        return self.store.site

    # -- resolution -----------------------------------------------------

    def resolve(self, kind: str, ref: str, missing=UnknownEntity) -> Record:
        """Find a record of ``kind`` by id, falling back to exact name match."""
        if is_entity_id(ref):
            found = self.store.find(kind, ref)
            if found is not None:
                return found
        matches = [r for r in self.store.records(kind) if getattr(r, "name", None) == ref]
        if len(matches) == 1:
            return matches[0]
        if len(matches) > 1:
            raise missing(f"{kind} name {ref!r} is ambiguous; use an id")
        raise missing(f"unknown {kind} {ref!r}")

    def resolve_types(self, ref: str, kind: str | None = None) -> list[TypeNode]:
        """All types matching ``ref``; a bare name may denote a semantic and a storage type."""
        if is_entity_id(ref):
            found = self.store.find("type", ref)
            if found is not None:
                return [found]
        matches = [t for t in self.store.records("type")
                   if t.name == ref and (kind is None or t.kind == kind)]
        if not matches:
            raise UnknownType(f"unknown type {ref!r}")
        return matches

    def resolve_type(self, ref: str, kind: str | None = None) -> TypeNode:
        matches = self.resolve_types(ref, kind)
        if len(matches) > 1:
            raise UnknownType(f"type name {ref!r} is ambiguous; give its kind or id")
        return matches[0]

    def resolve_any(self, ref: str) -> tuple[str, Record]:
        """Locate an entity of any kind by id (or by unique name)."""
        if is_entity_id(ref):
            kinds = self.store.kinds_of(ref)
            if kinds:
                return kinds[0], self.store.load(kinds[0], ref)
        hits = [(k, r) for k in KINDS for r in self.store.records(k)
                if getattr(r, "name", None) == ref]
        if len(hits) == 1:
            return hits[0]
        if hits:
            raise UnknownEntity(f"name {ref!r} is ambiguous; use an id")
        raise UnknownEntity(f"unknown entity {ref!r}")

    def _new_id(self, kind: str, given: str | None) -> EntityId:
        if given is None:
            return self.store.allocate_id(kind)
        try:
            return EntityId(given)
        except ValueError:
            raise ValidationFailed(violations=["id format"]) from None

    def _put_new(self, record: Record) -> Record:
        if self.store.current_rev(record.KIND, record.id):
            raise Duplicate(f"{record.KIND} {record.id} already exists")
        self.store.put(record, expected_rev=0)
        return record

    def _put_update(self, record: Record) -> Record:
        self.store.put(record, expected_rev=self.store.current_rev(record.KIND, record.id))
        return record

    # -- types ----------------------------------------------------------

    def _type_parents(self) -> dict[str, set[str]]:
        return {t.id: set(t.parents) for t in self.store.records("type")}

    def register_type(self, name: str, kind: str, parents: Sequence[str] = (),
                      annotations: Mapping[str, str] | None = None,
                      id: str | None = None) -> TypeNode:
        """Learn a type, or learn extra parents for an already known one.

        Re-registering an existing (name, kind) with parents it does not yet
        have extends its parent set; with nothing new it is a duplicate.
        """
        with self.store.lock:
            parent_nodes = [self._parent_type(p, kind) for p in parents]
            parent_ids = frozenset(p.id for p in parent_nodes)
            existing = [t for t in self.store.records("type")
                        if t.name == name and t.kind == kind]
            if existing:
                node = existing[0]
                added = parent_ids - node.parents
                if not added:
                    raise DuplicateType(f"type {name!r} ({kind}) already registered")
                graph = self._type_parents()
                # adding parent P to node N closes a cycle iff N is an ancestor-or-self of P
                if node.id in _reachable(added, graph):
                    raise CycleRejected(f"parents of {name!r} would create a type cycle")
                updated = dataclasses.replace(
                    node, parents=node.parents | added,
                    annotations={**node.annotations, **(annotations or {})})
                return self._put_update(updated)
            node = TypeNode(id=self._new_id("type", id), name=name, kind=kind,
                            parents=parent_ids, annotations=dict(annotations or {}))
            self._check(node)
            return self._put_new(node)

    def _parent_type(self, ref: str, kind: str) -> TypeNode:
        try:
            node = self.resolve_type(ref, kind)
        except UnknownType:
            other = self.resolve_type(ref)
            raise KindMismatch(f"parent {other.name!r} is {other.kind}, type is {kind}") from None
        if node.kind != kind:
            raise KindMismatch(f"parent {node.name!r} is {node.kind}, type is {kind}")
        return node

    def annotate_type(self, ref: str, annotations: Mapping[str, str]) -> TypeNode:
        with self.store.lock:
            node = self.resolve_type(ref)
            return self._put_update(dataclasses.replace(
                node, annotations={**node.annotations, **annotations}))

    def associate_types(self, subject: str, object: str, relation: str,
                        id: str | None = None) -> TypeAssociation:
        with self.store.lock:
            subj = self.resolve_type(subject)
            obj = self.resolve_type(object)
            if subj.id == obj.id:
                raise SelfAssociation(f"{subj.name!r} cannot be associated with itself")
            if relation == REPRESENTED_AS and (subj.kind, obj.kind) != (SEMANTIC, STORAGE):
                raise RelationConstraint("represented-as links a semantic type to a storage type")
            for assoc in self.store.records("association"):
                if (assoc.subject, assoc.object, assoc.relation) == (subj.id, obj.id, relation):
                    raise Duplicate(f"association {subj.name} {relation} {obj.name} exists")
            record = TypeAssociation(id=self._new_id("association", id), subject=subj.id,
                                     object=obj.id, relation=relation)
            self._check(record)
            return self._put_new(record)

    # -- objects --------------------------------------------------------

    def _type_ids(self, refs: Iterable[str]) -> frozenset[EntityId]:
        out = set()
        for ref in refs:
            out.update(t.id for t in self.resolve_types(ref))
        return frozenset(out)

    def register_object(self, name: str, site: str, uri: str, types: Iterable[str],
                        provenance: str | None = None, *, id: str | None = None,
                        created_at: str | None = None) -> DataObject:
        """Register a data object. ``provenance`` names a researcher or a run."""
        with self.store.lock:
            types = list(types)
            if not types:
                raise EmptyTypes("an object needs at least one type")
            type_ids = self._type_ids(types)
            site_rec = self.resolve("site", site, missing=UnknownSite)
            created_by = entered_by = None
            if provenance is None:
                raise ValidationFailed(violations=["provenance origin"])
            kind, source = self.resolve_any(provenance)
            if kind == "researcher":
                entered_by = source.id
            elif kind == "run":
                created_by = source.id
            else:
                raise ValidationFailed(violations=["provenance origin"])
            record = DataObject(
                id=self._new_id("object", id), name=name, site=site_rec.id, uri=uri,
                types=type_ids, created_by=created_by, entered_by=entered_by,
                created_at=created_at or self.clock())
            self._check(record)
            return self._put_new(record)

    # -- descriptors ----------------------------------------------------

    def register_descriptor(self, kind: str, fields: Mapping[str, Any]) -> Record:
        """Register (or, when ``fields['id']`` exists, revise) a descriptor record."""
        if kind not in DESCRIPTOR_KINDS:
            raise ValidationFailed(violations=[f"descriptor kind {kind!r}"])
        with self.store.lock:
            data = dict(fields)
            given = data.pop("id", None)
            existing = self.store.find(kind, given) if given and is_entity_id(given) else None
            data = self._resolve_descriptor_refs(kind, data)
            data["id"] = existing.id if existing else self._new_id(kind, given)
            try:
                record = record_class(kind)(**data)
            except TypeError as exc:
                raise ValidationFailed(str(exc), violations=["fields"]) from None
            self._check(record)
            if kind == "collection":
                self._check_collection_dag(record)
            if existing:
                return self._put_update(record)
            return self._put_new(record)

    def _resolve_descriptor_refs(self, kind: str, data: dict[str, Any]) -> dict[str, Any]:
        def ids(refs, target, missing=UnknownEntity):
            return frozenset(self.resolve(target, r, missing=missing).id for r in refs or ())

        if kind == "site":
            data["systems"] = tuple(data.get("systems") or ())
        elif kind == "researcher":
            data["affiliation"] = self.resolve(
                "site", data.get("affiliation", ""), missing=UnknownSite).id
        elif kind == "tool":
            data["handles_types"] = self._type_ids(data.get("handles_types") or ())
            data["favorite_of"] = ids(data.get("favorite_of"), "researcher")
        elif kind == "document":
            data["about_types"] = self._type_ids(data.get("about_types") or ())
            data["authors"] = ids(data.get("authors"), "researcher")
        elif kind == "collection":
            data["members"] = ids(data.get("members"), "object")
            data["subcollections"] = ids(data.get("subcollections"), "collection")
        return data

    def _check_collection_dag(self, record: Collection) -> None:
        graph = {c.id: set(c.subcollections) for c in self.store.records("collection")}
        graph[record.id] = set(record.subcollections)
        if record.id in _reachable(record.subcollections, graph):
            raise CycleRejected(f"collection {record.name!r} would contain itself")

    def add_to_collection(self, collection: str, members: Iterable[str] = (),
                          subcollections: Iterable[str] = ()) -> Collection:
        with self.store.lock:
            coll = self.resolve("collection", collection)
            return self.register_descriptor("collection", {
                "id": coll.id,
                "name": coll.name,
                "members": [*coll.members, *members],
                "subcollections": [*coll.subcollections, *subcollections],
            })

    def mark_favorite(self, tool: str, researcher: str) -> ToolDescriptor:
        with self.store.lock:
            tool_rec = self.resolve("tool", tool, missing=NotFound)
            person = self.resolve("researcher", researcher, missing=NotFound)
            if person.id in tool_rec.favorite_of:
                return tool_rec
            return self._put_update(dataclasses.replace(
                tool_rec, favorite_of=tool_rec.favorite_of | {person.id}))

    # -- functions ------------------------------------------------------

    def register_function(self, name: str, input_types: Sequence[str],
                          output_types: Sequence[str], is_converter: bool = False,
                          tool: str | None = None, id: str | None = None) -> FunctionDescriptor:
        with self.store.lock:
            if is_converter and (len(input_types) != 1 or len(output_types) != 1):
                raise ConverterArity("a converter takes exactly one input and one output type")
            inputs = tuple(self.resolve_type(t).id for t in input_types)
            outputs = tuple(self.resolve_type(t).id for t in output_types)
            tool_id = self.resolve("tool", tool).id if tool else None
            record = FunctionDescriptor(
                id=self._new_id("function", id), name=name, input_types=inputs,
                output_types=outputs, is_converter=is_converter, tool=tool_id)
            problems = validate_record(record)
            if "converter identity" in problems:
                raise ConverterArity("a converter must change the type")
            self._check(record)
            return self._put_new(record)

    def set_function_enabled(self, function: str, enabled: bool) -> FunctionDescriptor:
        with self.store.lock:
            fn = self.resolve("function", function, missing=UnknownFunction)
            if fn.enabled == enabled:
                return fn
            return self._put_update(dataclasses.replace(fn, enabled=enabled))

    # -- people ---------------------------------------------------------

    def assign_responsibility(self, entity: str, researcher: str, role: str,
                              id: str | None = None) -> Responsibility:
        with self.store.lock:
            _, target = self.resolve_any(entity)
            person = self.resolve("researcher", researcher, missing=NotFound)
            for resp in self.store.records("responsibility"):
                if (resp.entity, resp.researcher, resp.role) == (target.id, person.id, role):
                    raise Duplicate(f"{person.name} is already {role} of {target.id}")
            record = Responsibility(id=self._new_id("responsibility", id),
                                    entity=target.id, researcher=person.id, role=role)
            self._check(record)
            return self._put_new(record)

    def retire(self, kind: str, ref: str) -> Record:
        with self.store.lock:
            record = self.resolve(kind, ref)
            if record.retired:
                return record
            return self._put_update(dataclasses.replace(record, retired=True))

    # -- runs -----------------------------------------------------------

    def consumers(self) -> dict[str, set[str]]:
        """Object id -> ids of objects derived from it in one run step."""
        edges: dict[str, set[str]] = {}
        for run in self.store.records("run"):
            for src in run.inputs:
                edges.setdefault(src, set()).update(run.outputs)
        return edges

    def record_run(self, function: str, inputs: Sequence[str],
                   output_specs: Sequence[OutputSpec | Mapping[str, Any]],
                   host: str, site: str, params: Mapping[str, str] | None = None,
                   started: str | None = None, ended: str | None = None,
                   status: str = SUCCEEDED, id: str | None = None
                   ) -> tuple[ProcessRun, list[DataObject]]:
        """Record one executed function and register its outputs, atomically.

        Inputs must be local objects or remote ids (left as unresolved stubs).
        An output spec may name an existing hand-entered object, which then
        becomes run-derived; that is the only way a run can close a cycle and
        it is rejected when it would.
        """
        with self.store.lock:
            fn = self.resolve("function", function, missing=UnknownFunction)
            site_rec = self.resolve("site", site, missing=UnknownSite)
            input_ids = []
            for ref in inputs:
                obj = self._find_object(ref)
                if obj is not None:
                    input_ids.append(obj.id)
                elif is_entity_id(ref) and EntityId(ref).site != self.site:
                    input_ids.append(EntityId(ref))
                else:
                    raise UnknownEntity(f"unknown input object {ref!r}")
            specs = [OutputSpec.coerce(s) for s in output_specs]
            declared = [EntityId(s.id) for s in specs if s.id and is_entity_id(s.id)]
            overlap = set(declared) & set(input_ids)
            if overlap:
                raise InputOutputOverlap(
                    f"{', '.join(sorted(overlap))} listed as both input and output")
            existing = [o for o in (self.store.find("object", d) for d in declared) if o]
            if existing:
                derived = _reachable([o.id for o in existing], self.consumers())
                if derived & set(input_ids):
                    raise CycleRejected("run would make an object its own ancestor")
                for obj in existing:
                    if obj.created_by is not None:
                        raise Duplicate(f"{obj.id} already derived by {obj.created_by}")

            run_id = self._new_id("run", id)
            now = self.clock()
            outputs: list[DataObject] = []
            for spec in specs:
                if not spec.types:
                    raise EmptyTypes(f"output {spec.name!r} has no types")
                type_ids = self._type_ids(spec.types)
                current = self.store.find("object", spec.id) if spec.id else None
                if current is not None:
                    outputs.append(dataclasses.replace(
                        current, created_by=run_id, entered_by=None,
                        types=current.types | type_ids))
                else:
                    outputs.append(DataObject(
                        id=self._new_id("object", spec.id), name=spec.name,
                        site=site_rec.id, uri=spec.uri, types=type_ids,
                        created_by=run_id, created_at=ended or now))
            run = ProcessRun(
                id=run_id, function=fn.id, inputs=tuple(input_ids),
                outputs=tuple(o.id for o in outputs), host=host, site=site_rec.id,
                parameters={str(k): str(v) for k, v in (params or {}).items()},
                started=started or now, ended=ended or started or now, status=status)
            self._check(run)
            for obj in outputs:
                self._check(obj)
            items = [(run, 0)] + [(o, self.store.current_rev("object", o.id)) for o in outputs]
            self.store.put_many(items)
            return run, outputs

    def _find_object(self, ref: str) -> DataObject | None:
        if is_entity_id(ref):
            return self.store.find("object", ref)
        try:
            return self.resolve("object", ref)
        except UnknownEntity:
            return None

    # -- generic ----------------------------------------------------------

    def register_record(self, kind: str, body: Mapping[str, Any]) -> Record:
        """Register a record given in canonical form, through the typed operation.

        Runs are excluded: they enter only through :meth:`record_run`.
        """
        record_class(kind)
        body = dict(body)
        rid = body.get("id")
        with self.store.lock:
            if rid is not None and self.store.current_rev(kind, rid):
                raise Duplicate(f"{kind} {rid} already exists")
            if kind == "type":
                return self.register_type(body.get("name", ""), body.get("kind", ""),
                                          body.get("parents", ()), body.get("annotations"), id=rid)
            if kind == "association":
                return self.associate_types(body.get("subject", ""), body.get("object", ""),
                                            body.get("relation", ""), id=rid)
            if kind == "object":
                return self.register_object(
                    body.get("name", ""), body.get("site", ""), body.get("uri", ""),
                    body.get("types", ()), body.get("entered_by") or body.get("created_by"),
                    id=rid, created_at=body.get("created_at"))
            if kind == "function":
                fn = self.register_function(
                    body.get("name", ""), body.get("input_types", ()), body.get("output_types", ()),
                    bool(body.get("is_converter", False)), body.get("tool"), id=rid)
                if body.get("enabled") is False:
                    fn = self.set_function_enabled(fn.id, False)
                return fn
            if kind == "responsibility":
                return self.assign_responsibility(body.get("entity", ""), body.get("researcher", ""),
                                                  body.get("role", ""), id=rid)
            if kind == "run":
                raise ValidationFailed(violations=["runs are recorded with record_run"])
            fields = {k: v for k, v in body.items() if k != "retired"}
            return self.register_descriptor(kind, fields)

    @staticmethod
    def _check(record: Record) -> None:
        problems = validate_record(record)
        if problems:
            raise ValidationFailed(violations=problems)
