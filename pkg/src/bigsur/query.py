"""Answers to the catalog's researcher questions, and CQL evaluation.

Type arguments are widened to their reflexive-transitive subtype closure
unless ``subtype_closure`` is off. Associations between types (for example
"represented-as") never widen a result; they are explicit statements, not
subsumption, and are reported separately by :meth:`QueryEngine.associations`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .catalog import Catalog
from .cql import QueryAst, parse_cql
from .errors import UnknownKind, UnknownSite
from .model import EntityId, Record

QUESTIONS = (
    "sites_with_type",
    "functions_on_type",
    "groupings_of_type",
    "derivations_from_type",
    "tools_for_type",
    "documents_about_type",
    "responsible_for",
)
# auxiliary answers used by CQL predicates
EXTRA_QUESTIONS = ("objects_of_type", "objects_at_site", "site_named", "tools_favored_by")

PREDICATE_QUESTION = {
    ("sites", "type"): "sites_with_type",
    ("sites", "at_site"): "site_named",
    ("objects", "type"): "objects_of_type",
    ("objects", "at_site"): "objects_at_site",
    ("functions", "type"): "functions_on_type",
    ("functions", "derived_from_type"): "derivations_from_type",
    ("tools", "type"): "tools_for_type",
    ("tools", "favorite_of"): "tools_favored_by",
    ("documents", "type"): "documents_about_type",
    ("collections", "type"): "groupings_of_type",
    ("responsible", "for"): "responsible_for",
}


@dataclass(frozen=True, order=True)
class Row:
    kind: str
    id: str
    name: str


class ResultSet:
    """Rows ordered by (kind, id, name) without duplicates."""

    def __init__(self, rows: Iterable[Row | tuple[str, str, str]] = ()):
        self.rows: tuple[Row, ...] = tuple(sorted({r if isinstance(r, Row) else Row(*map(str, r)) for r in rows}))

    def __iter__(self) -> Iterator[Row]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, ResultSet) and self.rows == other.rows

    def __repr__(self) -> str:
        return f"ResultSet({list(self.rows)!r})"

    def ids(self) -> set[str]:
        return {r.id for r in self.rows}

    def to_text(self) -> str:
        return "".join(f"{r.kind}\t{r.id}\t{r.name}\n" for r in self.rows)

    def to_list(self) -> list[dict[str, str]]:
        return [{"kind": r.kind, "id": r.id, "name": r.name} for r in self.rows]


def _visible(record: Record, include_retired: bool) -> bool:
    return include_retired or not record.retired


class QueryEngine:
    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.store = catalog.store

    # -- type closure ---------------------------------------------------

    def _closure_ids(self, start: Iterable[str], direction: str) -> set[str]:
        types = self.store.records("type")
        if direction == "supertypes":
            edges = {t.id: set(t.parents) for t in types}
        elif direction == "subtypes":
            edges: dict[str, set[str]] = {}
            for t in types:
                for p in t.parents:
                    edges.setdefault(p, set()).add(t.id)
        else:
            raise ValueError(f"direction must be subtypes or supertypes, not {direction!r}")
        seen: set[str] = set()
        stack = list(start)
        while stack:
            node = stack.pop()
            if node not in seen:
                seen.add(node)
                stack.extend(edges.get(node, ()))
        return seen

    def type_closure(self, type_ref: str, direction: str = "subtypes") -> list:
        with self.store.lock:
            roots = [t.id for t in self.catalog.resolve_types(type_ref)]
            ids = self._closure_ids(roots, direction)
            return [self.store.load("type", i) for i in sorted(ids)]

    def _type_set(self, type_ref: str, closure: bool) -> set[str]:
        roots = [t.id for t in self.catalog.resolve_types(type_ref)]
        return self._closure_ids(roots, "subtypes") if closure else set(roots)

    # -- answers --------------------------------------------------------

    def answer(self, question: str, argument: str, subtype_closure: bool = True,
               favorite_of: str | None = None, include_retired: bool = False) -> ResultSet:
        handler = getattr(self, f"_q_{question}", None)
        if question not in QUESTIONS + EXTRA_QUESTIONS or handler is None:
            raise UnknownKind(f"unknown question {question!r}")
        with self.store.lock:
            return ResultSet(handler(argument, subtype_closure, favorite_of, include_retired))

    def _objects_with(self, types: set[str], everything: bool):
        return [o for o in self.store.records("object")
                if _visible(o, everything) and o.types & types]

    def _q_sites_with_type(self, arg, closure, _fav, everything):
        types = self._type_set(arg, closure)
        for site_id in {o.site for o in self._objects_with(types, everything)}:
            site = self.store.find("site", site_id)
            if site is None or not _visible(site, everything):
                continue
            yield ("site", site.id, _site_label(site))

    def _q_objects_of_type(self, arg, closure, _fav, everything):
        for obj in self._objects_with(self._type_set(arg, closure), everything):
            yield ("object", obj.id, obj.name)

    def _q_functions_on_type(self, arg, closure, _fav, everything):
        types = self._type_set(arg, closure)
        for fn in self.store.records("function"):
            if _visible(fn, everything) and types & set(fn.input_types):
                yield ("function", fn.id, fn.name)

    def _q_derivations_from_type(self, arg, closure, _fav, everything):
        types = self._type_set(arg, closure)
        for fn in self.store.records("function"):
            if _visible(fn, everything) and types & set(fn.input_types):
                for out in fn.output_types:
                    out_type = self.store.find("type", out)
                    label = out_type.name if out_type else str(out)
                    yield ("derivation", fn.id, f"{fn.name} -> {label}")

    def _q_groupings_of_type(self, arg, closure, _fav, everything):
        roots = [t.id for t in self.catalog.resolve_types(arg)]
        objects = {o.id for o in self._objects_with(self._type_set(arg, closure), everything)}
        collections = {c.id: c for c in self.store.records("collection")}
        for coll in collections.values():
            if not _visible(coll, everything):
                continue
            if _collection_members(coll.id, collections) & objects:
                yield ("collection", coll.id, coll.name)
        for type_id in self._closure_ids(roots, "supertypes") - set(roots):
            node = self.store.load("type", type_id)
            if _visible(node, everything):
                yield ("type", node.id, node.name)

    def _q_tools_for_type(self, arg, closure, favorite_of, everything):
        types = self._type_set(arg, closure)
        fan = self.catalog.resolve("researcher", favorite_of).id if favorite_of else None
        for tool in self.store.records("tool"):
            if not _visible(tool, everything) or not types & tool.handles_types:
                continue
            if fan is not None and fan not in tool.favorite_of:
                continue
            yield ("tool", tool.id, f"{tool.name} {tool.version}")

    def _q_tools_favored_by(self, arg, _closure, _fav, everything):
        fan = self.catalog.resolve("researcher", arg).id
        for tool in self.store.records("tool"):
            if _visible(tool, everything) and fan in tool.favorite_of:
                yield ("tool", tool.id, f"{tool.name} {tool.version}")

    def _q_documents_about_type(self, arg, closure, _fav, everything):
        types = self._type_set(arg, closure)
        for doc in self.store.records("document"):
            if _visible(doc, everything) and types & doc.about_types:
                yield ("document", doc.id, doc.title)

    def _q_responsible_for(self, arg, _closure, _fav, everything):
        _, target = self.catalog.resolve_any(arg)
        for resp in self.store.records("responsibility"):
            if resp.entity != target.id or not _visible(resp, everything):
                continue
            person = self.store.find("researcher", resp.researcher)
            name = person.name if person else str(resp.researcher)
            yield ("researcher", resp.researcher, f"{name} ({resp.role})")

    def _q_site_named(self, arg, _closure, _fav, everything):
        site = self.catalog.resolve("site", arg, missing=UnknownSite)
        if _visible(site, everything):
            yield ("site", site.id, _site_label(site))

    def _q_objects_at_site(self, arg, _closure, _fav, everything):
        site = self.catalog.resolve("site", arg, missing=UnknownSite)
        for obj in self.store.records("object", {"site": site.id}):
            if _visible(obj, everything):
                yield ("object", obj.id, obj.name)

    def associations(self, type_ref: str) -> ResultSet:
        """Explicit associations touching a type (listed, never used to widen)."""
        with self.store.lock:
            ids = {t.id for t in self.catalog.resolve_types(type_ref)}
            rows = []
            for assoc in self.store.records("association"):
                if assoc.subject in ids or assoc.object in ids:
                    other = assoc.object if assoc.subject in ids else assoc.subject
                    node = self.store.find("type", other)
                    rows.append((assoc.relation, other, node.name if node else str(other)))
            return ResultSet(rows)

    # -- CQL ------------------------------------------------------------

    def evaluate(self, ast: QueryAst) -> ResultSet:
        with self.store.lock:
            results = [
                self.answer(PREDICATE_QUESTION[(ast.target, kind)], value,
                            subtype_closure=ast.subtype_closure)
                for kind, value in ast.predicates
            ]
        keep = set.intersection(*(r.ids() for r in results))
        return ResultSet(r for r in results[0] if r.id in keep)

    def eval_cql(self, text: str) -> ResultSet:
        return self.evaluate(parse_cql(text))


def _site_label(site) -> str:
    if site.systems:
        return f"{site.name} [{', '.join(site.systems)}]"
    return site.name


def _collection_members(coll_id: EntityId, collections: dict) -> set[str]:
    members: set[str] = set()
    seen: set[str] = set()
    stack = [coll_id]
    while stack:
        cid = stack.pop()
        if cid in seen or cid not in collections:
            continue
        seen.add(cid)
        members |= collections[cid].members
        stack.extend(collections[cid].subcollections)
    return members

