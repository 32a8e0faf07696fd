"""Bulk ingest of hand-written or generated registration files.

A file starts with the header ``BIGSUR-INGEST v1``. Each following line is
blank, a ``#`` comment, a canonical record (``{"kind": ..., "body": {...}}``)
or a shorthand directive::

    site name="Scripps" systems=ocean1,ocean2
    type name=AVHRR kind=semantic parents="Satellite Image"
    object name=scene-7 site=Scripps uri=ftp://ocean1/s7 types=AVHRR,HDF5 by="Ada Ng"

Lines are applied one at a time; a bad line is reported with its number and
the rest of the file still goes in. Directives that would repeat an existing
registration are rejected as duplicates, so re-ingesting a file is a no-op.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .catalog import Catalog
from .errors import BigSurError, Duplicate, MalformedHeader, ValidationFailed
from .model import Record

INGEST_HEADER = "BIGSUR-INGEST v1"

LIST_KEYS = {
    "systems", "parents", "types", "members", "subcollections", "inputs", "outputs",
    "handles", "favorites", "about", "authors",
}


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list[dict[str, Any]] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"accepted {self.accepted}", f"rejected {len(self.rejected)}"]
        lines += [f"line {r['line']}: {r['error']}: {r['message']}" for r in self.rejected]
        return "\n".join(lines) + "\n"


def parse_directive(line: str) -> tuple[str, dict[str, Any]]:
    try:
        words = shlex.split(line)
    except ValueError as exc:
        raise ValidationFailed(f"unparseable directive: {exc}", violations=["syntax"]) from None
    if not words:
        raise ValidationFailed("empty directive", violations=["syntax"])
    return words[0], parse_fields(words[1:])


def parse_fields(words: list[str]) -> dict[str, Any]:
    args: dict[str, Any] = {}
    for word in words:
        key, sep, value = word.partition("=")
        if not sep:
            raise ValidationFailed(f"expected key=value, got {word!r}", violations=["syntax"])
        args[key] = [v for v in value.split(",") if v] if key in LIST_KEYS else value
    return args


def _dedupe(catalog: Catalog, kind: str, match: Callable[[Record], bool], label: str) -> None:
    if any(match(r) for r in catalog.store.records(kind)):
        raise Duplicate(f"{label} already registered")


def apply_directive(catalog: Catalog, verb: str, a: dict[str, Any]) -> Record:
    """Run one shorthand directive against the catalog."""
    name = a.get("name", "")
    if verb == "site":
        _dedupe(catalog, "site", lambda r: r.name == name, f"site {name!r}")
        return catalog.register_descriptor("site", {
            "name": name, "contact": a.get("contact", ""), "endpoint": a.get("endpoint"),
            "systems": a.get("systems", []), **_id(a)})
    if verb == "researcher":
        _dedupe(catalog, "researcher", lambda r: r.name == name, f"researcher {name!r}")
        return catalog.register_descriptor("researcher", {
            "name": name, "contact": a.get("contact", ""),
            "affiliation": a.get("affiliation", ""), **_id(a)})
    if verb == "type":
        return catalog.register_type(name, a.get("kind", ""), a.get("parents", []), id=a.get("id"))
    if verb == "associate":
        return catalog.associate_types(a.get("subject", ""), a.get("object", ""),
                                       a.get("relation", ""), id=a.get("id"))
    if verb == "object":
        site, uri = a.get("site", ""), a.get("uri", "")
        _dedupe(catalog, "object",
                lambda r: (r.name, r.uri) == (name, uri) and site in (r.site, _name(catalog, r.site)),
                f"object {name!r}")
        return catalog.register_object(name, site, uri, a.get("types", []), a.get("by"),
                                       id=a.get("id"))
    if verb == "collection":
        _dedupe(catalog, "collection", lambda r: r.name == name, f"collection {name!r}")
        return catalog.register_descriptor("collection", {
            "name": name, "members": a.get("members", []),
            "subcollections": a.get("subcollections", []), **_id(a)})
    if verb == "function":
        _dedupe(catalog, "function", lambda r: r.name == name, f"function {name!r}")
        return catalog.register_function(
            name, a.get("inputs", []), a.get("outputs", []),
            a.get("converter", "false").lower() == "true", a.get("tool"), id=a.get("id"))
    if verb == "tool":
        version = a.get("version", "")
        _dedupe(catalog, "tool", lambda r: (r.name, r.version) == (name, version),
                f"tool {name} {version}")
        return catalog.register_descriptor("tool", {
            "name": name, "version": version, "handles_types": a.get("handles", []),
            "favorite_of": a.get("favorites", []), **_id(a)})
    if verb == "document":
        uri = a.get("uri", "")
        _dedupe(catalog, "document", lambda r: r.uri == uri, f"document {uri!r}")
        return catalog.register_descriptor("document", {
            "title": a.get("title", ""), "uri": uri, "about_types": a.get("about", []),
            "authors": a.get("authors", []), **_id(a)})
    if verb == "favorite":
        tool = catalog.resolve("tool", a.get("tool", ""))
        person = catalog.resolve("researcher", a.get("researcher", ""))
        if person.id in tool.favorite_of:
            raise Duplicate(f"{person.name} already favors {tool.name}")
        return catalog.mark_favorite(tool.id, person.id)
    if verb == "responsible":
        return catalog.assign_responsibility(a.get("entity", ""), a.get("researcher", ""),
                                             a.get("role", ""), id=a.get("id"))
    raise ValidationFailed(f"unknown directive {verb!r}", violations=["directive"])


def _id(args: dict[str, Any]) -> dict[str, Any]:
    return {"id": args["id"]} if "id" in args else {}


def _name(catalog: Catalog, site_id: str) -> str | None:
    site = catalog.store.find("site", site_id)
    return site.name if site else None


def apply_line(catalog: Catalog, line: str) -> Record:
    text = line.strip()
    if text.startswith("{"):
        try:
            item = json.loads(text)
            kind, body = item["kind"], item["body"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationFailed(f"unreadable record line: {exc}", violations=["syntax"]) from None
        return catalog.register_record(kind, body)
    verb, args = parse_directive(text)
    return apply_directive(catalog, verb, args)


def ingest_text(catalog: Catalog, text: str) -> IngestReport:
    lines = text.splitlines()
    if not lines or lines[0].strip() != INGEST_HEADER:
        raise MalformedHeader(f"first line must be {INGEST_HEADER!r}")
    report = IngestReport()
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            with catalog.store.lock:
                record = apply_line(catalog, line)
        except BigSurError as exc:
            report.rejected.append({"line": number, "error": exc.code, "message": exc.message})
            continue
        except (ValueError, TypeError) as exc:
            report.rejected.append({"line": number, "error": "ValidationFailed", "message": str(exc)})
            continue
        report.accepted += 1
        report.ids.append(str(record.id))
    return report


def ingest(catalog: Catalog, path: str | Path) -> IngestReport:
    return ingest_text(catalog, Path(path).read_text(encoding="utf-8"))
