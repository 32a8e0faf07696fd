"""Publishing metadata between sites as sealed bundles.

Bundle file layout (UTF-8, ``\\n`` terminated)::

    {"bigsur_bundle":1,"origin":"<site>","created":"<RFC3339>"}
    {"body":{...},"id":"<site/local>","kind":"<kind>","rev":<n>}     one per revision
    {"seal":"<sha256 of all preceding lines>","count":<n>}

Merging follows origin authority: only the site that minted an id may add
revisions to it, so imports never touch local-origin records and a
revision that disagrees with one already held is rejected, not merged.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import httpx

from .catalog import Catalog
from .errors import MalformedBundle, NoEndpoint, SealMismatch, TargetUnreachable, UnknownEntity
from .model import EPOCH, KINDS, EntityId, Record, canonical_json, decode, validate_record
from .store import Store

BUNDLE_VERSION = 1
ALL_ORIGINS = "*"


@dataclass(frozen=True)
class BundleRecord:
    kind: str
    id: str
    rev: int
    body: dict[str, Any]

    def to_line(self) -> str:
        return canonical_json({"body": self.body, "id": self.id, "kind": self.kind, "rev": self.rev})


@dataclass(frozen=True)
class MetadataBundle:
    origin: str
    created: str
    records: tuple[BundleRecord, ...]
    seal: str
    # highest local store sequence included; not part of the wire format
    cursor: int = field(default=0, compare=False)

    @staticmethod
    def header_line(origin: str, created: str) -> str:
        return ('{"bigsur_bundle":%d,"origin":%s,"created":%s}'
                % (BUNDLE_VERSION, json.dumps(origin), json.dumps(created)))

    @classmethod
    def build(cls, origin: str, created: str, records: Iterable[BundleRecord],
              cursor: int = 0) -> MetadataBundle:
        records = tuple(sorted(records, key=lambda r: (r.kind, r.id, r.rev)))
        return cls(origin, created, records, _seal(origin, created, records), cursor)

    def to_text(self) -> str:
        lines = [self.header_line(self.origin, self.created)]
        lines += [r.to_line() for r in self.records]
        lines.append('{"seal":%s,"count":%d}' % (json.dumps(self.seal), len(self.records)))
        return "".join(line + "\n" for line in lines)

    def to_bytes(self) -> bytes:
        return self.to_text().encode("utf-8")

    @classmethod
    def parse(cls, data: bytes | str) -> MetadataBundle:
        if isinstance(data, bytes):
            try:
                data = data.decode("utf-8")
            except UnicodeDecodeError:
                raise MalformedBundle("bundle is not UTF-8") from None
        if not data.endswith("\n"):
            raise MalformedBundle("bundle is truncated")
        lines = data[:-1].split("\n")
        if len(lines) < 2:
            raise MalformedBundle("bundle needs a header and a seal line")
        try:
            trailer = json.loads(lines[-1])
            seal, count = trailer["seal"], int(trailer["count"])
        except (ValueError, KeyError, TypeError):
            raise MalformedBundle("unreadable seal line") from None
        sealed = "".join(line + "\n" for line in lines[:-1])
        if hashlib.sha256(sealed.encode("utf-8")).hexdigest() != seal:
            raise SealMismatch("bundle seal does not verify")
        try:
            header = json.loads(lines[0])
            if header.get("bigsur_bundle") != BUNDLE_VERSION:
                raise MalformedBundle("unsupported bundle version")
            origin, created = header["origin"], header["created"]
            records = []
            for line in lines[1:-1]:
                item = json.loads(line)
                records.append(BundleRecord(item["kind"], item["id"], int(item["rev"]), item["body"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedBundle(f"unreadable bundle: {exc}") from None
        if len(records) != count:
            raise MalformedBundle(f"seal line counts {count} records, found {len(records)}")
        keys = [(r.kind, r.id, r.rev) for r in records]
        if keys != sorted(keys) or len(set(keys)) != len(keys):
            raise MalformedBundle("records are not in (kind, id, rev) order")
        for rec in records:
            if rec.kind not in KINDS:
                raise MalformedBundle(f"unknown record kind {rec.kind!r}")
            try:
                rid = EntityId(rec.id)
            except ValueError:
                raise MalformedBundle(f"malformed id {rec.id!r}") from None
            if origin != ALL_ORIGINS and rid.site != origin:
                raise MalformedBundle(f"{rec.id} does not originate at {origin}")
        return cls(origin, created, tuple(records), seal)


def _seal(origin: str, created: str, records: tuple[BundleRecord, ...]) -> str:
    text = MetadataBundle.header_line(origin, created) + "\n"
    text += "".join(r.to_line() + "\n" for r in records)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Selection:
    """What to export: ``all`` local records, some ``kinds``, records ``since``
    a store sequence cursor, or ``everything`` held regardless of origin."""

    scope: str = "all"
    kinds: tuple[str, ...] = ()
    cursor: int = 0

    @classmethod
    def by_kind(cls, *kinds: str) -> Selection:
        return cls("kind", tuple(kinds))

    @classmethod
    def since(cls, cursor: int) -> Selection:
        return cls("since", (), cursor)

    @classmethod
    def everything(cls) -> Selection:
        return cls("everything")

    def describe(self) -> str:
        if self.scope == "kind":
            return "kind:" + ",".join(self.kinds)
        if self.scope == "since":
            return f"since:{self.cursor}"
        return self.scope


@dataclass
class ImportReport:
    added: int = 0
    updated: int = 0
    skipped: int = 0
    rejected: int = 0
    reasons: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"added {self.added}", f"updated {self.updated}",
                 f"skipped {self.skipped}", f"rejected {self.rejected}"]
        lines += [f"REJECTED {r['kind']} {r['id']} rev {r['rev']}: {r['reason']}" for r in self.reasons]
        return "\n".join(lines) + "\n"


@dataclass
class PublicationRecord:
    id: str
    target_site: str
    selection: str
    bundle_seal: str
    cursor: int
    destination: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class StubDescriptor:
    id: str
    status: str = "unpublished"


def http_transport(endpoint: str, payload: bytes) -> None:
    try:
        response = httpx.post(endpoint.rstrip("/") + "/bundles", content=payload,
                              headers={"content-type": "text/plain"}, timeout=10.0)
    except httpx.HTTPError as exc:
        raise TargetUnreachable(f"{endpoint}: {exc}") from None
    if response.status_code >= 400:
        raise TargetUnreachable(f"{endpoint} answered {response.status_code}")


class Federation:
    def __init__(self, catalog: Catalog, state_path: str | Path | None = None,
                 transport: Callable[[str, bytes], None] = http_transport):
        self.catalog = catalog
        self.store: Store = catalog.store
        self.state_path = Path(state_path) if state_path else None
        self.transport = transport
        self._lock = threading.RLock()
        self._publications: list[PublicationRecord] = []
        if self.state_path and self.state_path.exists():
            data = json.loads(self.state_path.read_text(encoding="utf-8"))
            self._publications = [PublicationRecord(**p) for p in data]

    def export_bundle(self, selection: Selection | None = None) -> MetadataBundle:
        selection = selection or Selection()
        with self.store.lock:
            chosen = []
            for stored in self.store.all_revisions():
                if selection.scope != "everything" and stored.id.site != self.store.site:
                    continue
                if selection.scope == "kind" and stored.kind not in selection.kinds:
                    continue
                if selection.scope == "since" and stored.seq <= selection.cursor:
                    continue
                chosen.append(stored)
        origin = ALL_ORIGINS if selection.scope == "everything" else self.store.site
        created = max((s.stamp for s in chosen), default=EPOCH)
        records = [BundleRecord(s.kind, s.id, s.rev, json.loads(s.body)) for s in chosen]
        cursor = max((s.seq for s in chosen), default=selection.cursor)
        return MetadataBundle.build(origin, created, records, cursor)

    def import_bundle(self, bundle: MetadataBundle | bytes | str) -> ImportReport:
        if not isinstance(bundle, MetadataBundle):
            bundle = MetadataBundle.parse(bundle)
        report = ImportReport()

        def reject(rec: BundleRecord, reason: str) -> None:
            report.rejected += 1
            report.reasons.append({"kind": rec.kind, "id": rec.id, "rev": rec.rev, "reason": reason})

        with self.store.lock:
            for rec in bundle.records:
                try:
                    record: Record = decode(rec.kind, rec.body)
                except (TypeError, ValueError) as exc:
                    reject(rec, f"undecodable body: {exc}")
                    continue
                problems = validate_record(record)
                if problems or record.id != rec.id:
                    reject(rec, "invalid record: " + "; ".join(problems or ["id mismatch"]))
                    continue
                held = self.store.current_rev(rec.kind, rec.id)
                if rec.rev <= held:
                    if self.store.get(rec.kind, rec.id, rec.rev).body == record.canonical():
                        report.skipped += 1
                    else:
                        reject(rec, f"conflicts with held revision {rec.rev}")
                    continue
                rid = EntityId(rec.id)
                if rid.site == self.store.site:
                    reject(rec, "local-origin record; only this site may revise it")
                elif bundle.origin not in (ALL_ORIGINS, rid.site):
                    reject(rec, f"revision not from origin site {rid.site}")
                elif rec.rev != held + 1:
                    reject(rec, f"revision gap: holding {held}, received {rec.rev}")
                else:
                    self.store.append_foreign(rec.kind, record, rec.rev, bundle.created)
                    if held == 0:
                        report.added += 1
                    else:
                        report.updated += 1
        return report

    # -- publication ------------------------------------------------------

    def publications(self) -> list[PublicationRecord]:
        with self._lock:
            return list(self._publications)

    def cursor_for(self, target: str) -> int:
        with self._lock:
            return max((p.cursor for p in self._publications if p.target_site == target), default=0)

    def publish(self, target_site: str, selection: Selection | None = None,
                out: str | Path | None = None) -> PublicationRecord:
        """Export and deliver a bundle; by default only what ``target_site`` has not seen."""
        with self._lock:
            try:
                site = self.catalog.resolve("site", target_site)
                target, endpoint = str(site.id), site.endpoint
            except UnknownEntity:
                target, endpoint = target_site, None
            if out is None and not endpoint:
                raise NoEndpoint(f"site {target_site} has no endpoint and no output path was given")
            previous = self.cursor_for(target)
            selection = selection or Selection.since(previous)
            bundle = self.export_bundle(selection)
            payload = bundle.to_bytes()
            if out is not None:
                path = Path(out)
                if path.is_dir():
                    path = path / f"{self.store.site}-to-{target.replace('/', '_')}-{bundle.cursor}.bundle"
                path.write_bytes(payload)
                destination = str(path)
            else:
                self.transport(endpoint, payload)
                destination = endpoint
            record = PublicationRecord(
                id=str(EntityId.of(self.store.site, f"pub{len(self._publications) + 1:04d}")),
                target_site=target, selection=selection.describe(),
                bundle_seal=bundle.seal, cursor=max(previous, bundle.cursor),
                destination=destination)
            self._publications.append(record)
            self._save()
            return record

    def _save(self) -> None:
        if not self.state_path:
            return
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(canonical_json([p.to_dict() for p in self._publications]) + "\n",
                       encoding="utf-8")
        os.replace(tmp, self.state_path)

    def resolve_remote(self, entity_id: str) -> Record | StubDescriptor:
        """Local copy of an entity if held (local or imported), else a stub. Never networked."""
        kinds = self.store.kinds_of(entity_id)
        if kinds:
            return self.store.load(kinds[0], entity_id)
        return StubDescriptor(str(entity_id))
