"""Append-only, revisioned record store.

Every ``put`` appends a new revision; nothing is ever removed. The in-memory
state can be mirrored to a journal file (one canonical line per revision)
so that a data directory survives across processes. Reads return
:class:`StoredRecord` views whose ``superseded`` flag is computed from the
revision history at read time.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import CorruptSnapshot, NotFound, NotOriginSite, StaleRevision, ValidationFailed
from .model import (
    ID_PREFIX,
    KINDS,
    EntityId,
    Record,
    Revision,
    canonical_json,
    decode,
    kind_of,
    record_class,
    sql_type,
    utcnow,
    validate_record,
)

SNAPSHOT_HEADER = "BIGSUR-SNAPSHOT v1"


@dataclass(frozen=True)
class StoredRecord:
    kind: str
    id: EntityId
    revision: Revision
    body: str
    superseded: bool
    seq: int
    stamp: str

    @property
    def rev(self) -> int:
        return self.revision.rev

    def decoded(self) -> Record:
        return decode(self.kind, self.body)

    def to_line(self) -> str:
        return canonical_json({
            "body": json.loads(self.body),
            "id": self.id,
            "kind": self.kind,
            "origin": self.revision.origin,
            "rev": self.revision.rev,
            "seq": self.seq,
            "stamp": self.stamp,
        })


@dataclass(frozen=True)
class _Entry:
    kind: str
    id: EntityId
    rev: int
    origin: str
    body: str
    seq: int
    stamp: str
    record: Record


def _entry_from_line(line: str) -> _Entry:
    data = json.loads(line)
    kind = data["kind"]
    body = canonical_json(data["body"])
    return _Entry(
        kind=kind,
        id=EntityId(data["id"]),
        rev=int(data["rev"]),
        origin=data["origin"],
        body=body,
        seq=int(data["seq"]),
        stamp=data["stamp"],
        record=decode(kind, body),
    )


def _matches(record: Record, where: Mapping[str, Any]) -> bool:
    for name, wanted in where.items():
        value = getattr(record, name, None)
        if isinstance(value, (frozenset, tuple, list, set)):
            if wanted not in value:
                return False
        elif value != wanted:
            return False
    return True


class Store:
    """Revisioned storage for one site.

    ``site`` is the local site token: only records whose id carries this site
    may be written through :meth:`put`. Imported records go through
    :meth:`append_foreign`.
    """

    def __init__(self, site: str, journal: str | Path | None = None,
                 clock: Callable[[], str] = utcnow):
        self.site = site
        self.clock = clock
        self.journal = Path(journal) if journal else None
        self._lock = threading.RLock()
        self._history: dict[str, dict[EntityId, list[_Entry]]] = {k: {} for k in KINDS}
        self._seq = 0
        self._counters: dict[str, int] = {}
        if self.journal and self.journal.exists():
            with self.journal.open(encoding="utf-8") as fh:
                for number, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        self._install(_entry_from_line(line))
                    except (ValueError, KeyError) as exc:
                        raise CorruptSnapshot(f"journal line {number}: {exc}") from exc

    @property
    def lock(self) -> threading.RLock:
        """Re-entrant lock; hold it to make read-check-write sequences atomic."""
        return self._lock

    # -- writes ---------------------------------------------------------

    def put(self, record: Record, expected_rev: int | None = None, *,
            site: str | None = None) -> Revision:
        return self.put_many([(record, expected_rev)], site=site)[0]

    def put_many(self, items: Iterable[tuple[Record, int | None]], *,
                 site: str | None = None) -> list[Revision]:
        """Write several records atomically: all revisions land or none do."""
        items = list(items)
        caller = site or self.site
        with self._lock:
            planned: dict[tuple[str, EntityId], int] = {}
            for record, expected in items:
                kind = kind_of(record)
                problems = validate_record(record)
                if problems:
                    raise ValidationFailed(violations=problems)
                rid = EntityId(record.id)
                if rid.site != caller:
                    raise NotOriginSite(f"{rid} originates at {rid.site}, caller is {caller}")
                key = (kind, rid)
                current = planned.get(key, len(self._history[kind].get(record.id, ())))
                if expected is not None and expected != current:
                    raise StaleRevision(
                        f"{kind} {record.id}: expected rev {expected}, current {current}")
                planned[key] = current + 1
            stamp = self.clock()
            entries = []
            for record, _ in items:
                kind, rid = record.KIND, EntityId(record.id)
                self._seq += 1
                rev = len(self._history[kind].get(rid, ())) + 1
                entry = _Entry(kind, rid, rev, rid.site, record.canonical(),
                               self._seq, stamp, record)
                self._install(entry)
                entries.append(entry)
            self._append_journal(entries)
            return [Revision(e.rev, e.origin) for e in entries]

    def append_foreign(self, kind: str, record: Record, rev: int, stamp: str) -> Revision:
        """Append a revision received from another site (no origin check)."""
        with self._lock:
            current = len(self._history[kind].get(record.id, ()))
            if rev != current + 1:
                raise StaleRevision(f"{kind} {record.id}: rev {rev} after {current}")
            self._seq += 1
            entry = _Entry(kind, record.id, rev, record.id.site, record.canonical(),
                           self._seq, stamp, record)
            self._install(entry)
            self._append_journal([entry])
            return Revision(rev, entry.origin)

    def _install(self, entry: _Entry) -> None:
        self._history[entry.kind].setdefault(entry.id, []).append(entry)
        self._seq = max(self._seq, entry.seq)
        if entry.id.site == self.site:
            self._bump_counter(entry.kind, entry.id.local)

    def _bump_counter(self, kind: str, local: str) -> None:
        prefix = ID_PREFIX[kind]
        if local.startswith(prefix) and local[len(prefix):].isdigit():
            number = int(local[len(prefix):])
            if number > self._counters.get(kind, 0):
                self._counters[kind] = number

    def _append_journal(self, entries: list[_Entry]) -> None:
        if not self.journal:
            return
        lines = "".join(self._view(e).to_line() + "\n" for e in entries)
        with self.journal.open("a", encoding="utf-8") as fh:
            fh.write(lines)
            fh.flush()
            os.fsync(fh.fileno())

    def allocate_id(self, kind: str) -> EntityId:
        """Reserve the next generated id of ``kind`` at the local site."""
        record_class(kind)
        with self._lock:
            while True:
                number = self._counters.get(kind, 0) + 1
                self._counters[kind] = number
                candidate = EntityId.of(self.site, f"{ID_PREFIX[kind]}{number:04d}")
                if candidate not in self._history[kind]:
                    return candidate

    # -- reads ----------------------------------------------------------

    def _view(self, entry: _Entry) -> StoredRecord:
        revisions = self._history[entry.kind][entry.id]
        return StoredRecord(
            kind=entry.kind,
            id=entry.id,
            revision=Revision(entry.rev, entry.origin),
            body=entry.body,
            superseded=entry.rev < len(revisions),
            seq=entry.seq,
            stamp=entry.stamp,
        )

    def _entry(self, kind: str, id: str, rev: int | None = None) -> _Entry:
        record_class(kind)
        try:
            revisions = self._history[kind][EntityId(id)]
        except (KeyError, ValueError):
            raise NotFound(f"no {kind} {id}") from None
        if rev is None:
            return revisions[-1]
        if not 1 <= rev <= len(revisions):
            raise NotFound(f"no revision {rev} of {kind} {id}")
        return revisions[rev - 1]

    def get(self, kind: str, id: str, rev: int | None = None) -> StoredRecord:
        with self._lock:
            return self._view(self._entry(kind, id, rev))

    def load(self, kind: str, id: str, rev: int | None = None) -> Record:
        """Decoded record at ``rev`` (latest by default)."""
        with self._lock:
            return self._entry(kind, id, rev).record

    def find(self, kind: str, id: str) -> Record | None:
        with self._lock:
            try:
                return self._entry(kind, id).record
            except NotFound:
                return None

    def current_rev(self, kind: str, id: str) -> int:
        with self._lock:
            return len(self._history[kind].get(id, ()))

    def kinds_of(self, id: str) -> list[str]:
        """Record kinds under which ``id`` is stored."""
        with self._lock:
            return [k for k in KINDS if id in self._history[k]]

    def scan(self, kind: str, where: Mapping[str, Any] | None = None) -> list[StoredRecord]:
        record_class(kind)
        with self._lock:
            out = []
            for id in sorted(self._history[kind]):
                entry = self._history[kind][id][-1]
                if where and not _matches(entry.record, where):
                    continue
                out.append(self._view(entry))
            return out

    def records(self, kind: str, where: Mapping[str, Any] | None = None) -> list[Record]:
        record_class(kind)
        with self._lock:
            out = []
            for id in sorted(self._history[kind]):
                record = self._history[kind][id][-1].record
                if where and not _matches(record, where):
                    continue
                out.append(record)
            return out

    def history(self, kind: str, id: str) -> list[StoredRecord]:
        with self._lock:
            self._entry(kind, id)
            return [self._view(e) for e in self._history[kind][EntityId(id)]]

    def all_revisions(self) -> list[StoredRecord]:
        """Every retained revision ordered by (kind, id, rev)."""
        with self._lock:
            out = []
            for kind in KINDS:
                for id in sorted(self._history[kind]):
                    out.extend(self._view(e) for e in self._history[kind][id])
            return out

    @property
    def sequence(self) -> int:
        return self._seq

    def revision_count(self) -> int:
        with self._lock:
            return sum(len(r) for h in self._history.values() for r in h.values())

    # -- export / snapshot ---------------------------------------------

    def export_sql(self, schema_only: bool = False) -> str:
        lines = ["-- bigsur metadata export", ""]
        for kind in KINDS:
            cls = record_class(kind)
            columns = _columns(cls)
            lines.append(f'CREATE TABLE "{cls.TABLE}" (')
            for name, ctype, nullable in columns:
                lines.append(f'  "{name}" {ctype}{"" if nullable else " NOT NULL"},')
            lines.append('  PRIMARY KEY ("id", "rev")')
            lines.append(");")
            lines.append("")
        if schema_only:
            return "\n".join(lines)
        with self._lock:
            revisions = self.all_revisions()
        for stored in revisions:
            cls = record_class(stored.kind)
            body = json.loads(stored.body)
            names = [c[0] for c in _columns(cls)]
            values = [stored.id, stored.rev, stored.revision.origin, stored.superseded]
            values += [body.get(name) for name in names[4:]]
            cols = ", ".join(f'"{n}"' for n in names)
            vals = ", ".join(_sql_literal(v) for v in values)
            lines.append(f'INSERT INTO "{cls.TABLE}" ({cols}) VALUES ({vals});')
        if revisions:
            lines.append("")
        return "\n".join(lines)

    def snapshot(self) -> bytes:
        with self._lock:
            entries = sorted(
                (e for h in self._history.values() for revs in h.values() for e in revs),
                key=lambda e: e.seq,
            )
            lines = [SNAPSHOT_HEADER] + [self._view(e).to_line() for e in entries]
        text = "".join(line + "\n" for line in lines)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return (text + digest + "\n").encode("utf-8")

    def restore(self, data: bytes) -> None:
        entries = parse_snapshot(data)
        with self._lock:
            self._history = {k: {} for k in KINDS}
            self._seq = 0
            self._counters = {}
            for entry in entries:
                self._install(entry)
            if self.journal:
                tmp = self.journal.with_suffix(".tmp")
                tmp.write_text(
                    "".join(self._view(e).to_line() + "\n" for e in entries),
                    encoding="utf-8")
                os.replace(tmp, self.journal)

    def state_hash(self) -> str:
        return hashlib.sha256(self.snapshot()).hexdigest()


def parse_snapshot(data: bytes) -> list[_Entry]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptSnapshot("snapshot is not UTF-8") from exc
    if not text.endswith("\n"):
        raise CorruptSnapshot("snapshot truncated")
    lines = text[:-1].split("\n")
    if len(lines) < 2 or lines[0] != SNAPSHOT_HEADER:
        raise CorruptSnapshot("missing snapshot header")
    body = "".join(line + "\n" for line in lines[:-1])
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != lines[-1]:
        raise CorruptSnapshot("snapshot checksum mismatch")
    try:
        return [_entry_from_line(line) for line in lines[1:-1]]
    except (ValueError, KeyError) as exc:
        raise CorruptSnapshot(str(exc)) from exc


def _columns(cls: type[Record]) -> list[tuple[str, str, bool]]:
    cols = [
        ("id", "VARCHAR(255)", False),
        ("rev", "INTEGER", False),
        ("origin", "VARCHAR(64)", False),
        ("superseded", "BOOLEAN", False),
    ]
    for name, codec in cls.FIELDS.items():
        if name == "id":
            continue
        cols.append((name, sql_type(codec), codec.endswith("?")))
    return cols


def _sql_literal(value: Any) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, int):
        return str(value)
    if not isinstance(value, str):
        value = canonical_json(value)
    return "'" + value.replace("'", "''") + "'"
