"""Distributed processing queue with operator controls.

Hosts pull work with :meth:`Scheduler.claim` and push outcomes with
:meth:`Scheduler.report`. Selection is by priority (larger first), FIFO by
submission sequence within a priority. Operators steer the queue through
process-level controls (per function) and system-level controls (per host,
plus a global pause).

Every state change is appended to an event log whose lines have the form
``seq<TAB>timestamp<TAB>event<TAB>job<TAB>detail``; the log is complete
enough to replay the queue independently.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .catalog import Catalog, OutputSpec
from .errors import (
    FunctionDisabled,
    IllegalTransition,
    NotAssignee,
    Unknown,
    UnknownFunction,
    UnknownSite,
)
from .model import EntityId, canonical_json, utcnow

PENDING, ASSIGNED, RUNNING = "pending", "assigned", "running"
SUCCEEDED, FAILED, CANCELLED = "succeeded", "failed", "cancelled"
STATES = (PENDING, ASSIGNED, RUNNING, SUCCEEDED, FAILED, CANCELLED)

DEFAULT_CAPACITY = 2
DEFAULT_MAX_RETRIES = 3

COMMANDS = (
    "enable-function", "disable-function",
    "enable-host", "disable-host", "drain-host", "set-capacity",
    "pause", "resume", "set-max-retries",
)


@dataclass
class Job:
    id: str
    function: str
    seq: int
    input_specs: list[str] = field(default_factory=list)
    params: dict[str, str] = field(default_factory=dict)
    priority: int = 0
    constraints: list[str] | None = None
    state: str = PENDING
    assigned_host: str | None = None
    attempt: int = 0
    submitted_at: str = ""
    started_at: str | None = None
    outputs: list[dict[str, Any]] = field(default_factory=list)
    run: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Job:
        return cls(**data)

    def depends_on(self) -> list[str]:
        return [spec[1:].split("#")[0] for spec in self.input_specs if spec.startswith("@")]


@dataclass
class ControlState:
    function_enabled: dict[str, bool] = field(default_factory=dict)
    host_enabled: dict[str, bool] = field(default_factory=dict)
    host_capacity: dict[str, int] = field(default_factory=dict)
    draining: list[str] = field(default_factory=list)
    system_paused: bool = False
    max_retries: int = DEFAULT_MAX_RETRIES

    def capacity(self, host: str) -> int:
        return self.host_capacity.get(host, DEFAULT_CAPACITY)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["draining"] = sorted(self.draining)
        return data


@dataclass(frozen=True)
class Event:
    seq: int
    timestamp: str
    event: str
    job: str
    detail: dict[str, Any]

    def to_line(self) -> str:
        return f"{self.seq}\t{self.timestamp}\t{self.event}\t{self.job}\t{canonical_json(self.detail)}"

    @classmethod
    def parse(cls, line: str) -> Event:
        seq, ts, event, job, detail = line.rstrip("\n").split("\t", 4)
        return cls(int(seq), ts, event, job, json.loads(detail))


class Scheduler:
    def __init__(self, catalog: Catalog, state_path: str | Path | None = None,
                 clock: Callable[[], str] = utcnow, default_site: str | None = None):
        self.catalog = catalog
        self.clock = clock
        self.default_site = default_site
        self.state_path = Path(state_path) if state_path else None
        self.events_path = self.state_path.with_name("events.log") if self.state_path else None
        self._lock = threading.RLock()
        self.jobs: dict[str, Job] = {}
        self.controls = ControlState()
        self.known_hosts: set[str] = set()
        self._events: list[Event] = []
        self._job_seq = 0
        if self.state_path and self.state_path.exists():
            self._load()

    # -- persistence ----------------------------------------------------

    def _load(self) -> None:
        data = json.loads(self.state_path.read_text(encoding="utf-8"))
        self.jobs = {j["id"]: Job.from_dict(j) for j in data["jobs"]}
        self.controls = ControlState(**data["controls"])
        self.known_hosts = set(data["known_hosts"])
        self._job_seq = data["job_seq"]
        if self.events_path.exists():
            with self.events_path.open(encoding="utf-8") as fh:
                self._events = [Event.parse(line) for line in fh if line.strip()]

    def _save(self) -> None:
        if not self.state_path:
            return
        data = {
            "jobs": [self.jobs[k].to_dict() for k in sorted(self.jobs, key=lambda k: self.jobs[k].seq)],
            "controls": self.controls.to_dict(),
            "known_hosts": sorted(self.known_hosts),
            "job_seq": self._job_seq,
        }
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(canonical_json(data) + "\n", encoding="utf-8")
        os.replace(tmp, self.state_path)

    def _emit(self, event: str, job: str, **detail) -> None:
        ev = Event(len(self._events) + 1, self.clock(), event, job, detail)
        self._events.append(ev)
        if self.events_path:
            with self.events_path.open("a", encoding="utf-8") as fh:
                fh.write(ev.to_line() + "\n")

    def events(self) -> list[Event]:
        with self._lock:
            return list(self._events)

    def event_log(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.events())

    # -- queue ----------------------------------------------------------

    def _function_enabled(self, fn_id: str) -> bool:
        return self.controls.function_enabled.get(fn_id, True)

    def submit(self, function: str, input_specs: Iterable[str] = (),
               params: Mapping[str, str] | None = None, priority: int = 0,
               constraints: Iterable[str] | None = None) -> Job:
        with self._lock:
            fn = self.catalog.resolve("function", function, missing=UnknownFunction)
            self.controls.function_enabled.setdefault(fn.id, fn.enabled)
            if not fn.enabled or not self._function_enabled(fn.id):
                raise FunctionDisabled(f"function {fn.name} is disabled")
            self._job_seq += 1
            job_id = str(EntityId.of(self.catalog.site, f"job{self._job_seq:04d}"))
            specs = [str(s) for s in input_specs]
            for spec in specs:
                if spec.startswith("@") and spec[1:].split("#")[0] not in self.jobs:
                    raise Unknown(f"input placeholder {spec} names an unknown job")
            declared = [
                {"name": f"{fn.name}-{job_id.split('/')[1]}-{i}", "uri": "", "types": [t]}
                for i, t in enumerate(fn.output_types)
            ]
            job = Job(
                id=job_id, function=fn.id, seq=self._job_seq, input_specs=specs,
                params={str(k): str(v) for k, v in (params or {}).items()},
                priority=int(priority),
                constraints=sorted(set(constraints)) if constraints else None,
                submitted_at=self.clock(), outputs=declared,
            )
            self.jobs[job.id] = job
            self._emit("submit", job.id, function=fn.id, priority=job.priority,
                       constraints=job.constraints, after=job.depends_on())
            self._save()
            return job

    def _busy(self, host: str) -> int:
        return sum(1 for j in self.jobs.values()
                   if j.assigned_host == host and j.state in (ASSIGNED, RUNNING))

    def _host_known(self, host: str) -> bool:
        if host in self.known_hosts or host in self.controls.host_enabled:
            return True
        return any(host in s.systems for s in self.catalog.store.records("site"))

    def eligible(self, host: str) -> list[Job]:
        """Pending jobs ``host`` could claim right now, best first."""
        with self._lock:
            if self.controls.system_paused or not self.controls.host_enabled.get(host, True):
                return []
            if self._busy(host) >= self.controls.capacity(host):
                return []
            out = []
            for job in self.jobs.values():
                if job.state != PENDING or not self._function_enabled(job.function):
                    continue
                if job.constraints is not None and host not in job.constraints:
                    continue
                if any(self.jobs[d].state != SUCCEEDED for d in job.depends_on()):
                    continue
                out.append(job)
            out.sort(key=lambda j: (-j.priority, j.seq))
            return out

    def claim(self, host: str) -> Job | None:
        with self._lock:
            if host not in self.known_hosts:
                self.known_hosts.add(host)
                self._save()
            candidates = self.eligible(host)
            if not candidates:
                return None
            job = candidates[0]
            job.state, job.assigned_host = ASSIGNED, host
            self._emit("claim", job.id, host=host)
            self._save()
            return Job.from_dict(job.to_dict())

    def resolve_inputs(self, job: Job) -> list[str]:
        """Object ids for a job's inputs, expanding ``@job#k`` placeholders."""
        with self._lock:
            out = []
            for spec in job.input_specs:
                if not spec.startswith("@"):
                    out.append(spec)
                    continue
                upstream_id, _, index = spec[1:].partition("#")
                upstream = self.jobs[upstream_id]
                if upstream.run is None:
                    raise IllegalTransition(f"{spec}: upstream job has not succeeded")
                run = self.catalog.store.load("run", upstream.run)
                out.append(run.outputs[int(index or 0)])
            return out

    def _site_for(self, host: str) -> str:
        for site in self.catalog.store.records("site"):
            if host in site.systems:
                return site.id
        if self.default_site:
            return self.default_site
        local = [s for s in self.catalog.store.records("site") if s.id.site == self.catalog.site]
        if local:
            return local[0].id
        raise UnknownSite(f"no site hosts {host!r}")

    def report(self, job_id: str, outcome: str, host: str,
               output_specs: Iterable[OutputSpec | Mapping[str, Any]] | None = None) -> Job:
        with self._lock:
            job = self._job(job_id)
            if job.assigned_host is not None and job.assigned_host != host:
                raise NotAssignee(f"{job_id} is assigned to {job.assigned_host}, not {host}")
            if outcome == "started":
                self._require(job, ASSIGNED, outcome)
                job.state, job.started_at = RUNNING, self.clock()
                self._emit("start", job.id, host=host)
            elif outcome == "succeeded":
                self._require(job, RUNNING, outcome)
                specs = list(output_specs) if output_specs is not None else [
                    {**o, "uri": o["uri"] or f"job://{job.id}/{i}"}
                    for i, o in enumerate(job.outputs)
                ]
                params = dict(job.params)
                params.setdefault("job", job.id)
                run, _ = self.catalog.record_run(
                    job.function, self.resolve_inputs(job), specs, host=host,
                    site=self._site_for(host), params=params,
                    started=job.started_at, ended=self.clock())
                job.state, job.run = SUCCEEDED, run.id
                job.assigned_host = None
                self._emit("succeed", job.id, host=host, run=run.id)
            elif outcome == "failed":
                self._require(job, RUNNING, outcome)
                job.state, job.assigned_host = FAILED, None
                self._emit("fail", job.id, host=host, attempt=job.attempt)
                if job.attempt < self.controls.max_retries:
                    job.attempt += 1
                    job.state = PENDING
                    self._emit("requeue", job.id, attempt=job.attempt)
            else:
                raise IllegalTransition(f"unknown outcome {outcome!r}")
            self._save()
            return Job.from_dict(job.to_dict())

    def cancel(self, job_id: str) -> Job:
        with self._lock:
            job = self._job(job_id)
            self._require(job, PENDING, "cancel")
            job.state = CANCELLED
            self._emit("cancel", job.id)
            self._save()
            return Job.from_dict(job.to_dict())

    def _job(self, job_id: str) -> Job:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise Unknown(f"no job {job_id}") from None

    @staticmethod
    def _require(job: Job, state: str, outcome: str) -> None:
        if job.state != state:
            raise IllegalTransition(f"{job.id}: cannot {outcome} from {job.state}")

    def get(self, job_id: str) -> Job:
        with self._lock:
            return Job.from_dict(self._job(job_id).to_dict())

    # -- controls -------------------------------------------------------

    def control(self, command: str, target: str | None = None,
                value: int | None = None) -> ControlState:
        with self._lock:
            c = self.controls
            if command in ("enable-function", "disable-function"):
                fn = self.catalog.resolve("function", target or "", missing=Unknown)
                enabled = command == "enable-function"
                self.catalog.set_function_enabled(fn.id, enabled)
                c.function_enabled[fn.id] = enabled
                target = fn.id
            elif command in ("enable-host", "disable-host", "drain-host", "set-capacity"):
                if not target or not self._host_known(target):
                    raise Unknown(f"unknown host {target!r}")
                self.known_hosts.add(target)
                if command == "set-capacity":
                    if value is None or int(value) < 1:
                        raise Unknown("capacity must be a positive integer")
                    c.host_capacity[target] = int(value)
                else:
                    c.host_enabled[target] = command == "enable-host"
                    draining = set(c.draining)
                    if command == "drain-host":
                        draining.add(target)
                    else:
                        draining.discard(target)
                    c.draining = sorted(draining)
            elif command in ("pause", "resume"):
                c.system_paused = command == "pause"
            elif command == "set-max-retries":
                if value is None or int(value) < 0:
                    raise Unknown("max_retries must be a non-negative integer")
                c.max_retries = int(value)
            else:
                raise Unknown(f"unknown control command {command!r}")
            self._emit("control", "-", command=command, target=target,
                       value=None if value is None else int(value))
            self._save()
            return ControlState(**json.loads(canonical_json(c.to_dict())))

    def status(self) -> dict[str, Any]:
        with self._lock:
            counts = {state: 0 for state in STATES}
            per_host: dict[str, list[str]] = {}
            for job in self.jobs.values():
                counts[job.state] += 1
                if job.state in (ASSIGNED, RUNNING):
                    per_host.setdefault(job.assigned_host, []).append(job.id)
            return {
                "submitted": len(self.jobs),
                "counts": counts,
                "hosts": {h: sorted(ids) for h, ids in sorted(per_host.items())},
                "controls": self.controls.to_dict(),
            }


def echo_worker(scheduler: Scheduler, host: str, max_jobs: int | None = None) -> list[str]:
    """Stub worker: claims jobs and 'executes' them by echoing declared outputs."""
    done = []
    while max_jobs is None or len(done) < max_jobs:
        job = scheduler.claim(host)
        if job is None:
            break
        scheduler.report(job.id, "started", host)
        outputs = [{**o, "uri": f"{host}:/{job.id}/out{i}"} for i, o in enumerate(job.outputs)]
        scheduler.report(job.id, "succeeded", host, outputs)
        done.append(job.id)
    return done
