"""FastAPI application mapping endpoints 1:1 onto workspace operations.

Every error is answered as ``{"error": <code>, "message": <text>}`` where the
code is the stable error token also printed by the CLI.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from ..errors import (
    BigSurError, BindFailure, CorruptSnapshot, Duplicate, FeatureDisabled, InvalidConfig,
    MalformedBundle, MalformedHeader, NotFound, QuerySyntaxError, SealMismatch, StaleRevision,
    UnknownPredicate,
)
from ..federation import Selection
from ..workspace import Workspace
from .schemas import ClaimIn, ControlIn, JobIn, RecordIn, ReportIn

STATUS_BY_ERROR = (
    (FeatureDisabled, 404),
    (NotFound, 404),
    (Duplicate, 409),
    (StaleRevision, 409),
    (SealMismatch, 400),
    (MalformedBundle, 400),
    (MalformedHeader, 400),
    (CorruptSnapshot, 400),
    (QuerySyntaxError, 400),
    (UnknownPredicate, 400),
)


def status_for(exc: BigSurError) -> int:
    for cls, status in STATUS_BY_ERROR:
        if isinstance(exc, cls):
            return status
    return 422


def _stored(stored) -> dict:
    return {"kind": stored.kind, "id": stored.id, "rev": stored.rev,
            "origin": stored.revision.origin, "superseded": stored.superseded,
            "body": json.loads(stored.body)}


def create_app(workspace: Workspace) -> FastAPI:
    app = FastAPI(title="bigsur", version="0.1.0")
    ws = workspace

    @app.exception_handler(BigSurError)
    async def domain_error(_request: Request, exc: BigSurError):
        return JSONResponse(exc.to_dict(), status_code=status_for(exc))

    @app.exception_handler(RequestValidationError)
    async def bad_request(_request: Request, exc: RequestValidationError):
        return JSONResponse({"error": "ValidationFailed", "message": str(exc.errors())},
                            status_code=422)

    # -- catalog --------------------------------------------------------

    @app.post("/records", status_code=201)
    def post_record(item: RecordIn):
        record = ws.catalog.register_record(item.kind, item.body)
        return _stored(ws.store.get(item.kind, record.id))

    @app.get("/records/{kind}/{entity_id:path}")
    def get_record(kind: str, entity_id: str, rev: int | None = None):
        ws.require("catalog")
        return _stored(ws.store.get(kind, entity_id, rev))

    # -- query and lineage ----------------------------------------------

    @app.get("/query")
    def query(cql: str):
        result = ws.query.eval_cql(cql)
        return {"text": result.to_text(), "rows": result.to_list()}

    @app.get("/objects/{object_id:path}/lineage")
    def lineage(object_id: str, direction: str = "ancestors", depth: int | None = None):
        if direction not in ("ancestors", "descendants"):
            raise InvalidConfig("direction must be ancestors or descendants")
        graph = getattr(ws.lineage, direction)(object_id, depth)
        return {**graph.to_dict(), "text": graph.to_text()}

    @app.get("/objects/{object_id:path}/report", response_class=PlainTextResponse)
    def report(object_id: str):
        return ws.lineage.defensibility_report(object_id)

    # -- scheduler ------------------------------------------------------

    @app.post("/jobs", status_code=201)
    def submit(item: JobIn):
        job = ws.scheduler.submit(item.function, item.inputs, item.params,
                                  item.priority, item.constraints)
        return job.to_dict()

    @app.post("/jobs/claim")
    def claim(item: ClaimIn):
        job = ws.scheduler.claim(item.host)
        return {"job": job.to_dict() if job else None}

    @app.post("/jobs/{job_id:path}/report")
    def job_report(job_id: str, item: ReportIn):
        outputs = [o.model_dump() for o in item.outputs] if item.outputs is not None else None
        return ws.scheduler.report(job_id, item.outcome, item.host, outputs).to_dict()

    @app.post("/controls")
    def controls(item: ControlIn):
        state = ws.scheduler.control(item.command, item.target, item.value)
        return state.to_dict()

    @app.get("/status")
    def status():
        return ws.scheduler.status()

    # -- federation -----------------------------------------------------

    @app.post("/bundles")
    async def import_bundle(request: Request):
        federation = ws.federation
        payload = await request.body()
        return federation.import_bundle(payload).to_dict()

    @app.get("/bundles", response_class=PlainTextResponse)
    def export_bundle(since: int | None = None):
        selection = Selection.since(since) if since is not None else Selection()
        return ws.federation.export_bundle(selection).to_text()

    return app


@dataclass
class ServiceHandle:
    server: uvicorn.Server
    thread: threading.Thread
    host: str
    port: int

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self, timeout: float = 5.0) -> None:
        self.server.should_exit = True
        self.thread.join(timeout)


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise InvalidConfig(f"listen address {address!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def serve(workspace: Workspace, address: str | None = None, timeout: float = 10.0) -> ServiceHandle:
    """Start the service in a background thread; returns once it accepts connections."""
    address = address or workspace.features.listen_address
    if not address:
        raise InvalidConfig("no listen address configured")
    host, port = parse_address(address)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
        if port == 0:
            port = probe.getsockname()[1]
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc.strerror}") from None
    finally:
        probe.close()
    config = uvicorn.Config(create_app(workspace), host=host, port=port,
                            log_level="warning", lifespan="off")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, name="bigsur-service", daemon=True)
    thread.start()
    deadline = time.monotonic() + timeout
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            raise BindFailure(f"service did not start on {host}:{port}")
        time.sleep(0.02)
    return ServiceHandle(server, thread, host, port)
