"""Command line entry point.

Runs directly against the data directory named by ``--home`` or
``BIGSUR_HOME``. Exit status: 0 success, 1 domain error (the error code is
printed on standard error), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import uvicorn

from .errors import BigSurError, InvalidConfig
from .federation import Selection
from .ingest import apply_directive, ingest, parse_fields
from .model import canonical_json
from .scheduler import COMMANDS, echo_worker
from .service.app import create_app, parse_address
from .workspace import FEATURES, HOME_ENV, FeatureConfig, Workspace

ADD_VERBS = {
    "site": "site", "researcher": "researcher", "type": "type", "object": "object",
    "collection": "collection", "function": "function", "tool": "tool",
    "document": "document", "responsibility": "responsible",
}
LINK_RELATIONS = (
    "represented-as", "derived-from-type", "subtype-of", "member-of",
    "subcollection-of", "favorite-of",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigsur", description="Scientific metadata kernel.")
    parser.add_argument("--home", help="data directory (default: $BIGSUR_HOME or ./.bigsur)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a site data directory")
    p.add_argument("--site", required=True, help="site token used as the id prefix")
    p.add_argument("--name", help="display name of the home site")
    p.add_argument("--systems", default="", help="comma-separated host names")
    p.add_argument("--endpoint", help="service URL other sites publish to")
    p.add_argument("--disable", action="append", default=[], choices=FEATURES)
    p.add_argument("--notebook", action="store_true",
                   help="catalog, query and lineage only")
    p.add_argument("--listen", help="service listen address host:port")

    p = sub.add_parser("add", help="register a record: add <kind> key=value ...")
    p.add_argument("kind", choices=sorted(ADD_VERBS))
    p.add_argument("fields", nargs="*", help="key=value; list values are comma-separated")

    p = sub.add_parser("link", help="relate two entities")
    p.add_argument("relation", choices=LINK_RELATIONS)
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("find", help="evaluate a CQL query")
    p.add_argument("cql")

    p = sub.add_parser("lineage", help="defensibility report, or the graph with --graph")
    p.add_argument("id")
    p.add_argument("--graph", action="store_true")
    p.add_argument("--descendants", action="store_true")
    p.add_argument("--depth", type=int)

    p = sub.add_parser("report", help="defensibility report of an object")
    p.add_argument("id")

    p = sub.add_parser("convert-plan", help="shortest converter chain between types")
    p.add_argument("source")
    p.add_argument("target")

    job = sub.add_parser("job", help="processing queue").add_subparsers(dest="job_command",
                                                                       required=True)
    p = job.add_parser("submit")
    p.add_argument("function")
    p.add_argument("--input", action="append", default=[], help="object id or @job#k")
    p.add_argument("--param", action="append", default=[], help="key=value")
    p.add_argument("--priority", type=int, default=0)
    p.add_argument("--host", action="append", help="restrict to these hosts")
    p = job.add_parser("claim")
    p.add_argument("host")
    p = job.add_parser("report")
    p.add_argument("job")
    p.add_argument("outcome", choices=("started", "succeeded", "failed"))
    p.add_argument("--host", required=True)
    p.add_argument("--outputs", help="JSON list of {name, uri, types}")
    p = job.add_parser("ctl")
    p.add_argument("control", choices=COMMANDS)
    p.add_argument("target", nargs="?")
    p.add_argument("value", nargs="?", type=int)
    job.add_parser("status")
    p = job.add_parser("cancel")
    p.add_argument("job")
    p = job.add_parser("derive", help="queue conversion jobs toward a type")
    p.add_argument("object")
    p.add_argument("type")
    p = job.add_parser("work", help="run the echo worker on a host until the queue is empty")
    p.add_argument("host")
    p.add_argument("--max", type=int)

    p = sub.add_parser("publish", help="send a metadata bundle to another site")
    p.add_argument("--to", required=True)
    p.add_argument("--out", help="write the bundle to this file or directory")
    p.add_argument("--kind", action="append", help="only these record kinds")
    p.add_argument("--all", action="store_true", help="ignore the publication cursor")

    p = sub.add_parser("import", help="import a bundle file")
    p.add_argument("bundle")

    p = sub.add_parser("ingest", help="bulk-register from an ingest file")
    p.add_argument("file")

    p = sub.add_parser("export", help="write SQL or a bundle to standard output")
    p.add_argument("format", choices=("sql", "bundle"))
    p.add_argument("--schema-only", action="store_true")
    p.add_argument("--since", type=int)
    p.add_argument("--everything", action="store_true")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--listen", help="host:port (default: configured listen address)")
    return parser


def _pairs(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidConfig(f"expected key=value, got {item!r}")
        out[key] = value
    return out


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") or not text else text + "\n")


def _job_line(job) -> str:
    return f"{job.id}\t{job.state}\t{job.function}"


def run(args: argparse.Namespace) -> None:
    if args.command == "init":
        disabled = set(args.disable)
        if args.notebook:
            disabled |= {"scheduler", "federation"}
        features = FeatureConfig(**{f: f not in disabled for f in FEATURES},
                                 listen_address=args.listen)
        systems = tuple(s for s in args.systems.split(",") if s)
        ws = Workspace.init(_home(args.home), args.site, features, name=args.name,
                            systems=systems, endpoint=args.endpoint)
        _out(f"initialized site {ws.site} at {ws.home}")
        return

    ws = Workspace.open(args.home)
    c = args.command
    if c == "add":
        record = apply_directive(ws.catalog, ADD_VERBS[args.kind], parse_fields(args.fields))
        _out(str(record.id))
    elif c == "link":
        _out(str(_link(ws, args.relation, args.a, args.b).id))
    elif c == "find":
        _out(ws.query.eval_cql(args.cql).to_text())
    elif c == "lineage":
        if args.graph or args.descendants or args.depth is not None:
            walk = ws.lineage.descendants if args.descendants else ws.lineage.ancestors
            _out(walk(args.id, args.depth).to_text())
        else:
            _out(ws.lineage.defensibility_report(args.id))
    elif c == "report":
        _out(ws.lineage.defensibility_report(args.id))
    elif c == "convert-plan":
        _out(ws.lineage.plan_conversion(args.source, args.target).to_text())
    elif c == "job":
        _job(ws, args)
    elif c == "publish":
        selection = None
        if args.kind:
            selection = Selection.by_kind(*args.kind)
        elif args.all:
            selection = Selection()
        pub = ws.federation.publish(args.to, selection, out=args.out)
        _out(f"published {pub.id} to {pub.target_site} cursor {pub.cursor} -> {pub.destination}")
    elif c == "import":
        federation = ws.federation
        _out(federation.import_bundle(Path(args.bundle).read_bytes()).to_text())
    elif c == "ingest":
        _out(ingest(ws.catalog, args.file).to_text())
    elif c == "export":
        if args.format == "sql":
            ws.require("catalog")
            _out(ws.store.export_sql(schema_only=args.schema_only))
        else:
            if args.everything:
                selection = Selection.everything()
            elif args.since is not None:
                selection = Selection.since(args.since)
            else:
                selection = Selection()
            sys.stdout.write(ws.federation.export_bundle(selection).to_text())
    elif c == "serve":
        host, port = parse_address(args.listen or ws.features.listen_address or "127.0.0.1:8750")
        uvicorn.run(create_app(ws), host=host, port=port, log_level="info")


def _home(home: str | None) -> Path:
    return Path(home or os.environ.get(HOME_ENV) or ".bigsur")


def _link(ws: Workspace, relation: str, a: str, b: str):
    catalog = ws.catalog
    if relation in ("represented-as", "derived-from-type"):
        return catalog.associate_types(a, b, relation)
    if relation == "subtype-of":
        child = catalog.resolve_type(a)
        return catalog.register_type(child.name, child.kind, [b])
    if relation == "member-of":
        return catalog.add_to_collection(b, members=[a])
    if relation == "subcollection-of":
        return catalog.add_to_collection(b, subcollections=[a])
    return catalog.mark_favorite(a, b)


def _job(ws: Workspace, args: argparse.Namespace) -> None:
    scheduler = ws.scheduler
    jc = args.job_command
    if jc == "submit":
        job = scheduler.submit(args.function, args.input, _pairs(args.param), args.priority,
                               args.host)
        _out(_job_line(job))
    elif jc == "claim":
        job = scheduler.claim(args.host)
        _out(_job_line(job) if job else "none")
    elif jc == "report":
        outputs = json.loads(args.outputs) if args.outputs else None
        _out(_job_line(scheduler.report(args.job, args.outcome, args.host, outputs)))
    elif jc == "ctl":
        scheduler.control(args.control, args.target, args.value)
        _out(canonical_json(scheduler.status()["controls"]))
    elif jc == "status":
        _out(json.dumps(scheduler.status(), indent=2, sort_keys=True))
    elif jc == "cancel":
        _out(_job_line(scheduler.cancel(args.job)))
    elif jc == "derive":
        for job_id in ws.lineage.auto_derive(args.object, args.type):
            _out(_job_line(scheduler.get(job_id)))
    elif jc == "work":
        for job_id in echo_worker(scheduler, args.host, args.max):
            _out(_job_line(scheduler.get(job_id)))


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run(args)
    except BigSurError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc.message}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: IOError: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
