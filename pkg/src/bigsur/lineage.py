"""Provenance traversal, defensibility reports and conversion planning."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .catalog import Catalog
from .errors import NoConversionPath, NotFound
from .model import DataObject, EntityId

OBJECT, RUN, STUB = "object", "run", "stub"


@dataclass
class ProvenanceGraph:
    """Objects, runs and unresolved remote stubs keyed by id.

    Edges are ``(object, run)`` for inputs and ``(run, object)`` for outputs.
    """

    root: str
    nodes: dict[str, str] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)

    def stubs(self) -> list[str]:
        return sorted(n for n, kind in self.nodes.items() if kind == STUB)

    def of_kind(self, kind: str) -> list[str]:
        return sorted(n for n, k in self.nodes.items() if k == kind)

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [{"id": n, "kind": self.nodes[n]} for n in sorted(self.nodes)],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    def to_text(self) -> str:
        lines = [f"GRAPH {self.root}"]
        lines += [f"NODE {self.nodes[n]} {n}" for n in sorted(self.nodes)]
        lines += [f"EDGE {a} {b}" for a, b in sorted(self.edges)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConversionPlan:
    source: str
    target: str
    steps: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    def to_text(self) -> str:
        lines = [f"PLAN {self.source} -> {self.target} ({len(self.steps)} steps)"]
        lines += [f"STEP {i} {fn}" for i, fn in enumerate(self.steps, start=1)]
        return "\n".join(lines) + "\n"


class Lineage:
    def __init__(self, catalog: Catalog, scheduler: Callable[[], object] | None = None):
        self.catalog = catalog
        self.store = catalog.store
        # callable so that feature gating is checked at call time
        self._scheduler = scheduler

    def _object(self, ref: str) -> DataObject:
        obj = self.store.find("object", ref)
        if obj is None:
            raise NotFound(f"no object {ref}")
        return obj

    def ancestors(self, ref: str, max_depth: int | None = None) -> ProvenanceGraph:
        with self.store.lock:
            obj = self._object(ref)
            graph = ProvenanceGraph(obj.id, {obj.id: OBJECT})
            frontier = deque([(obj, 0)])
            while frontier:
                current, depth = frontier.popleft()
                if current.created_by is None:
                    continue
                if max_depth is not None and depth >= max_depth:
                    continue
                run_id = current.created_by
                graph.edges.add((run_id, current.id))
                if run_id in graph.nodes:
                    continue
                run = self.store.find("run", run_id)
                if run is None:
                    graph.nodes[run_id] = STUB
                    continue
                graph.nodes[run_id] = RUN
                for src in run.inputs:
                    graph.edges.add((src, run_id))
                    if src in graph.nodes:
                        continue
                    parent = self.store.find("object", src)
                    if parent is None:
                        graph.nodes[src] = STUB
                    else:
                        graph.nodes[src] = OBJECT
                        frontier.append((parent, depth + 1))
            return graph

    def _consumers(self) -> dict[str, list]:
        index: dict[str, list] = {}
        for run in self.store.records("run"):
            for src in run.inputs:
                index.setdefault(src, []).append(run)
        return index

    def descendants(self, ref: str, max_depth: int | None = None) -> ProvenanceGraph:
        with self.store.lock:
            obj = self._object(ref)
            consumers = self._consumers()
            graph = ProvenanceGraph(obj.id, {obj.id: OBJECT})
            frontier = deque([(obj.id, 0)])
            while frontier:
                current, depth = frontier.popleft()
                if max_depth is not None and depth >= max_depth:
                    continue
                for run in consumers.get(current, ()):
                    graph.edges.add((current, run.id))
                    if run.id in graph.nodes:
                        continue
                    graph.nodes[run.id] = RUN
                    for out in run.outputs:
                        graph.edges.add((run.id, out))
                        if out in graph.nodes:
                            continue
                        if self.store.find("object", out) is None:
                            graph.nodes[out] = STUB
                        else:
                            graph.nodes[out] = OBJECT
                            frontier.append((out, depth + 1))
            return graph

    def defensibility_report(self, ref: str) -> str:
        """Every ancestor run, producers before consumers, as a text trace."""
        with self.store.lock:
            graph = self.ancestors(ref)
            obj = self.store.load("object", graph.root)
            lines = [f"REPORT {obj.id} {obj.name}"]
            runs = {r: self.store.load("run", r) for r in graph.of_kind(RUN)}
            if not runs and not graph.stubs():
                lines.append("no derivation history")
                if obj.entered_by:
                    lines.append(f"ENTERED {obj.id} BY {obj.entered_by}")
                return "\n".join(lines) + "\n"
            for run in _topological(runs):
                fn = self.store.find("function", run.function)
                lines.append(f"RUN {run.id}")
                lines.append(f"  FUNCTION {run.function} {fn.name if fn else '?'}")
                for key in sorted(run.parameters):
                    lines.append(f"  PARAM {key}={run.parameters[key]}")
                lines.append(f"  HOST {run.host}")
                lines.append(f"  SITE {run.site}")
                lines.append(f"  STARTED {run.started}")
                lines.append(f"  ENDED {run.ended}")
                lines.append(f"  STATUS {run.status}")
                for src in run.inputs:
                    if graph.nodes.get(src) == STUB:
                        lines.append(f"  UNRESOLVED {src}")
                    else:
                        lines.append(f"  INPUT {src} origin={EntityId(src).site}")
                for out in run.outputs:
                    lines.append(f"  OUTPUT {out}")
            for stub in graph.stubs():
                if stub not in {i for r in runs.values() for i in r.inputs}:
                    lines.append(f"UNRESOLVED {stub}")
            for oid in graph.of_kind(OBJECT):
                entered_by = self.store.load("object", oid).entered_by
                if entered_by:
                    lines.append(f"ENTERED {oid} BY {entered_by}")
            return "\n".join(lines) + "\n"

    # -- conversions ----------------------------------------------------

    def converter_edges(self) -> dict[str, list[tuple[str, str]]]:
        """Input type -> [(function id, output type)] over enabled converters."""
        edges: dict[str, list[tuple[str, str]]] = {}
        for fn in self.store.records("function"):
            if fn.is_converter and fn.enabled and not fn.retired:
                edges.setdefault(fn.input_types[0], []).append((fn.id, fn.output_types[0]))
        return edges

    def plan_conversion(self, source: str, target: str) -> ConversionPlan:
        """Shortest converter chain; ties go to the lexicographically smallest id sequence."""
        with self.store.lock:
            src = self.catalog.resolve_type(source).id
            dst = self.catalog.resolve_type(target).id
            steps = _shortest_chain(self.converter_edges(), src, dst)
        if steps is None:
            raise NoConversionPath(f"no converter chain from {source} to {target}")
        return ConversionPlan(src, dst, steps)

    def auto_derive(self, ref: str, target_type: str) -> list[str]:
        """Submit one job per conversion step toward ``target_type``; returns job ids."""
        with self.store.lock:
            obj = self._object(ref)
            dst = self.catalog.resolve_type(target_type).id
            if dst in obj.types:
                return []
            edges = self.converter_edges()
            best = None
            for type_id in sorted(obj.types):
                steps = _shortest_chain(edges, type_id, dst)
                if steps is not None and (best is None or len(steps) < len(best)):
                    best = steps
        if best is None:
            raise NoConversionPath(f"{obj.id} has no type convertible to {target_type}")
        scheduler = self._scheduler()
        job_ids: list[str] = []
        for step, fn_id in enumerate(best):
            inputs = [obj.id] if step == 0 else [f"@{job_ids[-1]}#0"]
            job = scheduler.submit(fn_id, inputs, {"derive_target": dst, "step": str(step)})
            job_ids.append(job.id)
        return job_ids


def _shortest_chain(edges, src: str, dst: str) -> tuple[str, ...] | None:
    if src == dst:
        return ()
    # layered BFS; the best path to each node of a layer is the minimum over
    # (best path to a predecessor) + (function id), which is exact for
    # lexicographic order on equal-length sequences
    best: dict[str, tuple[str, ...]] = {src: ()}
    layer = [src]
    while layer:
        candidates: dict[str, tuple[str, ...]] = {}
        for node in layer:
            for fn_id, out in edges.get(node, ()):
                if out in best:
                    continue
                path = best[node] + (fn_id,)
                if out not in candidates or path < candidates[out]:
                    candidates[out] = path
        best.update(candidates)
        if dst in candidates:
            return candidates[dst]
        layer = sorted(candidates)
    return None


def _topological(runs: dict) -> list:
    produced_by = {}
    for run in runs.values():
        for out in run.outputs:
            produced_by[out] = run.id
    deps = {rid: set() for rid in runs}
    for run in runs.values():
        for src in run.inputs:
            producer = produced_by.get(src)
            if producer is not None and producer != run.id:
                deps[run.id].add(producer)
    dependents: dict[str, set[str]] = {rid: set() for rid in runs}
    for rid, before in deps.items():
        for b in before:
            dependents[b].add(rid)
    ready = [(runs[r].ended, r) for r, d in deps.items() if not d]
    heapq.heapify(ready)
    order = []
    while ready:
        _, rid = heapq.heappop(ready)
        order.append(runs[rid])
        for nxt in dependents[rid]:
            deps[nxt].discard(rid)
            if not deps[nxt]:
                heapq.heappush(ready, (runs[nxt].ended, nxt))
    return order
