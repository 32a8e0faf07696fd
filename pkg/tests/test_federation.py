import hashlib
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bigsur import Workspace
from bigsur.errors import MalformedBundle, NoEndpoint, SealMismatch, TargetUnreachable
from bigsur.federation import BundleRecord, MetadataBundle, Selection, StubDescriptor
from fixture_catalog import ticking_clock


def site(name: str, start: int = 0, systems=("h1",)) -> Workspace:
    ws = Workspace(name, clock=ticking_clock(start))
    c = ws.catalog
    c.register_descriptor("site", {"name": f"{name} lab", "systems": [f"{name.lower()}{h}" for h in systems]})
    c.register_descriptor("researcher", {"name": f"{name} person", "affiliation": f"{name} lab"})
    c.register_type("GIF", "storage")
    c.register_type("AVHRR", "semantic")
    return ws


def add_object(ws: Workspace, name: str, types=("GIF",)):
    return ws.catalog.register_object(name, f"{ws.site} lab", f"ftp://{ws.site}/{name}", list(types),
                                      f"{ws.site} person")


def store_hash(ws: Workspace) -> str:
    return hashlib.sha256(ws.store.snapshot()).hexdigest()


def transfer(src: Workspace, dst: Workspace, selection=None):
    return dst.federation.import_bundle(src.federation.export_bundle(selection).to_bytes())


# -- export --------------------------------------------------------------------------

def test_empty_bundle():
    ws = Workspace("A")
    bundle = ws.federation.export_bundle()
    text = bundle.to_text()
    lines = text.splitlines()
    assert lines[0] == '{"bigsur_bundle":1,"origin":"A","created":"1970-01-01T00:00:00Z"}'
    assert len(lines) == 2 and '"count":0' in lines[1]
    assert MetadataBundle.parse(text) == bundle
    assert lines[1] == '{"seal":"%s","count":0}' % hashlib.sha256((lines[0] + "\n").encode()).hexdigest()


def test_export_deterministic_and_sorted():
    ws = site("A")
    add_object(ws, "x")
    first, second = ws.federation.export_bundle().to_bytes(), ws.federation.export_bundle().to_bytes()
    assert first == second and first.endswith(b"\n")
    bundle = MetadataBundle.parse(first)
    keys = [(r.kind, r.id, r.rev) for r in bundle.records]
    assert keys == sorted(keys)
    assert len(keys) == ws.store.revision_count()


def test_since_cursor_counts_new_revisions():
    ws = site("A")
    cursor = ws.federation.export_bundle().cursor
    add_object(ws, "x")
    add_object(ws, "y")
    ws.catalog.register_type("PNG", "storage")
    bundle = ws.federation.export_bundle(Selection.since(cursor))
    assert len(bundle.records) == 3
    assert bundle.cursor == cursor + 3


def test_by_kind_selection():
    ws = site("A")
    bundle = ws.federation.export_bundle(Selection.by_kind("type"))
    assert {r.kind for r in bundle.records} == {"type"} and len(bundle.records) == 2


# -- import --------------------------------------------------------------------------

def test_import_twice_all_skipped():
    a, b = site("A"), site("B")
    add_object(a, "x")
    first = transfer(a, b)
    assert first.added == a.store.revision_count() and first.rejected == 0
    before = store_hash(b)
    second = transfer(a, b)
    assert (second.added, second.updated, second.skipped) == (0, 0, a.store.revision_count())
    assert store_hash(b) == before


def test_update_keeps_old_revision():
    a, b = site("A"), site("B")
    obj = add_object(a, "x")
    transfer(a, b)
    a.catalog.register_descriptor("site", {"id": a.catalog.resolve("site", "A lab").id,
                                           "name": "A lab", "endpoint": "http://a:8750"})
    report = transfer(a, b)
    assert report.updated == 1
    site_id = a.catalog.resolve("site", "A lab").id
    assert [h.rev for h in b.store.history("site", site_id)] == [1, 2]
    assert b.federation.resolve_remote(obj.id) == a.store.load("object", obj.id)


@pytest.mark.parametrize("damage", [
    lambda t: t.replace('"x"', '"z"', 1),
    lambda t: t.replace('"rev":1', '"rev":2', 1),
    lambda t: "\n".join(l for i, l in enumerate(t.split("\n")) if i != 2),
])
def test_tampered_bundle_rejected_without_writes(damage):
    a, b = site("A"), site("B")
    add_object(a, "x")
    text = a.federation.export_bundle().to_text()
    before = store_hash(b)
    with pytest.raises(SealMismatch):
        b.federation.import_bundle(damage(text))
    assert store_hash(b) == before


@pytest.mark.parametrize("text", [
    "", "not json\n", '{"bigsur_bundle":2,"origin":"A","created":"1970-01-01T00:00:00Z"}\n',
    '{"bigsur_bundle":1,"origin":"A","created":"1970-01-01T00:00:00Z"}\n',
    '{"bigsur_bundle":1,"origin":"A","created":"1970-01-01T00:00:00Z"}\n{"seal":"00","count":0}',
])
def test_malformed_bundles(text):
    with pytest.raises((MalformedBundle, SealMismatch)):
        Workspace("B").federation.import_bundle(text)


def test_authority_local_records_untouchable():
    a, b = site("A"), site("B")
    transfer(a, b)
    # B relays everything it holds, including A's own records
    before = a.store.revision_count()
    report = a.federation.import_bundle(b.federation.export_bundle(Selection.everything()).to_bytes())
    assert (report.added, report.skipped, report.rejected) == (4, before, 0)
    # a higher revision of an A record, minted elsewhere, is refused
    res_id = a.catalog.resolve("researcher", "A person").id
    body = json.loads(a.store.get("researcher", res_id).body)
    body["name"] = "hijacked"
    record = BundleRecord("researcher", res_id, 2, body)
    snapshot = store_hash(a)
    with pytest.raises(MalformedBundle):
        a.federation.import_bundle(MetadataBundle.build("B", "2024-01-01T00:00:00Z", [record]).to_bytes())
    report = a.federation.import_bundle(MetadataBundle.build("A", "2024-01-01T00:00:00Z", [record]).to_bytes())
    assert report.rejected == 1 and "local-origin" in report.reasons[0]["reason"]
    assert store_hash(a) == snapshot
    assert a.catalog.resolve("researcher", res_id).name == "A person"


def test_relay_of_foreign_records_needs_everything_scope():
    a, b, c = site("A"), site("B"), site("C")
    transfer(a, b)
    assert transfer(b, c, Selection.everything()).rejected == 0
    assert c.store.revision_count() == a.store.revision_count() + b.store.revision_count()
    # a bundle labelled with one origin cannot smuggle another site's records
    records = a.federation.export_bundle(Selection.by_kind("type")).records
    with pytest.raises(MalformedBundle):
        c.federation.import_bundle(MetadataBundle.build("B", "2024-01-01T00:00:00Z", records).to_bytes())


def test_revision_gap_rejected():
    a, b = site("A"), Workspace("B")
    gif = a.catalog.resolve_type("GIF")
    a.catalog.annotate_type("GIF", {"note": "v2"})
    a.catalog.annotate_type("GIF", {"note": "v3"})
    only_latest = [r for r in a.federation.export_bundle(Selection.by_kind("type")).records
                   if r.id == gif.id and r.rev == 3]
    report = b.federation.import_bundle(MetadataBundle.build("A", "2024-01-01T00:00:00Z", only_latest))
    assert report.rejected == 1 and "gap" in report.reasons[0]["reason"]


# -- lineage across sites -------------------------------------------------------------

def test_stub_resolves_after_import():
    a, b = site("A"), site("B")
    remote = add_object(b, "scene", ["AVHRR"])
    a.catalog.register_function("ndvi", ["AVHRR"], ["AVHRR"])
    _, (out,) = a.catalog.record_run("ndvi", [remote.id], [{"name": "g", "uri": "u", "types": ["AVHRR"]}],
                                     "ah1", "A lab")
    assert isinstance(a.federation.resolve_remote(remote.id), StubDescriptor)
    graph = a.lineage.ancestors(out.id)
    assert graph.stubs() == [remote.id]
    assert f"UNRESOLVED {remote.id}" in a.lineage.defensibility_report(out.id)
    transfer(b, a)
    after = a.lineage.ancestors(out.id)
    assert after.stubs() == [] and after.nodes[remote.id] == "object"
    assert (set(after.nodes), set(after.edges)) == oracles.provenance_closure(a.store, out.id, "ancestors")
    assert "UNRESOLVED" not in a.lineage.defensibility_report(out.id)
    assert a.federation.resolve_remote(remote.id).name == "scene"
    assert a.federation.resolve_remote(out.id).id == out.id


def test_cross_site_query_is_union():
    a, b = site("A"), site("B")
    add_object(a, "a-photo")
    add_object(b, "b-photo")
    expect = sorted(set(oracles.answer(a.store, "sites_with_type", "GIF")) |
                    set(oracles.answer(b.store, "sites_with_type", "GIF")))
    transfer(a, b)
    got = [(r.kind, r.id, r.name) for r in b.query.answer("sites_with_type", "GIF")]
    assert sorted(got) == expect and len(got) == 2


# -- convergence ----------------------------------------------------------------------

def random_edits(ws: Workspace, rng: random.Random, n: int):
    for _ in range(n):
        i = f"{rng.random():.12f}"
        if rng.random() < 0.6:
            add_object(ws, f"{ws.site}-o{i}", rng.sample(["GIF", "AVHRR"], rng.randint(1, 2)))
        else:
            ws.catalog.register_type(f"{ws.site}-T{i}", "semantic", rng.sample(["AVHRR"], rng.randint(0, 1)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_convergence_disjoint_edits(seed, a_first):
    rng = random.Random(seed)
    a, b = site("A"), site("B", start=5000)
    random_edits(a, rng, rng.randint(0, 8))
    random_edits(b, rng, rng.randint(0, 8))
    order = [(a, b), (b, a)] if a_first else [(b, a), (a, b)]
    counts = []
    for src, dst in order:
        before = dst.store.revision_count()
        report = transfer(src, dst)
        assert report.rejected == 0
        counts.append(dst.store.revision_count() >= before)
    assert all(counts)
    everything = Selection.everything()
    assert a.federation.export_bundle(everything).to_bytes() == b.federation.export_bundle(everything).to_bytes()


def test_bundle_export_import_export_fresh():
    a = site("A")
    add_object(a, "x")
    data = a.federation.export_bundle(Selection.everything()).to_bytes()
    fresh = Workspace("Z")
    assert fresh.federation.import_bundle(data).added == a.store.revision_count()
    assert fresh.federation.export_bundle(Selection.everything()).to_bytes() == data


@settings(max_examples=20, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "a-since"]), max_size=8))
def test_imports_monotone(sequence):
    a, b = site("A"), site("B")
    rng = random.Random(len(sequence))
    c = Workspace("C")
    count = 0
    for step in sequence:
        random_edits(a, rng, 1)
        src = a if step.startswith("a") else b
        sel = Selection.since(2) if step == "a-since" else None
        try:
            c.federation.import_bundle(src.federation.export_bundle(sel).to_bytes())
        except SealMismatch:
            pytest.fail("valid bundle refused")
        assert c.store.revision_count() >= count
        count = c.store.revision_count()


# -- publish -------------------------------------------------------------------------

def test_publish_to_file_advances_cursor(tmp_path):
    a = site("A")
    b_site = a.catalog.register_descriptor("site", {"name": "Field B"})
    pub = a.federation.publish("Field B", out=tmp_path)
    bundle_file = tmp_path / pub.destination.split("/")[-1]
    assert bundle_file.exists() and pub.target_site == b_site.id
    assert pub.cursor == a.store.revision_count() - 0
    add_object(a, "new")
    second = a.federation.publish("Field B", out=tmp_path / "second.bundle")
    assert second.cursor > pub.cursor and second.selection == f"since:{pub.cursor}"
    assert len(MetadataBundle.parse((tmp_path / "second.bundle").read_bytes()).records) == 1


def test_publish_no_endpoint():
    a = site("A")
    a.catalog.register_descriptor("site", {"name": "Field B"})
    with pytest.raises(NoEndpoint):
        a.federation.publish("Field B")


def test_publish_unreachable_keeps_cursor():
    def down(endpoint, payload):
        raise TargetUnreachable(endpoint)

    a = Workspace("A", clock=ticking_clock(), transport=down)
    a.catalog.register_descriptor("site", {"name": "B", "endpoint": "http://127.0.0.1:9"})
    with pytest.raises(TargetUnreachable):
        a.federation.publish("B")
    assert a.federation.publications() == []
    assert a.federation.cursor_for(a.catalog.resolve("site", "B").id) == 0


def test_publish_via_transport_delivers_importable_bundle():
    b = site("B")
    delivered = []
    a = Workspace("A", clock=ticking_clock(), transport=lambda ep, data: delivered.append((ep, data)))
    a.catalog.register_descriptor("site", {"name": "B", "endpoint": "http://b:8750"})
    pub = a.federation.publish("B")
    assert delivered[0][0] == "http://b:8750"
    assert b.federation.import_bundle(delivered[0][1]).added == pub.cursor


def test_publications_persist(tmp_path):
    ws = Workspace.init(tmp_path / "home", "A", name="A lab")
    ws.catalog.register_descriptor("site", {"name": "B"})
    ws.federation.publish("B", out=tmp_path / "b.bundle")
    again = Workspace.open(tmp_path / "home")
    assert [p.to_dict() for p in again.federation.publications()] == \
        [p.to_dict() for p in ws.federation.publications()]
