import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigsur.catalog import Catalog
from bigsur.errors import (
    ConverterArity, CycleRejected, Duplicate, DuplicateType, EmptyTypes, InputOutputOverlap,
    KindMismatch, NotFound, RelationConstraint, SelfAssociation, UnknownFunction, UnknownSite,
    UnknownType, ValidationFailed,
)
from bigsur.store import Store


@pytest.fixture
def cat():
    c = Catalog(Store("a"), clock=lambda: "2024-01-01T00:00:00Z")
    c.register_descriptor("site", {"name": "Scripps", "systems": ["ocean1"]})
    c.register_descriptor("site", {"name": "Field Station"})  # tracked, no endpoint
    c.register_descriptor("researcher", {"name": "R1", "affiliation": "Scripps"})
    c.register_descriptor("researcher", {"name": "R2", "affiliation": "Scripps"})
    c.register_type("REGIS Aerial Photograph", "semantic")
    c.register_type("GIF", "storage")
    c.register_type("PNG", "storage")
    c.register_type("HDF5", "storage")
    c.register_type("AVHRR", "semantic")
    c.register_type("NDVI-grid", "semantic")
    return c


def test_register_paper_types(cat):
    regis = cat.resolve_type("REGIS Aerial Photograph")
    assert (regis.kind, regis.parents) == ("semantic", frozenset())
    assert cat.resolve_type("HDF5").kind == "storage"


def test_duplicate_type(cat):
    with pytest.raises(DuplicateType):
        cat.register_type("GIF", "storage")
    # same name, other kind, is a different type
    assert cat.register_type("GIF", "semantic").kind == "semantic"
    assert len(cat.resolve_types("GIF")) == 2


def test_type_cycle_rejected(cat):
    cat.register_type("B", "semantic")
    cat.register_type("A", "semantic", ["B"])
    before = cat.store.revision_count()
    with pytest.raises(CycleRejected):
        cat.register_type("B", "semantic", ["A"])
    assert cat.store.revision_count() == before


def test_type_gains_parent_as_new_revision(cat):
    cat.register_type("Image", "semantic")
    node = cat.register_type("AVHRR", "semantic", ["Image"])
    assert cat.store.current_rev("type", node.id) == 2
    assert cat.resolve_type("Image").id in node.parents


def test_parent_kind_mismatch(cat):
    with pytest.raises(KindMismatch):
        cat.register_type("Photo", "semantic", ["GIF"])
    with pytest.raises(UnknownType):
        cat.register_type("Photo", "semantic", ["Nothing"])


def test_associations(cat):
    assoc = cat.associate_types("REGIS Aerial Photograph", "GIF", "represented-as")
    assert assoc.relation == "represented-as"
    # explicitly not a subtype edge
    assert cat.resolve_type("REGIS Aerial Photograph").parents == frozenset()
    with pytest.raises(Duplicate):
        cat.associate_types("REGIS Aerial Photograph", "GIF", "represented-as")
    with pytest.raises(SelfAssociation):
        cat.associate_types("GIF", "GIF", "represented-as")
    with pytest.raises(RelationConstraint):
        cat.associate_types("REGIS Aerial Photograph", "AVHRR", "represented-as")
    assert cat.associate_types("NDVI-grid", "AVHRR", "derived-from-type")
    with pytest.raises(ValidationFailed):
        cat.associate_types("NDVI-grid", "AVHRR", "is-a")


def test_dual_typed_object(cat):
    obj = cat.register_object("photo", "Scripps", "ftp://x/p.gif",
                              ["REGIS Aerial Photograph", "GIF"], "R1")
    assert len(obj.types) == 2
    assert obj.created_by is None and obj.entered_by == cat.resolve("researcher", "R1").id


def test_object_errors(cat):
    with pytest.raises(EmptyTypes):
        cat.register_object("x", "Scripps", "u", [], "R1")
    with pytest.raises(UnknownType):
        cat.register_object("x", "Scripps", "u", ["JPEG"], "R1")
    with pytest.raises(UnknownSite):
        cat.register_object("x", "Mars", "u", ["GIF"], "R1")
    with pytest.raises(ValidationFailed):
        cat.register_object("x", "Scripps", "u", ["GIF"], None)


def test_descriptors(cat):
    tool = cat.register_descriptor("tool", {"name": "ImageViz", "version": "2.1",
                                            "handles_types": ["GIF"]})
    assert tool.handles_types == {cat.resolve_type("GIF").id}
    doc = cat.register_descriptor("document", {"title": "AVHRR notes", "uri": "http://d",
                                               "about_types": ["AVHRR"], "authors": ["R1"]})
    assert len(doc.authors) == 1
    with pytest.raises(ValidationFailed):
        cat.register_descriptor("document", {"title": "no uri", "uri": ""})
    with pytest.raises(UnknownSite):
        cat.register_descriptor("researcher", {"name": "R9", "affiliation": "Mars"})
    with pytest.raises(ValidationFailed):
        cat.register_descriptor("type", {"name": "x"})


def test_descriptor_update_by_id(cat):
    site = cat.resolve("site", "Field Station")
    cat.register_descriptor("site", {"id": site.id, "name": "Field Station",
                                     "endpoint": "http://fs:8750"})
    assert cat.store.current_rev("site", site.id) == 2
    assert cat.resolve("site", site.id).endpoint == "http://fs:8750"


def test_collection_cycle(cat):
    a = cat.register_descriptor("collection", {"name": "A"})
    b = cat.register_descriptor("collection", {"name": "B", "subcollections": [a.id]})
    c = cat.register_descriptor("collection", {"name": "C", "subcollections": [b.id]})
    with pytest.raises(CycleRejected):
        cat.add_to_collection("A", subcollections=[c.id])
    with pytest.raises(ValidationFailed):
        cat.add_to_collection("A", subcollections=[a.id])
    assert cat.resolve("collection", "A").subcollections == frozenset()


def test_mark_favorite(cat):
    cat.register_descriptor("tool", {"name": "IDL", "version": "5"})
    r1 = cat.resolve("researcher", "R1").id
    assert cat.mark_favorite("IDL", "R1").favorite_of == {r1}
    revs = cat.store.revision_count()
    assert cat.mark_favorite("IDL", "R1").favorite_of == {r1}
    assert cat.store.revision_count() == revs
    with pytest.raises(NotFound):
        cat.mark_favorite("IDL", "Nobody")


def test_functions(cat):
    fn = cat.register_function("ndvi", ["AVHRR"], ["NDVI-grid"])
    assert fn.enabled and not fn.is_converter
    conv = cat.register_function("gif2png", ["GIF"], ["PNG"], is_converter=True)
    assert conv.is_converter
    with pytest.raises(ConverterArity):
        cat.register_function("bad", ["GIF", "PNG"], ["HDF5"], is_converter=True)
    with pytest.raises(ConverterArity):
        cat.register_function("same", ["GIF"], ["GIF"], is_converter=True)
    with pytest.raises(UnknownType):
        cat.register_function("bad", ["JPEG"], ["PNG"])
    assert not cat.set_function_enabled("ndvi", False).enabled


def test_responsibilities(cat):
    gif = cat.resolve_type("GIF")
    resp = cat.assign_responsibility(gif.id, "R1", "owner")
    assert resp.entity == gif.id
    with pytest.raises(Duplicate):
        cat.assign_responsibility(gif.id, "R1", "owner")
    obj = cat.register_object("buoy log", "Field Station", "file:///log", ["HDF5"], "R1")
    assert cat.assign_responsibility(obj.id, "R2", "curator").role == "curator"
    with pytest.raises(NotFound):
        cat.assign_responsibility("a/nothing", "R1", "owner")
    with pytest.raises(NotFound):
        cat.assign_responsibility(gif.id, "Nobody", "owner")


def test_retire_keeps_history(cat):
    tool = cat.register_descriptor("tool", {"name": "Old", "version": "1"})
    retired = cat.retire("tool", "Old")
    assert retired.retired and cat.store.current_rev("tool", tool.id) == 2


def test_record_run(cat):
    raw = cat.register_object("rawA", "Scripps", "ftp://raw", ["AVHRR"], "R1")
    cat.register_function("ndvi", ["AVHRR"], ["NDVI-grid"])
    run, outs = cat.record_run("ndvi", [raw.id],
                               [{"name": "grid", "uri": "ftp://g", "types": ["NDVI-grid"]}],
                               host="ocean1", site="Scripps", params={"k": "3"})
    assert outs[0].created_by == run.id and outs[0].entered_by is None
    assert run.inputs == (raw.id,) and run.outputs == (outs[0].id,)
    assert cat.store.load("object", outs[0].id).created_by == run.id


def test_record_run_errors(cat):
    raw = cat.register_object("rawA", "Scripps", "ftp://raw", ["AVHRR"], "R1")
    cat.register_function("ndvi", ["AVHRR"], ["NDVI-grid"])
    with pytest.raises(InputOutputOverlap):
        cat.record_run("ndvi", [raw.id], [{"id": raw.id, "name": "rawA", "uri": "u",
                                           "types": ["AVHRR"]}], "ocean1", "Scripps")
    with pytest.raises(UnknownFunction):
        cat.record_run("nope", [raw.id], [], "ocean1", "Scripps")
    with pytest.raises(NotFound):
        cat.record_run("ndvi", ["a/obj9999"], [], "ocean1", "Scripps")


def test_record_run_remote_input(cat):
    cat.register_function("ndvi", ["AVHRR"], ["NDVI-grid"])
    run, _ = cat.record_run("ndvi", ["siteB/obj9"],
                            [{"name": "g", "uri": "u", "types": ["NDVI-grid"]}],
                            "ocean1", "Scripps")
    assert run.inputs == ("siteB/obj9",)
    assert cat.store.find("object", "siteB/obj9") is None


def test_record_run_cycle_is_atomic(cat):
    cat.register_function("f", ["AVHRR"], ["AVHRR"])
    a = cat.register_object("a", "Scripps", "u", ["AVHRR"], "R1")
    _, (b,) = cat.record_run("f", [a.id], [{"name": "b", "uri": "u", "types": ["AVHRR"]}],
                             "ocean1", "Scripps")
    before = cat.store.snapshot()
    with pytest.raises(CycleRejected):
        cat.record_run("f", [b.id], [{"id": a.id, "name": "a", "uri": "u", "types": ["AVHRR"]}],
                       "ocean1", "Scripps")
    assert cat.store.snapshot() == before


def test_register_record_dispatch(cat):
    t = cat.register_record("type", {"id": "a/type0100", "name": "TIFF", "kind": "storage"})
    assert t.id == "a/type0100"
    with pytest.raises(Duplicate):
        cat.register_record("type", {"id": "a/type0100", "name": "TIFF2", "kind": "storage"})
    with pytest.raises(ValidationFailed):
        cat.register_record("run", {"function": "x"})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=30),
       st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=20))
def test_dags_stay_acyclic(type_edges, coll_edges):
    c = Catalog(Store("a"))
    for i in range(8):
        c.register_type(f"T{i}", "semantic")
    for i in range(6):
        c.register_descriptor("collection", {"name": f"C{i}"})
    for child, parent in type_edges:
        try:
            c.register_type(f"T{child}", "semantic", [f"T{parent}"])
        except (CycleRejected, DuplicateType, ValidationFailed):
            pass
    for outer, inner in coll_edges:
        try:
            c.add_to_collection(f"C{outer}", subcollections=[f"C{inner}"])
        except (CycleRejected, ValidationFailed):
            pass
    for kind, field in (("type", "parents"), ("collection", "subcollections")):
        graph = {r.id: set(getattr(r, field)) for r in c.store.records(kind)}
        # full-graph scan: repeatedly strip sinks; anything left lies on a cycle
        while True:
            sinks = {n for n, out in graph.items() if not out & graph.keys()}
            if not sinks:
                break
            graph = {n: out - sinks for n, out in graph.items() if n not in sinks}
        assert graph == {}
