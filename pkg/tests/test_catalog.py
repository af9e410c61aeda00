import numpy as np
import pytest

from meshsearch.analysis import box_mesh, deltahedron_mesh, snap_to_lattice
from meshsearch.catalog import (
    Catalog,
    IngestMeta,
    NoChangeError,
    StorageError,
    TakenDownError,
    UnknownRecordError,
)
from meshsearch.mesh import MeshParseError, transform, write_stl
from meshsearch.search import query_similar, text_search
from meshsearch.words import WordConfig

from conftest import make_binary_stl


def stl_of(mesh) -> bytes:
    return write_stl(mesh)


def cube_bytes(size=1.0) -> bytes:
    return stl_of(box_mesh(size, size, size))


def make_catalog(clock=None) -> Catalog:
    kwargs = {"clock": clock} if clock else {}
    return Catalog(WordConfig(), **kwargs)


EXTERNAL = IngestMeta(domain="thingiverse.com", url="https://thingiverse.com/thing/1", name="cube")
INTERNAL = IngestMeta(domain="local", name="my cube", tags=("test",))


# ---------------------------------------------------------------------------
# Ingest and dedup


def test_fresh_ingest_creates_active_record(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(), meta=INTERNAL)
    assert record.state == "active"
    assert record.provenance == "internal"
    assert record.original_format == "stl-binary"
    assert catalog.index.n_models == 1
    assert record.bag_id == record.model_id
    assert catalog.chains[record.model_id].head().number == 1
    assert record.ingest_history[0]["action"] == "ingest"
    assert catalog.audit() == []


def test_obj_ingest(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n", format_hint="obj", meta=INTERNAL)
    assert record.original_format == "obj"


def test_byte_identical_second_source_merges(fixed_clock):
    catalog = make_catalog(fixed_clock)
    first = catalog.ingest(cube_bytes(), meta=EXTERNAL)
    second = catalog.ingest(cube_bytes(), meta=IngestMeta(domain="grabcad.com", url="https://grabcad.com/m/9"))
    assert second.model_id == first.model_id
    assert len(catalog.records) == 1
    assert {s.domain for s in first.sources} == {"thingiverse.com", "grabcad.com"}
    assert catalog.index.n_models == 1


def test_same_bytes_same_source_is_noop(fixed_clock):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=EXTERNAL)
    before = catalog.snapshot_state()
    catalog.ingest(cube_bytes(), meta=EXTERNAL)
    assert catalog.snapshot_state() == before


def test_reordered_triangles_merge_by_canonical_hash(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(), meta=INTERNAL)
    data = cube_bytes()
    header, records = data[:84], data[84:]
    chunks = [records[i : i + 50] for i in range(0, len(records), 50)]
    rng = np.random.default_rng(3)
    shuffled = header + b"".join(chunks[i] for i in rng.permutation(len(chunks)))
    merged = catalog.ingest(shuffled, meta=IngestMeta(domain="mirror.example"))
    assert merged.model_id == record.model_id
    assert len(catalog.records) == 1
    # same bytes hash as reordered: merged via exact canonical hash
    assert merged.ingest_history[-1]["action"] == "merged-duplicate-exact"


def test_rotated_copy_caught_as_geometric_duplicate(fixed_clock):
    catalog = make_catalog(fixed_clock)
    mesh = snap_to_lattice(deltahedron_mesh(14, 1.0, np.random.default_rng(8)))
    record = catalog.ingest(stl_of(mesh), meta=INTERNAL)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rotated = transform(mesh, rot, (2.0, 0.5, -1.0))
    _, digest, _, bag = catalog._prepare(stl_of(rotated), None)
    dups = catalog.find_duplicates(digest, bag)
    assert dups == [(record.model_id, "geometric")]
    # and ingest merges it
    merged = catalog.ingest(stl_of(rotated), meta=IngestMeta(domain="mirror.example"))
    assert merged.model_id == record.model_id
    assert merged.ingest_history[-1]["action"] == "merged-duplicate-geometric"


def test_unrelated_mesh_no_duplicates(fixed_clock):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=INTERNAL)
    mesh = deltahedron_mesh(16, 2.0, np.random.default_rng(5))
    _, digest, _, bag = catalog._prepare(stl_of(mesh), None)
    assert catalog.find_duplicates(digest, bag) == []


def test_parse_failure_leaves_state_unchanged(fixed_clock):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=INTERNAL)
    before = catalog.snapshot_state()
    with pytest.raises(MeshParseError):
        catalog.ingest(b"\x00\x01garbage", format_hint="stl", meta=INTERNAL)
    assert catalog.snapshot_state() == before


def test_empty_bag_failure_leaves_state_unchanged(fixed_clock):
    catalog = make_catalog(fixed_clock)
    before = catalog.snapshot_state()
    degenerate_only = make_binary_stl([[(0, 0, 0), (1, 0, 0), (2, 0, 0)]])
    with pytest.raises(Exception):
        catalog.ingest(degenerate_only, meta=INTERNAL)
    assert catalog.snapshot_state() == before


def test_storage_failure_rolls_back_index(fixed_clock, monkeypatch):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=INTERNAL)
    before = catalog.snapshot_state()

    def boom(record, chain, data):
        raise StorageError("disk full")

    monkeypatch.setattr(catalog, "_commit_record", boom)
    with pytest.raises(StorageError):
        catalog.ingest(stl_of(box_mesh(2.0, 1.0, 1.0)), meta=INTERNAL)
    assert catalog.snapshot_state() == before
    assert catalog.audit() == []


# ---------------------------------------------------------------------------
# Versions


def test_record_version_swaps_bag(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(1.0), meta=INTERNAL)
    fixed_clock.advance(60)
    chain = catalog.record_version(record.model_id, cube_bytes(2.0), note="bigger")
    assert [v.number for v in chain.versions] == [1, 2]
    assert chain.versions[0].content_hash != chain.versions[1].content_hash
    # search now reflects the new geometry
    bag = catalog.build_query_bag(cube_bytes(2.0))
    results = query_similar(catalog.index, catalog, bag, k=1)
    assert results[0].model_id == record.model_id
    assert results[0].score == pytest.approx(1.0, abs=1e-12)
    # both blobs retained for audit
    assert (record.model_id, 1) in catalog.blobs
    assert (record.model_id, 2) in catalog.blobs


def test_record_version_identical_bytes_rejected(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(), meta=INTERNAL)
    with pytest.raises(NoChangeError):
        catalog.record_version(record.model_id, cube_bytes())


def test_three_versions_numbered_sequentially(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(1.0), meta=INTERNAL)
    catalog.record_version(record.model_id, cube_bytes(2.0))
    chain = catalog.record_version(record.model_id, cube_bytes(3.0))
    assert [v.number for v in chain.versions] == [1, 2, 3]


# ---------------------------------------------------------------------------
# Takedown


def test_takedown_removes_from_all_search_modes(fixed_clock):
    catalog = make_catalog(fixed_clock)
    record = catalog.ingest(cube_bytes(), meta=IngestMeta(domain="local", name="widget gear"))
    catalog.take_down(record.model_id)
    assert record.state == "taken_down"
    with pytest.raises(TakenDownError):
        catalog.get_record(record.model_id)
    bag = catalog.build_query_bag(cube_bytes())
    assert query_similar(catalog.index, catalog, bag, k=5) == []
    assert text_search(catalog, "gear", k=5) == []
    assert catalog.audit() == []


def test_takedown_unknown_and_repeat(fixed_clock):
    catalog = make_catalog(fixed_clock)
    with pytest.raises(UnknownRecordError):
        catalog.take_down("nope")
    record = catalog.ingest(cube_bytes(), meta=INTERNAL)
    catalog.take_down(record.model_id)
    with pytest.raises(TakenDownError):
        catalog.take_down(record.model_id)


def test_takedown_deletes_external_bytes_keeps_internal(fixed_clock):
    catalog = make_catalog(fixed_clock)
    ext = catalog.ingest(cube_bytes(1.0), meta=EXTERNAL)
    internal = catalog.ingest(cube_bytes(2.0), meta=INTERNAL)
    catalog.take_down(ext.model_id)
    catalog.take_down(internal.model_id)
    assert not any(k[0] == ext.model_id for k in catalog.blobs)
    assert any(k[0] == internal.model_id for k in catalog.blobs)
    # audit history retained either way
    assert catalog.records[ext.model_id].ingest_history[-1]["action"] == "takedown"


def test_reingest_after_takedown_makes_new_record(fixed_clock):
    catalog = make_catalog(fixed_clock)
    first = catalog.ingest(cube_bytes(), meta=INTERNAL)
    catalog.take_down(first.model_id)
    second = catalog.ingest(cube_bytes(), meta=INTERNAL)
    assert second.model_id != first.model_id
    assert second.state == "active"


# ---------------------------------------------------------------------------
# Freshness


def test_due_for_recrawl_ordering(fixed_clock):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(1.0), meta=IngestMeta(domain="a.example", url="http://a.example/1"))
    catalog.ingest(cube_bytes(2.0), meta=IngestMeta(domain="b.example", url="http://b.example/1"))
    catalog.set_recrawl_interval("a.example", 7 * 86400)
    catalog.set_recrawl_interval("b.example", 7 * 86400)
    now = fixed_clock.now + 10 * 86400
    # a and b equally stale; bump b by reingesting later
    fixed_clock.advance(2 * 86400)
    catalog.ingest(cube_bytes(3.0), meta=IngestMeta(domain="b.example", url="http://b.example/2"))
    due = catalog.due_for_recrawl(now)
    assert due == ["a.example", "b.example"]


def test_not_due_when_fresh(fixed_clock):
    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=IngestMeta(domain="a.example", url="http://a.example/1"))
    assert catalog.due_for_recrawl(fixed_clock.now + 86400) == []


def test_interval_validation(fixed_clock):
    catalog = make_catalog(fixed_clock)
    with pytest.raises(ValueError):
        catalog.set_recrawl_interval("x", 0)


# ---------------------------------------------------------------------------
# Persistence


def test_catalog_save_load_round_trip(tmp_path, fixed_clock):
    catalog = make_catalog(fixed_clock)
    rec1 = catalog.ingest(cube_bytes(1.0), meta=EXTERNAL)
    catalog.ingest(cube_bytes(2.0), meta=INTERNAL)
    catalog.record_version(rec1.model_id, cube_bytes(1.5))
    catalog.take_down(rec1.model_id)
    catalog.save(tmp_path)
    loaded = Catalog.load(tmp_path)
    assert loaded.export_records() == catalog.export_records()
    assert loaded.index == catalog.index
    assert loaded.blobs == catalog.blobs
    assert loaded.audit() == []


def test_catalog_load_rejects_foreign_file(tmp_path):
    (tmp_path / "catalog.jsonl").write_text('{"format": "something-else", "version": 1}\n')
    with pytest.raises(StorageError):
        Catalog.load(tmp_path)


def test_export_is_line_oriented_json(fixed_clock):
    import json

    catalog = make_catalog(fixed_clock)
    catalog.ingest(cube_bytes(), meta=INTERNAL)
    lines = catalog.export_records().strip().splitlines()
    header = json.loads(lines[0])
    assert header["format"] == "meshsearch-catalog"
    kinds = [json.loads(line).get("type") for line in lines[1:]]
    assert "record" in kinds and "chain" in kinds and "freshness" in kinds
