import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshsearch.mesh import (
    BOUNDARY,
    MeshParseError,
    TriangleMesh,
    canonical_hash,
    compute_stats,
    detect_degenerate,
    disjoint_union,
    parse_obj,
    parse_stl,
    weld_vertices,
    write_stl,
)
from conftest import TETRA_FACES, TETRA_VERTS, make_binary_stl


# ---------------------------------------------------------------------------
# STL parsing


def test_parse_binary_single_triangle():
    data = make_binary_stl([[(0, 0, 0), (1, 0, 0), (0, 1, 0)]])
    mesh = parse_stl(data)
    assert len(mesh.vertices) == 3
    assert len(mesh.triangles) == 1
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])
    np.testing.assert_allclose(mesh.vertices, [(0, 0, 0), (1, 0, 0), (0, 1, 0)])


def test_parse_ascii_empty_solid():
    mesh = parse_stl(b"solid a\nendsolid a")
    assert len(mesh.triangles) == 0


def test_parse_ascii_triangle():
    text = (
        b"solid t\n"
        b" facet normal 0 0 1\n  outer loop\n"
        b"   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n"
        b"  endloop\n endfacet\nendsolid t\n"
    )
    mesh = parse_stl(text)
    assert len(mesh.triangles) == 1
    assert len(mesh.vertices) == 3


def test_parse_binary_truncated():
    data = make_binary_stl([[(0, 0, 0), (1, 0, 0), (0, 1, 0)]] * 5)
    # rewrite the count to 10 without adding records
    data = data[:80] + struct.pack("<I", 10) + data[84:]
    with pytest.raises(MeshParseError, match="truncated at record 5"):
        parse_stl(data)


def test_parse_ascii_malformed_token_reports_line():
    text = b"solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 zap\n"
    with pytest.raises(MeshParseError, match="line 4"):
        parse_stl(text)


def test_parse_binary_rejects_nan():
    data = make_binary_stl([[(0, 0, 0), (float("nan"), 0, 0), (0, 1, 0)]])
    with pytest.raises(MeshParseError, match="non-finite"):
        parse_stl(data)


def test_binary_headed_with_solid_falls_back():
    # binary file whose header happens to start with "solid"
    data = make_binary_stl([[(0, 0, 0), (1, 0, 0), (0, 1, 0)]], header=b"solid binary export")
    mesh = parse_stl(data)
    assert len(mesh.triangles) == 1


def test_stl_round_trip_identity():
    tris = [
        [(0, 0, 0), (1, 0, 0), (0, 1, 0)],
        [(1, 0, 0), (1, 1, 0), (0, 1, 0)],
        [(0.5, -2.25, 3.125), (4.75, 0.0625, -1.5), (0, 1, 9)],
    ]
    first = parse_stl(make_binary_stl(tris))
    again = parse_stl(write_stl(first))
    assert first == again


# ---------------------------------------------------------------------------
# OBJ parsing


def test_parse_obj_triangle():
    mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    assert len(mesh.triangles) == 1


def test_parse_obj_quad_fans():
    mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4")
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3]])


def test_parse_obj_negative_indices():
    mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1")
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])


def test_parse_obj_index_out_of_range():
    with pytest.raises(MeshParseError, match="line 4"):
        parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9")


def test_parse_obj_short_face():
    with pytest.raises(MeshParseError, match="at least 3"):
        parse_obj("v 0 0 0\nv 1 0 0\nf 1 2")


def test_parse_obj_ignores_other_statements():
    mesh = parse_obj("vt 0 0\nvn 0 0 1\nusemtl steel\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/1 3/3/1")
    assert len(mesh.triangles) == 1


# ---------------------------------------------------------------------------
# Welding


def test_weld_merges_shared_edge():
    tris = [
        [(0, 0, 0), (1, 0, 0), (0, 1, 0)],
        [(1, 0, 0), (1, 1, 0), (0, 1, 0)],
    ]
    mesh = parse_stl(make_binary_stl(tris))
    assert len(mesh.vertices) == 6
    welded, adjacency, report = weld_vertices(mesh, 1e-9)
    assert len(welded.vertices) == 4
    assert report.merged_vertices == 2
    # the two triangles are linked across the shared (1,0,0)-(0,1,0) edge
    assert adjacency.neighbor_across(0, 1) == 1 or adjacency.neighbor_across(0, 2) == 1
    neighbors0 = set(adjacency.neighbors[0])
    neighbors1 = set(adjacency.neighbors[1])
    assert 1 in neighbors0 and 0 in neighbors1


def test_weld_epsilon_zero_merges_bitwise_equal():
    tris = [
        [(0, 0, 0), (1, 0, 0), (0, 1, 0)],
        [(1, 0, 0), (1, 1, 0), (0, 1, 0)],
    ]
    mesh = parse_stl(make_binary_stl(tris))
    welded, _, _ = weld_vertices(mesh, 0.0)
    assert len(welded.vertices) == 4


def test_weld_drops_collapsing_sliver():
    # two vertices 0.5 * epsilon * diag apart collapse, killing the triangle
    eps = 1e-3
    diag_setter = [(0.0, 0.0, 0.0), (10.0, 10.0, 10.0)]  # fixes the bbox diagonal
    diag = math.sqrt(300.0)
    d = 0.5 * eps * diag
    verts = np.array(
        [(0, 0, 0), (d, 0, 0), (5, 5, 5), diag_setter[1], (0, 9, 0), (9, 0, 0)],
        dtype=np.float64,
    )
    tris = np.array([(0, 1, 2), (3, 4, 5)])
    welded, _, report = weld_vertices(TriangleMesh(verts, tris), eps)
    assert report.dropped_triangles == [0]
    assert len(welded.triangles) == 1


def test_weld_idempotent():
    tris = [
        [(0, 0, 0), (1, 0, 0), (0, 1, 0)],
        [(1, 0, 0), (1, 1, 0), (0, 1, 0)],
        [(1, 1, 0), (0, 1, 0), (1, 1, 1)],
    ]
    mesh = parse_stl(make_binary_stl(tris))
    once, _, _ = weld_vertices(mesh, 1e-9)
    twice, _, report = weld_vertices(once, 1e-9)
    assert once == twice
    assert report.merged_vertices == 0 and report.dropped_triangles == []


def test_adjacency_symmetric(tetra):
    welded, adjacency, _ = weld_vertices(tetra, 0.0)
    for t in range(len(welded.triangles)):
        for k in range(3):
            nb = adjacency.neighbor_across(t, k)
            if nb == BOUNDARY:
                continue
            assert t in set(adjacency.neighbors[nb])


# ---------------------------------------------------------------------------
# Stats


def test_tetra_stats(tetra):
    welded, adjacency, _ = weld_vertices(tetra, 0.0)
    stats = compute_stats(welded, adjacency)
    assert stats.watertight and stats.consistent_normals
    # three right triangles of area 1/2 plus an equilateral of side sqrt(2)
    expected_area = 1.5 + math.sqrt(3) / 2
    assert stats.surface_area == pytest.approx(expected_area, rel=1e-12)
    assert stats.volume == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_single_triangle_not_watertight():
    mesh = TriangleMesh(np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0)], dtype=float), np.array([(0, 1, 2)]))
    welded, adjacency, _ = weld_vertices(mesh, 0.0)
    stats = compute_stats(welded, adjacency)
    assert not stats.watertight
    assert stats.volume is None


def test_flipped_face_breaks_consistency(tetra):
    faces = tetra.triangles.copy()
    faces[3] = faces[3][[0, 2, 1]]
    flipped = TriangleMesh(tetra.vertices.copy(), faces)
    welded, adjacency, _ = weld_vertices(flipped, 0.0)
    stats = compute_stats(welded, adjacency)
    assert stats.watertight
    assert not stats.consistent_normals
    assert stats.volume is None


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_signed_volume_invariant_under_reordering(rnd):
    order = list(range(len(TETRA_FACES)))
    rnd.shuffle(order)
    mesh = TriangleMesh(TETRA_VERTS.copy(), TETRA_FACES[order])
    welded, adjacency, _ = weld_vertices(mesh, 0.0)
    stats = compute_stats(welded, adjacency)
    assert stats.watertight and stats.consistent_normals
    assert stats.volume == pytest.approx(1.0 / 6.0, rel=1e-12)


# ---------------------------------------------------------------------------
# Degeneracy


def test_repeated_vertex_flagged():
    mesh = TriangleMesh(np.array([(0, 0, 0), (1, 0, 0)], dtype=float), np.array([(0, 0, 1)]))
    assert detect_degenerate(mesh) == [(0, "repeated-vertex")]


def test_equilateral_not_flagged():
    mesh = TriangleMesh(
        np.array([(0, 0, 0), (1, 0, 0), (0.5, math.sqrt(3) / 2, 0)]), np.array([(0, 1, 2)])
    )
    assert detect_degenerate(mesh) == []


def test_needle_flagged_as_sliver():
    verts = np.array([(0, 0, 0), (1, 0, 0), (0.5, 1e-9, 0)])
    mesh = TriangleMesh(verts, np.array([(0, 1, 2)]))
    flags = detect_degenerate(mesh)
    assert flags == [(0, "sliver")]
    # hand computation: q = 4*sqrt(3)*A / (sum of squared edge lengths)
    area = 0.5 * 1.0 * 1e-9
    edges_sq = 1.0 + 2 * (0.25 + 1e-18)
    q = 4 * math.sqrt(3) * area / edges_sq
    assert q == pytest.approx(2.3094e-9, rel=1e-3)
    assert q < 1e-4


def test_zero_area_collinear_flagged():
    mesh = TriangleMesh(
        np.array([(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 5, 0), (1, 5, 0), (0, 5, 5)]),
        np.array([(0, 1, 2), (3, 4, 5)]),
    )
    flags = dict(detect_degenerate(mesh))
    assert flags[0] == "zero-area"
    assert 1 not in flags


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_injected_zero_area_always_flagged(seed, n_bad):
    rng = np.random.default_rng(seed)
    verts = list(rng.normal(size=(9, 3)))
    tris = [(0, 1, 2), (3, 4, 5), (6, 7, 8)]
    bad_ids = []
    for _ in range(n_bad):
        base = rng.normal(size=3)
        direction = rng.normal(size=3)
        k = len(verts)
        # three collinear points: exactly zero area
        verts.extend([base, base + direction, base + 2 * direction])
        bad_ids.append(len(tris))
        tris.append((k, k + 1, k + 2))
    mesh = TriangleMesh(np.array(verts), np.array(tris))
    flagged = {t for t, _ in detect_degenerate(mesh)}
    assert set(bad_ids) <= flagged
    healthy = {0, 1, 2} - flagged  # generic random triangles are almost surely healthy
    assert len(healthy) >= 2


# ---------------------------------------------------------------------------
# Canonical hash


def _random_mesh(rng: np.random.Generator, n_tris: int = 12) -> TriangleMesh:
    verts = rng.normal(size=(n_tris * 3, 3))
    tris = np.arange(n_tris * 3).reshape(-1, 3)
    return TriangleMesh(verts, tris)


def test_hash_invariant_to_triangle_order(tetra):
    digest = canonical_hash(tetra).hex
    shuffled = TriangleMesh(tetra.vertices.copy(), tetra.triangles[[2, 0, 3, 1]])
    assert canonical_hash(shuffled).hex == digest


def test_hash_invariant_to_vertex_permutation(tetra):
    perm = np.array([2, 0, 3, 1])
    inverse = np.empty(4, dtype=np.int64)
    inverse[perm] = np.arange(4)
    permuted = TriangleMesh(tetra.vertices[perm], inverse[tetra.triangles])
    assert canonical_hash(permuted).hex == canonical_hash(tetra).hex


def test_hash_changes_on_translation(tetra):
    moved = TriangleMesh(tetra.vertices + (1.0, 0.0, 0.0), tetra.triangles.copy())
    assert canonical_hash(moved).hex != canonical_hash(tetra).hex


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hash_invariance_randomized(seed):
    rng = np.random.default_rng(seed)
    mesh = _random_mesh(rng)
    welded, _, _ = weld_vertices(mesh, 0.0)
    digest = canonical_hash(welded).hex
    order = rng.permutation(len(welded.triangles))
    vperm = rng.permutation(len(welded.vertices))
    inverse = np.empty_like(vperm)
    inverse[vperm] = np.arange(len(vperm))
    permuted = TriangleMesh(welded.vertices[vperm], inverse[welded.triangles[order]])
    assert canonical_hash(permuted).hex == digest


def test_disjoint_union_keeps_both_parts(tetra, unit_cube):
    combined = disjoint_union(tetra, unit_cube)
    assert len(combined.triangles) == len(tetra.triangles) + len(unit_cube.triangles)
    assert len(combined.vertices) == len(tetra.vertices) + len(unit_cube.vertices)
    combined.validate()
