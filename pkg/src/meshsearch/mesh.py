"""Triangle mesh parsing, validation, canonicalization and fingerprinting.

Everything downstream (word extraction, indexing, dedup) works on the
canonical representation produced here: an indexed triangle soup with
64-bit float vertices and orientation-bearing index triples.  All
functions are pure; meshes are treated as immutable after construction.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

BOUNDARY = -1  # neighbor sentinel: boundary or non-manifold edge

# STL binary layout constants
_STL_HEADER = 80
_STL_RECORD = 50  # 12 x f32 + u16 attribute


class MeshParseError(ValueError):
    """Raised for malformed STL/OBJ input; carries a byte or line position."""

    def __init__(self, message: str, *, position: str | None = None):
        super().__init__(message if position is None else f"{message} ({position})")
        self.position = position


@dataclass
class TriangleMesh:
    """Indexed triangle soup.

    vertices: (n, 3) float64 array, model units.
    triangles: (m, 3) int64 array of vertex indices; the vertex order of a
        triple carries its orientation.
    unit_hint: optional unit label from source metadata ("mm", ...); never
        interpreted, only carried through.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    unit_hint: str | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    def validate(self) -> None:
        """Raise MeshParseError on out-of-range indices or non-finite coords."""
        if self.triangles.size and self.triangles.max(initial=-1) >= len(self.vertices):
            raise MeshParseError("triangle index out of range")
        if self.triangles.size and self.triangles.min(initial=0) < 0:
            raise MeshParseError("negative triangle index")
        if not np.isfinite(self.vertices).all():
            bad = int(np.argwhere(~np.isfinite(self.vertices))[0][0])
            raise MeshParseError("non-finite vertex coordinate", position=f"vertex {bad}")

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.triangles.shape == other.triangles.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and self.unit_hint == other.unit_hint
        )


@dataclass
class MeshAdjacency:
    """Edge incidence of a welded mesh.

    edges maps an unordered vertex pair (min, max) to the ids of incident
    triangles.  neighbors[t][k] is the triangle across edge k of t, where
    edge k of triangle (a, b, c) is (a,b), (b,c), (c,a) for k = 0, 1, 2.
    An edge with anything other than exactly two incident triangles
    (boundary or non-manifold) yields the BOUNDARY sentinel; the relation
    is symmetric by construction.
    """

    edges: dict[tuple[int, int], list[int]]
    neighbors: np.ndarray  # (m, 3) int64

    def neighbor_across(self, tri: int, edge: int) -> int:
        return int(self.neighbors[tri, edge])


@dataclass
class MeshStats:
    triangle_count: int
    vertex_count: int
    surface_area: float
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    watertight: bool
    consistent_normals: bool
    degenerate_facets: list[int]
    volume: float | None  # signed; None unless watertight and consistent

    def to_dict(self) -> dict:
        return {
            "triangle_count": self.triangle_count,
            "vertex_count": self.vertex_count,
            "surface_area": self.surface_area,
            "bbox_min": [float(x) for x in self.bbox_min],
            "bbox_max": [float(x) for x in self.bbox_max],
            "watertight": self.watertight,
            "consistent_normals": self.consistent_normals,
            "degenerate_facets": [int(t) for t in self.degenerate_facets],
            "volume": self.volume,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeshStats":
        return cls(
            triangle_count=d["triangle_count"],
            vertex_count=d["vertex_count"],
            surface_area=d["surface_area"],
            bbox_min=np.asarray(d["bbox_min"], dtype=np.float64),
            bbox_max=np.asarray(d["bbox_max"], dtype=np.float64),
            watertight=d["watertight"],
            consistent_normals=d["consistent_normals"],
            degenerate_facets=list(d["degenerate_facets"]),
            volume=d["volume"],
        )


@dataclass(frozen=True)
class ContentHash:
    """SHA-256 over the canonical serialization (see canonical_hash)."""

    digest: bytes
    algorithm: str = "sha256-canonical-v1"

    @property
    def hex(self) -> str:
        return self.digest.hex()


@dataclass
class WeldReport:
    """Outcome of weld_vertices: what was merged and what was dropped."""

    merged_vertices: int
    dropped_triangles: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Parsing


def parse_stl(data: bytes) -> TriangleMesh:
    """Parse binary or ASCII STL bytes into an unwelded triangle soup.

    ASCII is assumed when the file starts with "solid" and parses as ASCII
    STL; otherwise the binary layout is tried.  Stored facet normals are
    discarded: orientation comes from vertex winding.  Vertices are emitted
    unwelded, three per triangle.
    """
    if not isinstance(data, (bytes, bytearray)):
        raise MeshParseError("STL input must be bytes")
    data = bytes(data)
    ascii_error: MeshParseError | None = None
    if data[:5].lower() == b"solid":
        try:
            return _parse_stl_ascii(data)
        except MeshParseError as exc:
            ascii_error = exc
    try:
        return _parse_stl_binary(data)
    except MeshParseError:
        if ascii_error is not None:
            raise ascii_error
        raise


def _parse_stl_binary(data: bytes) -> TriangleMesh:
    if len(data) < _STL_HEADER + 4:
        raise MeshParseError("binary STL shorter than header", position="byte 0")
    (count,) = struct.unpack_from("<I", data, _STL_HEADER)
    expected = _STL_HEADER + 4 + count * _STL_RECORD
    if len(data) != expected:
        have = max(0, len(data) - _STL_HEADER - 4) // _STL_RECORD
        raise MeshParseError(
            f"binary STL truncated at record {have} (declared {count})",
            position=f"byte {len(data)}",
        )
    if count == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    records = np.frombuffer(data, dtype=np.uint8, count=count * _STL_RECORD, offset=_STL_HEADER + 4)
    records = records.reshape(count, _STL_RECORD)
    floats = records[:, :48].copy().view("<f4").reshape(count, 12)
    verts = floats[:, 3:12].astype(np.float64).reshape(count * 3, 3)
    if not np.isfinite(verts).all():
        bad = int(np.argwhere(~np.isfinite(verts.reshape(count, 9)))[0][0])
        raise MeshParseError(
            "non-finite coordinate in binary STL",
            position=f"byte {_STL_HEADER + 4 + bad * _STL_RECORD}",
        )
    tris = np.arange(count * 3, dtype=np.int64).reshape(count, 3)
    return TriangleMesh(verts, tris)


def _parse_stl_ascii(data: bytes) -> TriangleMesh:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MeshParseError("ASCII STL is not valid UTF-8", position=f"byte {exc.start}")
    verts: list[tuple[float, float, float]] = []
    in_solid = False
    facet_vertices = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        head = tokens[0].lower()
        if head == "solid":
            in_solid = True
        elif head == "endsolid":
            in_solid = False
        elif head == "facet" or head == "endfacet":
            facet_vertices = 0
        elif head in ("outer", "endloop"):
            continue
        elif head == "vertex":
            if len(tokens) != 4:
                raise MeshParseError(
                    "ASCII STL vertex needs 3 coordinates", position=f"line {lineno}"
                )
            try:
                xyz = (float(tokens[1]), float(tokens[2]), float(tokens[3]))
            except ValueError:
                raise MeshParseError(
                    f"malformed ASCII STL number {tokens[1:4]!r}", position=f"line {lineno}"
                )
            if not all(math.isfinite(c) for c in xyz):
                raise MeshParseError("non-finite ASCII STL coordinate", position=f"line {lineno}")
            verts.append(xyz)
            facet_vertices += 1
            if facet_vertices > 3:
                raise MeshParseError("facet with more than 3 vertices", position=f"line {lineno}")
        else:
            raise MeshParseError(f"unexpected ASCII STL token {tokens[0]!r}", position=f"line {lineno}")
    if in_solid and not verts and "endsolid" not in text.lower():
        raise MeshParseError("ASCII STL missing endsolid")
    if len(verts) % 3 != 0:
        raise MeshParseError("ASCII STL vertex count not a multiple of 3")
    n = len(verts) // 3
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3) if verts else np.zeros((0, 3))
    tris = np.arange(n * 3, dtype=np.int64).reshape(n, 3)
    return TriangleMesh(vertices, tris)


def write_stl(mesh: TriangleMesh, header: bytes = b"") -> bytes:
    """Serialize to binary STL with the exact layout parse_stl reads.

    Facet normal fields are written as zeros (they are discarded on parse),
    the attribute word as 0.  Reparsing the output of a parsed binary STL
    yields an identical TriangleMesh up to the unwelded vertex layout.
    """
    out = bytearray(_STL_HEADER + 4 + _STL_RECORD * len(mesh.triangles))
    out[: len(header[:_STL_HEADER])] = header[:_STL_HEADER]
    struct.pack_into("<I", out, _STL_HEADER, len(mesh.triangles))
    offset = _STL_HEADER + 4
    tri_coords = mesh.vertices[mesh.triangles].astype("<f4")  # (m, 3, 3)
    pack = struct.Struct("<12fH").pack_into
    for coords in tri_coords:
        pack(out, offset, 0.0, 0.0, 0.0, *coords.reshape(9), 0)
        offset += _STL_RECORD
    return bytes(out)


def parse_obj(text: str | bytes) -> TriangleMesh:
    """Parse the v/f subset of Wavefront OBJ.

    Faces with more than 3 indices are fan-triangulated from the first
    vertex; negative indices are resolved against the vertex count at the
    time the face appears.  vt/vn/usemtl and unknown statements are ignored.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MeshParseError("OBJ is not valid UTF-8", position=f"byte {exc.start}")
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise MeshParseError("v statement needs 3 coordinates", position=f"line {lineno}")
            try:
                xyz = (float(tokens[1]), float(tokens[2]), float(tokens[3]))
            except ValueError:
                raise MeshParseError(f"malformed coordinate in {line!r}", position=f"line {lineno}")
            if not all(math.isfinite(c) for c in xyz):
                raise MeshParseError("non-finite OBJ coordinate", position=f"line {lineno}")
            verts.append(xyz)
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise MeshParseError("f statement needs at least 3 indices", position=f"line {lineno}")
            idx = []
            for tok in tokens[1:]:
                first = tok.split("/", 1)[0]
                try:
                    i = int(first)
                except ValueError:
                    raise MeshParseError(f"malformed face index {tok!r}", position=f"line {lineno}")
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                if i < 0 or i >= len(verts):
                    raise MeshParseError(f"face index {tok} out of range", position=f"line {lineno}")
                idx.append(i)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    vertices = np.asarray(verts, dtype=np.float64) if verts else np.zeros((0, 3))
    triangles = np.asarray(tris, dtype=np.int64) if tris else np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(vertices, triangles)


# ---------------------------------------------------------------------------
# Welding and adjacency


def weld_vertices(
    mesh: TriangleMesh, epsilon: float = 1e-9
) -> tuple[TriangleMesh, MeshAdjacency, WeldReport]:
    """Merge nearby duplicate vertices and build edge adjacency.

    epsilon is relative to the bbox diagonal.  Merging is grid-snap: vertices
    falling in the same lattice cell of size epsilon*diag merge to the first
    occupant (deterministic, order-stable).  epsilon=0 merges only bitwise
    identical points.  Triangles left with fewer than 3 distinct vertices
    are dropped and reported; unreferenced vertices are dropped.  Welding a
    welded mesh with the same epsilon is the identity.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    mesh.validate()
    cell = epsilon * mesh.bbox_diagonal()
    verts = mesh.vertices
    if cell > 0:
        keys = np.floor(verts / cell)
        keys = [tuple(k) for k in keys]
    else:
        keys = [v.tobytes() for v in verts]

    remap = np.empty(len(verts), dtype=np.int64)
    first: dict = {}
    new_ids: list[int] = []
    for i, key in enumerate(keys):
        j = first.get(key)
        if j is None:
            first[key] = i
            remap[i] = i
            new_ids.append(i)
        else:
            remap[i] = j

    tris = remap[mesh.triangles]
    ok = (
        (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        if len(tris)
        else np.zeros(0, dtype=bool)
    )
    dropped = [int(t) for t in np.nonzero(~ok)[0]] if len(tris) else []
    tris = tris[ok]

    referenced = np.zeros(len(verts), dtype=bool)
    if len(tris):
        referenced[tris.reshape(-1)] = True
    keep = [i for i in new_ids if referenced[i]]
    compact = np.full(len(verts), -1, dtype=np.int64)
    compact[keep] = np.arange(len(keep))
    welded = TriangleMesh(verts[keep], compact[tris] if len(tris) else tris, mesh.unit_hint)
    adjacency = build_adjacency(welded)
    report = WeldReport(merged_vertices=len(verts) - len(first), dropped_triangles=dropped)
    return welded, adjacency, report


def build_adjacency(mesh: TriangleMesh) -> MeshAdjacency:
    edges: dict[tuple[int, int], list[int]] = {}
    tris = mesh.triangles
    for t in range(len(tris)):
        a, b, c = (int(v) for v in tris[t])
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append(t)
    neighbors = np.full((len(tris), 3), BOUNDARY, dtype=np.int64)
    for t in range(len(tris)):
        a, b, c = (int(v) for v in tris[t])
        for k, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            key = (u, v) if u < v else (v, u)
            incident = edges[key]
            if len(incident) == 2:
                neighbors[t, k] = incident[0] if incident[1] == t else incident[1]
    return MeshAdjacency(edges=edges, neighbors=neighbors)


# ---------------------------------------------------------------------------
# Stats, degeneracy, hashing


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    coords = mesh.vertices[mesh.triangles]
    cross = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def triangle_quality(mesh: TriangleMesh) -> np.ndarray:
    """Normalized shape quality q = 4*sqrt(3)*A / sum(edge lengths squared).

    q is 1 for an equilateral triangle and approaches 0 for slivers and
    needles; dimensionless and scale-free.
    """
    coords = mesh.vertices[mesh.triangles]
    e0 = coords[:, 1] - coords[:, 0]
    e1 = coords[:, 2] - coords[:, 1]
    e2 = coords[:, 0] - coords[:, 2]
    sq = (e0 * e0).sum(axis=1) + (e1 * e1).sum(axis=1) + (e2 * e2).sum(axis=1)
    areas = triangle_areas(mesh)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(sq > 0, 4.0 * math.sqrt(3.0) * areas / sq, 0.0)
    return q


def compute_stats(
    mesh: TriangleMesh,
    adjacency: MeshAdjacency,
    degenerate: list[int] | None = None,
) -> MeshStats:
    """Validation stats of a welded mesh.

    watertight: every edge has exactly 2 incident triangles.
    consistent_normals: every 2-incident edge is traversed in opposite
    directions by its two triangles.  Signed volume (tetrahedron sum) is
    reported only when both hold.  degenerate facets default to
    detect_degenerate at its default tolerances.
    """
    if degenerate is None:
        degenerate = [t for t, _ in detect_degenerate(mesh)]
    tris = mesh.triangles
    watertight = len(tris) > 0 and all(len(ts) == 2 for ts in adjacency.edges.values())

    directed: dict[tuple[int, int], int] = {}
    for t in range(len(tris)):
        a, b, c = (int(v) for v in tris[t])
        for u, v in ((a, b), (b, c), (c, a)):
            directed[(u, v)] = directed.get((u, v), 0) + 1
    consistent = True
    for (u, v), ts in adjacency.edges.items():
        if len(ts) != 2:
            continue
        # opposite traversal <=> each direction appears exactly once
        if directed.get((u, v), 0) != 1 or directed.get((v, u), 0) != 1:
            consistent = False
            break

    area = float(triangle_areas(mesh).sum())
    volume = None
    if watertight and consistent:
        coords = mesh.vertices[tris]
        volume = float(
            np.einsum("ij,ij->i", coords[:, 0], np.cross(coords[:, 1], coords[:, 2])).sum() / 6.0
        )
    lo, hi = mesh.bbox()
    return MeshStats(
        triangle_count=len(tris),
        vertex_count=len(mesh.vertices),
        surface_area=area,
        bbox_min=lo,
        bbox_max=hi,
        watertight=watertight,
        consistent_normals=consistent,
        degenerate_facets=list(degenerate),
        volume=volume,
    )


def detect_degenerate(
    mesh: TriangleMesh, area_tol: float = 1e-12, quality_tol: float = 1e-4
) -> list[tuple[int, str]]:
    """Flag degenerate facets: (triangle id, reason) pairs.

    Reasons, checked in order: "repeated-vertex" (duplicate indices),
    "zero-area" (area below area_tol * bbox_diag^2), "sliver" (quality
    below quality_tol).  Flagged facets are excluded from word extraction
    but never modified or removed from stored geometry.
    """
    tris = mesh.triangles
    if len(tris) == 0:
        return []
    areas = triangle_areas(mesh)
    quality = triangle_quality(mesh)
    diag = mesh.bbox_diagonal()
    area_floor = area_tol * diag * diag
    flagged: list[tuple[int, str]] = []
    for t in range(len(tris)):
        a, b, c = (int(v) for v in tris[t])
        if a == b or b == c or a == c:
            flagged.append((t, "repeated-vertex"))
        elif areas[t] <= area_floor:
            flagged.append((t, "zero-area"))
        elif quality[t] < quality_tol:
            flagged.append((t, "sliver"))
    return flagged


def canonical_hash(mesh: TriangleMesh) -> ContentHash:
    """Content hash invariant to triangle order and vertex index permutation.

    Each triangle's vertex triple is cyclically rotated so its smallest
    vertex (by coordinate tuple) comes first -- a cyclic rotation, so
    orientation is preserved -- then triangles are sorted by their 9
    coordinates and serialized as raw little-endian float64.  Geometric
    near-duplicates (translations, rotations) hash differently by design;
    those are matched by bag similarity instead.
    """
    coords = mesh.vertices[mesh.triangles]  # (m, 3, 3)
    rows = []
    for tri in coords:
        pts = [tuple(p) for p in tri]
        start = min(range(3), key=lambda i: pts[i])
        rotated = tri[[start, (start + 1) % 3, (start + 2) % 3]]
        flat = rotated.reshape(9)
        raw = flat.astype("<f8").tobytes()
        rows.append((tuple(flat), raw))
    rows.sort()
    h = hashlib.sha256()
    h.update(b"MESHCANON1")
    h.update(struct.pack("<Q", len(rows)))
    for _, raw in rows:
        h.update(raw)
    return ContentHash(h.digest())


def disjoint_union(a: TriangleMesh, b: TriangleMesh) -> TriangleMesh:
    """Concatenate two meshes without connecting them."""
    verts = np.vstack([a.vertices, b.vertices]) if len(b.vertices) else a.vertices.copy()
    tris = (
        np.vstack([a.triangles, b.triangles + len(a.vertices)])
        if len(b.triangles)
        else a.triangles.copy()
    )
    return TriangleMesh(verts, tris, a.unit_hint)


def translate(mesh: TriangleMesh, offset) -> TriangleMesh:
    return TriangleMesh(mesh.vertices + np.asarray(offset, dtype=np.float64), mesh.triangles.copy(), mesh.unit_hint)


def transform(mesh: TriangleMesh, rotation, offset=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Apply a rigid motion: vertices @ rotation^T + offset."""
    rot = np.asarray(rotation, dtype=np.float64)
    return TriangleMesh(mesh.vertices @ rot.T + np.asarray(offset, dtype=np.float64), mesh.triangles.copy(), mesh.unit_hint)
