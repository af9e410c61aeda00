"""Corpus diagnostics and synthetic data generation.

Perimeter histograms and gamma MLE fits characterize how local word mass
clumps across a corpus; the generators build the labeled corpora the
retrieval stack is validated against: support lattices (generic shared
geometry), and composite/part/distractor datasets with exact containment
ground truth.

All randomness comes from numpy's seeded PCG64 generator, so every
artifact here is reproducible bit for bit.  Part and translation
coordinates are snapped to a dyadic lattice (multiples of 2^-16 and 2^-12)
so that translating a part changes no vertex-difference bit: the
translated copy's local features, and therefore its words, are exactly
those of the part, which is what makes containment ground truth exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import (
    TriangleMesh,
    detect_degenerate,
    disjoint_union,
    translate,
    weld_vertices,
)
from .mcubes import tangent_torus_mesh

VERTEX_LATTICE = 2.0**-16  # primitive vertex snap
OFFSET_LATTICE = 2.0**-12  # translation snap


# ---------------------------------------------------------------------------
# Histograms


@dataclass(frozen=True)
class BinPolicy:
    kind: str = "fixed"  # fixed | log
    lo: float = 0.0
    hi: float = 10.0
    bins: int = 64

    def edges(self) -> np.ndarray:
        if self.bins < 1:
            raise ValueError("need at least one bin")
        if self.kind == "fixed":
            return np.linspace(self.lo, self.hi, self.bins + 1)
        if self.kind == "log":
            if self.lo <= 0:
                raise ValueError("log bins need lo > 0")
            return np.geomspace(self.lo, self.hi, self.bins + 1)
        raise ValueError(f"unknown bin policy {self.kind!r}")


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    n: int = 0
    underflow: int = 0
    overflow: int = 0

    @classmethod
    def empty(cls, policy: BinPolicy) -> "Histogram":
        edges = policy.edges()
        return cls(edges=edges, counts=np.zeros(len(edges) - 1, dtype=np.int64))

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.n += values.size
        self.underflow += int((values < self.edges[0]).sum())
        self.overflow += int((values > self.edges[-1]).sum())
        inside = values[(values >= self.edges[0]) & (values <= self.edges[-1])]
        hist, _ = np.histogram(inside, bins=self.edges)
        self.counts += hist

    def merge(self, other: "Histogram") -> "Histogram":
        """Monoid combine for parallel corpus scans; edges must match."""
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("cannot merge histograms with different edges")
        return Histogram(
            edges=self.edges.copy(),
            counts=self.counts + other.counts,
            n=self.n + other.n,
            underflow=self.underflow + other.underflow,
            overflow=self.overflow + other.overflow,
        )

    def mode_bin(self) -> tuple[float, float]:
        i = int(np.argmax(self.counts))
        return float(self.edges[i]), float(self.edges[i + 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Histogram):
            return NotImplemented
        return (
            np.array_equal(self.edges, other.edges)
            and np.array_equal(self.counts, other.counts)
            and (self.n, self.underflow, self.overflow) == (other.n, other.underflow, other.overflow)
        )


def mesh_perimeters(mesh: TriangleMesh, area_tol: float = 1e-12, quality_tol: float = 1e-4) -> np.ndarray:
    """Perimeters of the non-degenerate facets of a raw mesh."""
    welded, _, _ = weld_vertices(mesh)
    flagged = {t for t, _ in detect_degenerate(welded, area_tol, quality_tol)}
    coords = welded.vertices[welded.triangles]
    p = (
        np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        + np.linalg.norm(coords[:, 2] - coords[:, 1], axis=1)
        + np.linalg.norm(coords[:, 0] - coords[:, 2], axis=1)
    )
    keep = np.ones(len(p), dtype=bool)
    for t in flagged:
        keep[t] = False
    return p[keep]


def perimeter_histogram(corpus: Iterable, policy: BinPolicy) -> Histogram:
    """Histogram of facet perimeters over meshes or stored feature arrays."""
    hist = Histogram.empty(policy)
    seen = False
    for item in corpus:
        seen = True
        if isinstance(item, TriangleMesh):
            hist.add(mesh_perimeters(item))
        else:
            rows = np.asarray(item, dtype=np.float64)
            hist.add(rows[:, 0] if rows.ndim == 2 else rows)
    if not seen:
        raise ValueError("empty corpus")
    return hist


def histogram_csv(hist: Histogram) -> str:
    lines = ["lo,hi,count"]
    for i, c in enumerate(hist.counts):
        lines.append(f"{hist.edges[i]!r},{hist.edges[i + 1]!r},{int(c)}")
    lines.append(f"underflow,,{hist.underflow}")
    lines.append(f"overflow,,{hist.overflow}")
    return "\n".join(lines) + "\n"


def histogram_svg(hist: Histogram, width: int = 640, height: int = 320, title: str = "") -> str:
    """Minimal static SVG bar chart; diagnostics only, no interactivity."""
    peak = max(int(hist.counts.max(initial=1)), 1)
    n = len(hist.counts)
    pad = 40
    bw = (width - 2 * pad) / max(n, 1)
    bars = []
    for i, c in enumerate(hist.counts):
        h = (height - 2 * pad) * (int(c) / peak)
        x = pad + i * bw
        y = height - pad - h
        bars.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bw * 0.9:.2f}" height="{h:.2f}" fill="#4477aa"/>'
        )
    label = (
        f'<text x="{pad}" y="{pad / 2:.0f}" font-family="monospace" font-size="12">'
        f"{title} n={hist.n} under={hist.underflow} over={hist.overflow}</text>"
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="100%" height="100%" fill="white"/>{label}{"".join(bars)}</svg>\n'
    )


# ---------------------------------------------------------------------------
# Gamma MLE

_ASYMPTOTIC_CUTOFF = 10.0


def digamma(x: float) -> float:
    """psi(x) via the ascending recurrence and the asymptotic series.

    psi(x) = psi(x+1) - 1/x lifts the argument above 10, where the
    Bernoulli-number expansion
    psi(x) ~ ln x - 1/(2x) - 1/(12x^2) + 1/(120x^4) - 1/(252x^6)
           + 1/(240x^8) - 1/(132x^10)
    has truncation error below 1e-13.
    """
    if not x > 0:
        raise ValueError("digamma defined here for x > 0 only")
    acc = 0.0
    while x < _ASYMPTOTIC_CUTOFF:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (
        1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132)))
    )
    return acc + math.log(x) - 0.5 * inv - series


def trigamma(x: float) -> float:
    """psi'(x) via recurrence psi'(x) = psi'(x+1) + 1/x^2 and the series
    psi'(x) ~ 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7)
            - 1/(30x^9) + 5/(66x^11).
    """
    if not x > 0:
        raise ValueError("trigamma defined here for x > 0 only")
    acc = 0.0
    while x < _ASYMPTOTIC_CUTOFF:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (
        1.0
        + inv
        * (0.5 + inv * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * 5.0 / 66)))))
    )
    return acc + series


@dataclass(frozen=True)
class GammaFit:
    shape: float
    scale: float
    log_likelihood: float
    iterations: int
    converged: bool


def fit_gamma(samples, tol: float = 1e-10, max_iterations: int = 50) -> GammaFit:
    """Gamma MLE: moment-style initial shape, Newton refinement.

    With s = ln(mean) - mean(ln x), the initial shape is
    k0 = (3 - s + sqrt((s - 3)^2 + 24 s)) / (12 s) and Newton iterates on
    f(k) = ln k - psi(k) - s with f'(k) = 1/k - psi'(k); the scale is
    theta = mean / k, so k * theta reproduces the sample mean exactly.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if not (x > 0).all():
        raise ValueError("nonpositive sample")
    mean = float(x.mean())
    mean_log = float(np.log(x).mean())
    s = math.log(mean) - mean_log
    if s <= 0 or float(x.var()) == 0.0:
        raise ValueError("zero variance")

    k = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        f = math.log(k) - digamma(k) - s
        fp = 1.0 / k - trigamma(k)
        step = f / fp
        k_next = k - step
        while k_next <= 0:
            step *= 0.5
            k_next = k - step
        done = abs(k_next - k) <= tol * max(abs(k_next), 1.0)
        k = k_next
        if done:
            converged = True
            break
    theta = mean / k
    n = x.size
    loglik = float(
        (k - 1.0) * np.log(x).sum() - x.sum() / theta - n * math.lgamma(k) - n * k * math.log(theta)
    )
    return GammaFit(shape=k, scale=theta, log_likelihood=loglik, iterations=iterations, converged=converged)


def sample_gamma(shape: float, scale: float, n: int, seed: int) -> np.ndarray:
    """Seeded gamma sampler (numpy PCG64); the reproducible test source."""
    return np.random.default_rng(seed).gamma(shape, scale, n)


def fit_report(fit: GammaFit) -> str:
    return (
        f"shape {fit.shape!r}\n"
        f"scale {fit.scale!r}\n"
        f"log_likelihood {fit.log_likelihood!r}\n"
        f"iterations {fit.iterations}\n"
        f"converged {str(fit.converged).lower()}\n"
    )


# ---------------------------------------------------------------------------
# Primitive library


def snap_to_lattice(mesh: TriangleMesh, cell: float = VERTEX_LATTICE) -> TriangleMesh:
    verts = np.round(mesh.vertices / cell) * cell
    return TriangleMesh(verts, mesh.triangles.copy(), mesh.unit_hint)


_BOX_FACES = [
    (0, 2, 1), (0, 3, 2),  # bottom (z = 0), outward -z
    (4, 5, 6), (4, 6, 7),  # top, outward +z
    (0, 1, 5), (0, 5, 4),  # y = 0 side
    (1, 2, 6), (1, 6, 5),  # x = w side
    (2, 3, 7), (2, 7, 6),  # y = d side
    (3, 0, 4), (3, 4, 7),  # x = 0 side
]


def box_mesh(w: float, d: float, h: float) -> TriangleMesh:
    verts = np.array(
        [
            (0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
            (0, 0, h), (w, 0, h), (w, d, h), (0, d, h),
        ],
        dtype=np.float64,
    )
    return TriangleMesh(verts, np.array(_BOX_FACES, dtype=np.int64))


def prism_mesh(a: float, c: float, h: float) -> TriangleMesh:
    """Triangular prism: base (0,0), (a,0), (a/2, c) extruded to height h."""
    base = np.array([(0, 0, 0), (a, 0, 0), (a / 2, c, 0)], dtype=np.float64)
    verts = np.vstack([base, base + (0, 0, h)])
    tris = np.array(
        [
            (0, 2, 1),            # bottom, outward -z
            (3, 4, 5),            # top
            (0, 1, 4), (0, 4, 3),
            (1, 2, 5), (1, 5, 4),
            (2, 0, 3), (2, 3, 5),
        ],
        dtype=np.int64,
    )
    return TriangleMesh(verts, tris)


_ICOSA_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICOSA_VERTS = [
    (-1, _ICOSA_T, 0), (1, _ICOSA_T, 0), (-1, -_ICOSA_T, 0), (1, -_ICOSA_T, 0),
    (0, -1, _ICOSA_T), (0, 1, _ICOSA_T), (0, -1, -_ICOSA_T), (0, 1, -_ICOSA_T),
    (_ICOSA_T, 0, -1), (_ICOSA_T, 0, 1), (-_ICOSA_T, 0, -1), (-_ICOSA_T, 0, 1),
]
_ICOSA_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere_mesh(radius: float = 1.0, subdivisions: int = 1) -> TriangleMesh:
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in _ICOSA_VERTS]
    faces = list(_ICOSA_FACES)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces
    vertices = np.array(verts) * radius
    return TriangleMesh(vertices, np.array(faces, dtype=np.int64))


def deltahedron_mesh(n_points: int, radius: float, rng: np.random.Generator) -> TriangleMesh:
    """Convex hull of random points on a sphere: a generic, irregular solid."""
    if n_points < 4:
        raise ValueError("need at least 4 points")
    pts = rng.normal(size=(n_points, 3))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True) * radius
    hull = ConvexHull(pts)
    tris = []
    centroid = pts[np.unique(hull.simplices)].mean(axis=0)
    for simplex in hull.simplices:
        a, b, c = pts[simplex]
        normal = np.cross(b - a, c - a)
        if np.dot(normal, a - centroid) < 0:
            simplex = simplex[[0, 2, 1]]
        tris.append(simplex)
    return TriangleMesh(pts, np.array(tris, dtype=np.int64))


def torus_part_mesh(scale: float = 1.0) -> TriangleMesh:
    mesh = tangent_torus_mesh(1.0, 0.25, 4)
    return TriangleMesh(mesh.vertices * scale, mesh.triangles.copy())


PART_SHAPES = ("box", "prism", "icosphere", "torus", "deltahedron")


def make_primitive(shape: str, scale: float, rng: np.random.Generator) -> TriangleMesh:
    """One dyadic-snapped instance of a library shape.

    scale only sets the overall size; shape parameters are drawn from rng,
    so two calls with different rng states give geometrically distinct
    instances (distinct word bags) of the same family.
    """
    if shape == "box":
        w, d, h = (scale * rng.uniform(0.5, 1.5, 3)).tolist()
        mesh = box_mesh(w, d, h)
    elif shape == "prism":
        a, c, h = (scale * rng.uniform(0.5, 1.5, 3)).tolist()
        mesh = prism_mesh(a, c, h)
    elif shape == "icosphere":
        mesh = icosphere_mesh(scale * rng.uniform(0.5, 1.5), subdivisions=int(rng.integers(1, 3)))
    elif shape == "torus":
        mesh = torus_part_mesh(scale * rng.uniform(0.5, 1.5))
    elif shape == "deltahedron":
        mesh = deltahedron_mesh(int(rng.integers(8, 24)), scale * rng.uniform(0.5, 1.5), rng)
    else:
        raise ValueError(f"unknown primitive {shape!r}")
    return snap_to_lattice(mesh)


# ---------------------------------------------------------------------------
# Support lattice


def gen_support_lattice(
    footprint: tuple[float, float] = (4.0, 4.0),
    pillars: int = 9,
    seed: int = 0,
    jitter: float = 0.25,
) -> TriangleMesh:
    """Base slab plus a grid of identical thin pillars.

    The pillars float a hair above the slab so the lattice is a disjoint
    union of components: unioned into any model, its facet words are
    exactly the same.  With fixed parameters, only the seeded placement
    jitter varies between seeds; the slab and pillar shells are identical.
    """
    if pillars < 1:
        raise ValueError("pillar count must be >= 1")
    w, d = footprint
    slab = box_mesh(w, d, 0.25)
    pillar = box_mesh(0.125, 0.125, 1.0)
    rng = np.random.default_rng(seed)
    cols = math.ceil(math.sqrt(pillars))
    rows = math.ceil(pillars / cols)
    mesh = slab
    gap = 2.0**-8  # keeps pillar and slab disjoint
    placed = 0
    for r in range(rows):
        for c in range(cols):
            if placed >= pillars:
                break
            jx, jy = rng.uniform(-jitter, jitter, 2)
            x = (c + 0.5) * w / cols - 0.0625 + jx * w / cols
            y = (r + 0.5) * d / rows - 0.0625 + jy * d / rows
            offset = _snap_offset((x, y, 0.25 + gap))
            mesh = disjoint_union(mesh, translate(pillar, offset))
            placed += 1
    return mesh


def _snap_offset(offset) -> np.ndarray:
    return np.round(np.asarray(offset, dtype=np.float64) / OFFSET_LATTICE) * OFFSET_LATTICE


# ---------------------------------------------------------------------------
# TTD: generated corpora with containment ground truth


@dataclass(frozen=True)
class TTDSpec:
    part_shapes: tuple[str, ...] = PART_SHAPES
    n_parts: int = 5
    n_composites: int = 10
    n_distractors: int = 10
    part_scale: float = 1.0
    host_scale: float = 3.0
    translation_range: float = 50.0
    min_separation_ratio: float = 0.01
    seed: int = 0
    max_retries: int = 64

    def __post_init__(self):
        if self.n_parts < 1 or self.n_composites < 1:
            raise ValueError("need at least one part and one composite")
        unknown = set(self.part_shapes) - set(PART_SHAPES)
        if unknown:
            raise ValueError(f"unknown part shapes {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "part_shapes": list(self.part_shapes),
            "n_parts": self.n_parts,
            "n_composites": self.n_composites,
            "n_distractors": self.n_distractors,
            "part_scale": self.part_scale,
            "host_scale": self.host_scale,
            "translation_range": self.translation_range,
            "min_separation_ratio": self.min_separation_ratio,
            "seed": self.seed,
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TTDSpec":
        d = dict(d)
        if "part_shapes" in d:
            d["part_shapes"] = tuple(d["part_shapes"])
        return cls(**d)


@dataclass(frozen=True)
class TTDLabel:
    composite_id: str
    contents: tuple[tuple[str, tuple[float, float, float]], ...]  # (part id, translation)


@dataclass
class TTD:
    corpus: dict[str, TriangleMesh] = field(default_factory=dict)
    labels: list[TTDLabel] = field(default_factory=list)
    part_ids: list[str] = field(default_factory=list)
    distractor_ids: list[str] = field(default_factory=list)


class PlacementError(RuntimeError):
    """Could not place a part with the required bbox separation."""


class GenerationError(RuntimeError):
    """Could not generate shapes with distinguishable vocabularies."""


def _bbox_gap(a: TriangleMesh, b: TriangleMesh) -> tuple[float, float]:
    alo, ahi = a.bbox()
    blo, bhi = b.bbox()
    gaps = np.maximum(0.0, np.maximum(alo - bhi, blo - ahi))
    lo = np.minimum(alo, blo)
    hi = np.maximum(ahi, bhi)
    return float(np.linalg.norm(gaps)), float(np.linalg.norm(hi - lo))


def _contained(query: dict[int, int], target: dict[int, int]) -> bool:
    return all(target.get(w, 0) >= c for w, c in query.items())


def _local_words(mesh: TriangleMesh) -> dict[int, int]:
    from .words import build_bag

    return build_bag(mesh).local_counts()


def gen_ttd(spec: TTDSpec) -> TTD:
    """Generate a labeled composite/distractor corpus.

    Each composite is the disjoint union of a host and one translated part
    with bounding boxes separated by at least min_separation_ratio of the
    combined diagonal; distractors are hosts without any part.  Because
    translations are exact on the dyadic lattice, every part word count is
    preserved verbatim inside its composites.

    The generator also enforces that the ground truth is unambiguous at
    the vocabulary level: no part's word bag may be contained in another
    part's, and no composite or distractor may accidentally cover a
    foreign part's bag (shapes are redrawn until distinct, which is what
    makes the labels usable as exact retrieval ground truth).
    """
    rng = np.random.default_rng(spec.seed)
    ttd = TTD()

    parts: list[TriangleMesh] = []
    part_words: list[dict[int, int]] = []
    for i in range(spec.n_parts):
        shape = spec.part_shapes[i % len(spec.part_shapes)]
        for _ in range(spec.max_retries):
            part = make_primitive(shape, spec.part_scale, rng)
            words = _local_words(part)
            if not any(_contained(words, w) or _contained(w, words) for w in part_words):
                break
        else:
            raise GenerationError(f"could not draw a distinct part after {spec.max_retries} tries")
        pid = f"part-{i:03d}"
        ttd.corpus[pid] = part
        ttd.part_ids.append(pid)
        parts.append(part)
        part_words.append(words)

    def draw_host(exclude_part: int | None) -> TriangleMesh:
        # a host must not cover any foreign part's bag on its own
        for _ in range(spec.max_retries):
            host = make_primitive(
                spec.part_shapes[int(rng.integers(len(spec.part_shapes)))], spec.host_scale, rng
            )
            words = _local_words(host)
            if not any(
                _contained(part_words[k], _merge(words, part_words[exclude_part]) if exclude_part is not None else words)
                for k in range(len(parts))
                if k != exclude_part
            ):
                return host
        raise GenerationError(f"could not draw a distinct host after {spec.max_retries} tries")

    for i in range(spec.n_composites):
        part_idx = i % spec.n_parts
        host = draw_host(part_idx)
        part = parts[part_idx]
        placed = None
        for _ in range(spec.max_retries):
            offset = _snap_offset(rng.uniform(-spec.translation_range, spec.translation_range, 3))
            moved = translate(part, offset)
            gap, diagonal = _bbox_gap(host, moved)
            if gap >= spec.min_separation_ratio * diagonal:
                placed = (moved, offset)
                break
        if placed is None:
            raise PlacementError(
                f"no placement with separation >= {spec.min_separation_ratio} after {spec.max_retries} tries"
            )
        moved, offset = placed
        cid = f"composite-{i:03d}"
        ttd.corpus[cid] = disjoint_union(host, moved)
        ttd.labels.append(
            TTDLabel(composite_id=cid, contents=((ttd.part_ids[part_idx], tuple(float(v) for v in offset)),))
        )

    for i in range(spec.n_distractors):
        host = draw_host(None)
        did = f"distractor-{i:03d}"
        ttd.corpus[did] = host
        ttd.distractor_ids.append(did)
    return ttd


def _merge(a: dict[int, int], b: dict[int, int]) -> dict[int, int]:
    out = dict(a)
    for w, c in b.items():
        out[w] = out.get(w, 0) + c
    return out
