"""Geometric word extraction: mesh -> multiset of discrete shape tokens.

Local words quantize per-facet neighborhood measurements (perimeter,
shape quality, dihedral angles across the three edges); global words
quantize whole-shape measurements (surface area, bbox aspect, sphericity,
triangle count).  Two shapes are compared purely through these bags, so
everything here must be deterministic and rigid-motion invariant.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .mesh import (
    BOUNDARY,
    MeshAdjacency,
    MeshStats,
    TriangleMesh,
    compute_stats,
    detect_degenerate,
    weld_vertices,
)

DIHEDRAL_SENTINEL = -1.0  # edge with no well-defined partner (boundary, non-manifold, degenerate)

_GLOBAL_KIND_BIT = 1 << 63  # word ids carry their kind in the top bit


class WordKind(str, Enum):
    LOCAL = "local"
    GLOBAL = "global"


class EmptyBagError(ValueError):
    """Mesh yields no non-degenerate facets; not indexable."""


@dataclass(frozen=True)
class LocalFeature:
    """Rigid-motion invariant measurements of one facet and its 1-ring."""

    facet: int
    perimeter: float
    quality: float  # 4*sqrt(3)*A / sum(edge^2), in [0, 1]
    dihedrals: tuple[float, float, float]  # ascending, sentinel -1.0 for boundary


@dataclass(frozen=True)
class GeometricWord:
    id: int
    kind: WordKind
    level: int = 0


@dataclass(frozen=True)
class WordConfig:
    """Quantization parameters; also carries the bag-pipeline tolerances.

    Log-scale perimeter bins spread the dense sub-unit perimeter range
    across the vocabulary instead of clumping it into a couple of linear
    bins.  Soft binning (margin > 0) additionally emits the neighboring
    log-perimeter word when a feature sits within margin (in bin units) of
    a bin edge; it is off by default because it breaks exact sub-multiset
    containment.
    """

    log_perimeter_bin_width: float = 0.25
    quality_bins: int = 8
    dihedral_bins: int = 16
    soft_margin: float = 0.0
    log_area_bin_width: float = 0.5
    aspect_bins: int = 16
    sphericity_bins: int = 16
    log_count_bin_width: float = 0.6931471805599453  # ln 2: octave bins
    weld_epsilon: float = 1e-9
    area_tol: float = 1e-12
    quality_tol: float = 1e-4

    def __post_init__(self):
        if min(self.quality_bins, self.dihedral_bins, self.aspect_bins, self.sphericity_bins) < 1:
            raise ValueError("bin counts must be >= 1")
        if min(self.log_perimeter_bin_width, self.log_area_bin_width, self.log_count_bin_width) <= 0:
            raise ValueError("bin widths must be > 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WordConfig":
        return cls(**json.loads(text))


@dataclass
class WordBag:
    """Sparse multiset of word ids; the retrieval unit for one model.

    counts is kept sorted by word id (build_bag and the index maintain
    this), so plain dict iteration is already deterministic ascending
    order; the scorers rely on that to avoid re-sorting per candidate.
    features holds the raw per-facet measurements (one row per emitted
    local feature: perimeter, quality, 3 dihedrals) so that words can be
    re-quantized at a finer refinement level when a generic word is split.
    """

    counts: dict[int, int] = field(default_factory=dict)
    total_local: int = 0
    had_degenerates: bool = False
    had_boundary: bool = False
    model_id: str | None = None
    features: np.ndarray | None = None  # (n, 5) float64

    def local_counts(self) -> dict[int, int]:
        return {w: c for w, c in self.counts.items() if is_local(w)}

    def global_counts(self) -> dict[int, int]:
        return {w: c for w, c in self.counts.items() if not is_local(w)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, WordBag):
            return NotImplemented
        if (self.features is None) != (other.features is None):
            return False
        if self.features is not None and not np.array_equal(self.features, other.features):
            return False
        return (
            self.counts == other.counts
            and self.total_local == other.total_local
            and self.had_degenerates == other.had_degenerates
            and self.had_boundary == other.had_boundary
            and self.model_id == other.model_id
        )


def is_local(word_id: int) -> bool:
    return not (word_id & _GLOBAL_KIND_BIT)


def word_id(kind: WordKind, level: int, bins: tuple) -> int:
    """Stable 64-bit id of a quantized bin tuple.

    blake2b over a fixed binary encoding, with the kind forced into the top
    bit so any component can classify an id without a side table.
    """
    payload = struct.pack("<B i", 1 if kind is WordKind.GLOBAL else 0, level)
    payload += struct.pack(f"<{len(bins)}q", *bins)
    digest = hashlib.blake2b(payload, digest_size=8, person=b"geomword").digest()
    raw = int.from_bytes(digest, "little")
    if kind is WordKind.GLOBAL:
        return raw | _GLOBAL_KIND_BIT
    return raw & ~_GLOBAL_KIND_BIT


# ---------------------------------------------------------------------------
# Local features


def extract_local_features(
    mesh: TriangleMesh,
    adjacency: MeshAdjacency,
    degenerate: set[int] | frozenset[int] = frozenset(),
) -> list[LocalFeature]:
    """One feature per non-degenerate facet.

    The dihedral across an edge is the unsigned angle in [0, pi] between
    the two incident facet normals; edges whose partner is missing,
    non-manifold, or degenerate carry the sentinel.
    """
    tris = mesh.triangles
    if len(tris) == 0:
        return []
    coords = mesh.vertices[tris]
    e01 = coords[:, 1] - coords[:, 0]
    e12 = coords[:, 2] - coords[:, 1]
    e20 = coords[:, 0] - coords[:, 2]
    lengths = (
        np.linalg.norm(e01, axis=1),
        np.linalg.norm(e12, axis=1),
        np.linalg.norm(e20, axis=1),
    )
    perimeters = lengths[0] + lengths[1] + lengths[2]
    cross = np.cross(e01, -e20)
    cross_norm = np.linalg.norm(cross, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        normals = np.where(cross_norm[:, None] > 0, cross / cross_norm[:, None], 0.0)
    sq = sum((e * e).sum(axis=1) for e in (e01, e12, e20))
    with np.errstate(divide="ignore", invalid="ignore"):
        quality = np.where(sq > 0, 4.0 * math.sqrt(3.0) * (0.5 * cross_norm) / sq, 0.0)

    features: list[LocalFeature] = []
    for t in range(len(tris)):
        if t in degenerate:
            continue
        ds = []
        for k in range(3):
            nb = int(adjacency.neighbors[t, k])
            if nb == BOUNDARY or nb in degenerate:
                ds.append(DIHEDRAL_SENTINEL)
                continue
            dot = float(np.dot(normals[t], normals[nb]))
            dot = max(-1.0, min(1.0, dot))
            ds.append(math.acos(dot))
        ds.sort()
        features.append(
            LocalFeature(
                facet=t,
                perimeter=float(perimeters[t]),
                quality=float(quality[t]),
                dihedrals=(ds[0], ds[1], ds[2]),
            )
        )
    return features


def _quality_bin(q: float, bins: int) -> int:
    return min(int(q * bins), bins - 1) if q >= 0 else 0


def _dihedral_bin(d: float, bins: int) -> int:
    if d == DIHEDRAL_SENTINEL:
        return -1  # sentinel bin: open/degenerate edges never alias real angles
    return min(int(d / math.pi * bins), bins - 1)


def _local_bins(feature: LocalFeature, config: WordConfig, level: int) -> tuple:
    scale = 1 << level  # each refinement doubles quality and dihedral resolution
    qb = config.quality_bins * scale
    db = config.dihedral_bins * scale
    p_bin = math.floor(math.log(feature.perimeter) / config.log_perimeter_bin_width)
    return (
        p_bin,
        _quality_bin(feature.quality, qb),
        _dihedral_bin(feature.dihedrals[0], db),
        _dihedral_bin(feature.dihedrals[1], db),
        _dihedral_bin(feature.dihedrals[2], db),
    )


def quantize_local(
    feature: LocalFeature,
    config: WordConfig,
    splits: frozenset[int] | set[int] = frozenset(),
) -> list[GeometricWord]:
    """Quantize one feature into 1-2 local words.

    Words whose id appears in `splits` have been refined into synonyms:
    quantization retries at the next refinement level (doubled quality and
    dihedral bins) until it lands on an unsplit id, so query and corpus
    vocabularies stay aligned across splits.  With a soft-binning margin,
    a feature close to a log-perimeter bin edge also emits the adjacent
    bin's word.
    """
    if not (feature.perimeter > 0 and math.isfinite(feature.perimeter)):
        raise ValueError(f"non-positive or non-finite perimeter on facet {feature.facet}")
    if not all(math.isfinite(v) for v in (feature.quality, *feature.dihedrals)):
        raise ValueError(f"non-finite feature on facet {feature.facet}")

    words = [_resolve_split(feature, config, splits)]
    if config.soft_margin > 0:
        t = math.log(feature.perimeter) / config.log_perimeter_bin_width
        frac = t - math.floor(t)
        shift = 0
        if frac < config.soft_margin:
            shift = -1
        elif frac > 1.0 - config.soft_margin:
            shift = 1
        if shift:
            alt = _local_bins(feature, config, 0)
            alt = (alt[0] + shift,) + alt[1:]
            words.append(_resolve_split_bins(feature, alt, config, splits))
    return words


def _resolve_split(feature: LocalFeature, config: WordConfig, splits) -> GeometricWord:
    level = 0
    while True:
        bins = _local_bins(feature, config, level)
        wid = word_id(WordKind.LOCAL, level, bins)
        if wid not in splits:
            return GeometricWord(wid, WordKind.LOCAL, level)
        level += 1


def _resolve_split_bins(feature: LocalFeature, bins0: tuple, config: WordConfig, splits) -> GeometricWord:
    # soft-binning alternate: same refinement walk but with the shifted
    # perimeter bin carried through every level
    level = 0
    bins = bins0
    while True:
        wid = word_id(WordKind.LOCAL, level, bins)
        if wid not in splits:
            return GeometricWord(wid, WordKind.LOCAL, level)
        level += 1
        finer = _local_bins(feature, config, level)
        bins = (bins0[0],) + finer[1:]


# ---------------------------------------------------------------------------
# Global words

_G_AREA, _G_ASPECT, _G_SPHERICITY, _G_COUNT = 1, 2, 3, 4


def extract_global_words(
    mesh: TriangleMesh, stats: MeshStats, config: WordConfig
) -> list[GeometricWord]:
    """At most four whole-shape words, each contributing count 1.

    Surface-area and triangle-count words are log-binned; bbox aspect
    ratios (sorted descending, so both ratios lie in [0, 1]) and sphericity
    36*pi*V^2/A^3 are binned uniformly.  The sphericity word exists only
    when the volume is defined.
    """
    words: list[GeometricWord] = []
    area = stats.surface_area
    if area > 0:
        abin = math.floor(math.log(area) / config.log_area_bin_width)
        words.append(GeometricWord(word_id(WordKind.GLOBAL, 0, (_G_AREA, abin)), WordKind.GLOBAL))

    extents = np.sort(stats.bbox_max - stats.bbox_min)[::-1]
    if extents[0] > 0:
        r2 = float(extents[1] / extents[0])
        r3 = float(extents[2] / extents[0])
        b2 = min(int(r2 * config.aspect_bins), config.aspect_bins - 1)
        b3 = min(int(r3 * config.aspect_bins), config.aspect_bins - 1)
        words.append(
            GeometricWord(word_id(WordKind.GLOBAL, 0, (_G_ASPECT, b2, b3)), WordKind.GLOBAL)
        )

    if stats.volume is not None and area > 0:
        sph = 36.0 * math.pi * stats.volume**2 / area**3
        sph = max(0.0, min(1.0, sph))
        sbin = min(int(sph * config.sphericity_bins), config.sphericity_bins - 1)
        words.append(
            GeometricWord(word_id(WordKind.GLOBAL, 0, (_G_SPHERICITY, sbin)), WordKind.GLOBAL)
        )

    if stats.triangle_count > 0:
        cbin = math.floor(math.log(stats.triangle_count) / config.log_count_bin_width)
        words.append(GeometricWord(word_id(WordKind.GLOBAL, 0, (_G_COUNT, cbin)), WordKind.GLOBAL))
    return words


# ---------------------------------------------------------------------------
# Bag pipeline


def build_bag(
    mesh: TriangleMesh,
    config: WordConfig = WordConfig(),
    splits: frozenset[int] | set[int] = frozenset(),
    model_id: str | None = None,
) -> WordBag:
    """Full pipeline: weld, stats, degeneracy scan, local + global words.

    Deterministic for a given (mesh, config, splits).  Raises EmptyBagError
    when no non-degenerate facet remains.
    """
    welded, adjacency, report = weld_vertices(mesh, config.weld_epsilon)
    flagged = detect_degenerate(welded, config.area_tol, config.quality_tol)
    degenerate = {t for t, _ in flagged}
    stats = compute_stats(welded, adjacency, degenerate=sorted(degenerate))
    return build_bag_welded(
        welded, adjacency, stats, degenerate, config, splits, model_id,
        dropped_in_weld=bool(report.dropped_triangles),
    )


def build_bag_welded(
    welded: TriangleMesh,
    adjacency: MeshAdjacency,
    stats: MeshStats,
    degenerate: set[int],
    config: WordConfig = WordConfig(),
    splits: frozenset[int] | set[int] = frozenset(),
    model_id: str | None = None,
    dropped_in_weld: bool = False,
) -> WordBag:
    """Bag construction when weld / stats / degeneracy already ran."""
    features = extract_local_features(welded, adjacency, degenerate)
    if not features:
        raise EmptyBagError("no non-degenerate facets; model is not indexable")

    counts: dict[int, int] = {}
    for feat in features:
        for word in quantize_local(feat, config, splits):
            counts[word.id] = counts.get(word.id, 0) + 1
    for word in extract_global_words(welded, stats, config):
        counts[word.id] = counts.get(word.id, 0) + 1

    had_boundary = any(DIHEDRAL_SENTINEL in f.dihedrals for f in features)
    rows = np.array(
        [[f.perimeter, f.quality, *f.dihedrals] for f in features], dtype=np.float64
    )
    return WordBag(
        counts=dict(sorted(counts.items())),
        total_local=len(features),
        had_degenerates=bool(degenerate) or dropped_in_weld,
        had_boundary=had_boundary,
        model_id=model_id,
        features=rows,
    )


def features_from_rows(rows: np.ndarray) -> list[LocalFeature]:
    """Rebuild LocalFeatures from the compact array stored in a bag."""
    return [
        LocalFeature(
            facet=i,
            perimeter=float(r[0]),
            quality=float(r[1]),
            dihedrals=(float(r[2]), float(r[3]), float(r[4])),
        )
        for i, r in enumerate(rows)
    ]


def dump_bag(bag: WordBag) -> str:
    """Line-oriented dump (word id, kind, count), sorted; test-fixture format."""
    lines = []
    for wid in sorted(bag.counts):
        kind = "local" if is_local(wid) else "global"
        lines.append(f"{wid:016x} {kind} {bag.counts[wid]}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_bag_dump(text: str) -> dict[int, int]:
    counts: dict[int, int] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        wid_hex, _, count = line.split()
        counts[int(wid_hex, 16)] = int(count)
    return counts
