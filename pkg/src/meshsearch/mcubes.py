"""Marching cubes isosurface tessellation.

Standard 256-case lookup with linear interpolation along cell edges.
Deliberately NO snapping or cleanup: when the field is nearly zero at a
grid corner, interpolated vertices land arbitrarily close to that corner
and the output contains sliver and zero-area triangles.  That is the
point -- this module manufactures the pathological tessellations the
degeneracy detector has to cope with, as well as ordinary well-behaved
surfaces for fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .mesh import TriangleMesh

# cell corner offsets, matching the table convention
_CORNERS = np.array(
    [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ],
    dtype=np.int64,
)

# edge e connects corners _EDGE_ENDS[e]
_EDGE_ENDS = [
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned sample grid: dims are vertex counts per axis (>= 2)."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        if min(self.dims) < 2:
            raise ValueError("grid needs at least 2 samples per axis")
        if min(self.spacing) <= 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def from_bounds(cls, lo, hi, dims) -> "GridSpec":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        dims = tuple(int(d) for d in dims)
        spacing = tuple((hi - lo) / (np.asarray(dims) - 1))
        return cls(tuple(lo), spacing, dims)

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            self.origin[i] + self.spacing[i] * np.arange(self.dims[i]) for i in range(3)
        )


def sample_field(field: Callable, grid: GridSpec) -> np.ndarray:
    ax, ay, az = grid.axes()
    X, Y, Z = np.meshgrid(ax, ay, az, indexing="ij")
    values = np.asarray(field(X, Y, Z), dtype=np.float64)
    if values.shape != grid.dims:
        raise ValueError("field must broadcast over the grid")
    return values


def marching_cubes(
    field: Callable | np.ndarray, grid: GridSpec, isolevel: float = 0.0
) -> TriangleMesh:
    """Tessellate the isolevel surface of a scalar field over a grid.

    field is either an ndarray of shape grid.dims or a callable f(x, y, z)
    evaluated on the grid.  A corner is inside when its value is <= the
    isolevel: a surface tangent to the grid at a corner therefore emits
    the degenerate facets it would in the wild (interpolation parameter 0,
    vertices exactly on the corner) instead of being silently culled.
    Output is an unwelded triangle soup, oriented outward.
    """
    values = field if isinstance(field, np.ndarray) else sample_field(field, grid)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != tuple(grid.dims):
        raise ValueError(f"field shape {values.shape} != grid dims {grid.dims}")
    if not np.isfinite(values).all():
        raise ValueError("field must be finite on the grid")

    inside = values <= isolevel
    if not inside.any() or inside.all():
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    # vectorized per-cell configuration over all (nx-1, ny-1, nz-1) cells
    config = np.zeros(tuple(d - 1 for d in grid.dims), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        nx, ny, nz = config.shape
        config |= (
            inside[dx : dx + nx, dy : dy + ny, dz : dz + nz].astype(np.uint16) << bit
        )
    active = np.argwhere((config != 0) & (config != 255))

    ox, oy, oz = grid.origin
    sx, sy, sz = grid.spacing
    triangles: list[np.ndarray] = []
    for cx, cy, cz in active:
        case = int(config[cx, cy, cz])
        edge_bits = EDGE_TABLE[case]
        corner_pos = (_CORNERS + (cx, cy, cz)).astype(np.float64) * (sx, sy, sz) + (ox, oy, oz)
        corner_val = np.array(
            [values[cx + dx, cy + dy, cz + dz] for dx, dy, dz in _CORNERS]
        )
        verts_on_edge = {}
        for e in range(12):
            if not edge_bits & (1 << e):
                continue
            a, b = _EDGE_ENDS[e]
            va, vb = corner_val[a], corner_val[b]
            t = 0.0 if va == vb else (isolevel - va) / (vb - va)
            verts_on_edge[e] = corner_pos[a] + t * (corner_pos[b] - corner_pos[a])
        row = TRI_TABLE[case]
        for i in range(0, 16, 3):
            if row[i] < 0:
                break
            # table order winds inward for this corner convention; swap for
            # outward-facing normals
            triangles.append(
                np.array([verts_on_edge[row[i]], verts_on_edge[row[i + 2]], verts_on_edge[row[i + 1]]])
            )
    if not triangles:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    soup = np.concatenate(triangles, axis=0)
    tris = np.arange(len(soup), dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(soup, tris)


def sphere_field(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Callable:
    cx, cy, cz = center

    def f(x, y, z):
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 - radius**2

    return f


def torus_field(big_radius: float = 1.0, small_radius: float = 0.25) -> Callable:
    """f(x,y,z) = (sqrt(x^2+y^2) - R)^2 + z^2 - r^2; zero on the torus."""

    def f(x, y, z):
        return (np.sqrt(x * x + y * y) - big_radius) ** 2 + z * z - small_radius**2

    return f


def sphere_mesh(radius: float = 1.0, resolution: int = 48) -> TriangleMesh:
    pad = 1.5 * radius
    grid = GridSpec.from_bounds((-pad, -pad, -pad), (pad, pad, pad), (resolution,) * 3)
    return marching_cubes(sphere_field(radius), grid)


def tangent_torus_mesh(
    big_radius: float = 1.0, small_radius: float = 0.25, cells_per_unit: int = 8
) -> TriangleMesh:
    """Torus tessellated on a grid whose planes are tangent to it.

    The grid spacing divides the small radius exactly, so the z = +/- r
    planes of extreme curvature coincide with grid planes -- the classic
    recipe for near-zero corner values and the resulting sliver facets.
    """
    h = 1.0 / cells_per_unit
    if (small_radius / h) != round(small_radius / h):
        raise ValueError("small_radius must be a multiple of 1/cells_per_unit")
    half_xy = big_radius + small_radius + 2 * h
    half_xy = np.ceil(half_xy / h) * h
    half_z = small_radius + 2 * h
    nxy = int(round(2 * half_xy / h)) + 1
    nz = int(round(2 * half_z / h)) + 1
    grid = GridSpec((-half_xy, -half_xy, -half_z), (h, h, h), (nxy, nxy, nz))
    return marching_cubes(torus_field(big_radius, small_radius), grid)
