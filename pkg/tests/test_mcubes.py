import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshsearch.mcubes import (
    GridSpec,
    marching_cubes,
    sphere_field,
    sphere_mesh,
    tangent_torus_mesh,
    torus_field,
)
from meshsearch.mesh import (
    compute_stats,
    detect_degenerate,
    triangle_quality,
    weld_vertices,
)


def test_sphere_is_watertight_with_correct_area():
    mesh = sphere_mesh(1.0, 64)
    welded, adjacency, _ = weld_vertices(mesh, 1e-9)
    stats = compute_stats(welded, adjacency, degenerate=[])
    assert stats.watertight and stats.consistent_normals
    assert stats.surface_area == pytest.approx(4 * math.pi, rel=0.05)
    assert stats.volume == pytest.approx(4 / 3 * math.pi, rel=0.05)
    assert stats.volume > 0  # outward orientation


def test_constant_sign_field_gives_empty_mesh():
    grid = GridSpec.from_bounds((-1, -1, -1), (1, 1, 1), (8, 8, 8))
    mesh = marching_cubes(lambda x, y, z: x * 0 + 1.0, grid)
    assert len(mesh.triangles) == 0
    mesh = marching_cubes(lambda x, y, z: x * 0 - 1.0, grid)
    assert len(mesh.triangles) == 0


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), (1, 1, 1), (1, 4, 4))
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), (0.0, 1, 1), (4, 4, 4))


def test_nonfinite_field_rejected():
    grid = GridSpec.from_bounds((-1, -1, -1), (1, 1, 1), (4, 4, 4))
    values = np.full((4, 4, 4), np.nan)
    with pytest.raises(ValueError, match="finite"):
        marching_cubes(values, grid)


def test_field_array_shape_checked():
    grid = GridSpec.from_bounds((-1, -1, -1), (1, 1, 1), (4, 4, 4))
    with pytest.raises(ValueError):
        marching_cubes(np.zeros((3, 3, 3)), grid)


def test_tangent_torus_emits_subtolerance_facets():
    """The grid planes tangent to the torus produce the degenerate band."""
    mesh = tangent_torus_mesh(1.0, 0.25, 8)
    quality = triangle_quality(mesh)
    assert (quality < 1e-3).any()
    flagged = {t for t, _ in detect_degenerate(mesh, quality_tol=1e-3)}
    below = {int(t) for t in np.nonzero(quality < 1e-3)[0]}
    assert below <= flagged  # detector catches every facet below tolerance


def test_tangent_torus_requires_divisible_radius():
    with pytest.raises(ValueError):
        tangent_torus_mesh(1.0, 0.3, 8)


def test_torus_field_zero_on_surface():
    f = torus_field(1.0, 0.25)
    assert f(1.25, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert f(1.0, 0.0, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert f(0.0, 0.0, 0.0) > 0


@settings(max_examples=10, deadline=None)
@given(st.floats(0.6, 1.3), st.floats(-0.2, 0.2))
def test_smooth_sphere_fields_stay_watertight(radius, offset):
    grid = GridSpec.from_bounds((-2, -2, -2), (2, 2, 2), (24, 24, 24))
    mesh = marching_cubes(sphere_field(radius, (offset, -offset, offset / 2)), grid)
    welded, adjacency, _ = weld_vertices(mesh, 1e-9)
    flagged = [t for t, _ in detect_degenerate(welded)]
    stats = compute_stats(welded, adjacency, degenerate=flagged)
    assert stats.watertight and stats.consistent_normals
