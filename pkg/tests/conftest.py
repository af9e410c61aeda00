import struct

import numpy as np
import pytest

from meshsearch.mesh import TriangleMesh


def make_binary_stl(triangles, header=b"test") -> bytes:
    """Hand-rolled binary STL writer, independent of the library's."""
    out = bytearray(header.ljust(80, b"\0"))
    out += struct.pack("<I", len(triangles))
    for tri in triangles:
        out += struct.pack("<3f", 0.0, 0.0, 0.0)  # normal, ignored by parser
        for vertex in tri:
            out += struct.pack("<3f", *vertex)
        out += struct.pack("<H", 0)
    return bytes(out)


# Outward-oriented unit tetrahedron: (0,0,0),(1,0,0),(0,1,0),(0,0,1)
TETRA_VERTS = np.array(
    [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
)
TETRA_FACES = np.array([(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)])


@pytest.fixture
def tetra() -> TriangleMesh:
    return TriangleMesh(TETRA_VERTS.copy(), TETRA_FACES.copy())


@pytest.fixture
def unit_cube() -> TriangleMesh:
    from meshsearch.analysis import box_mesh

    return box_mesh(1.0, 1.0, 1.0)


@pytest.fixture
def fixed_clock():
    class Clock:
        def __init__(self):
            self.now = 1_000_000.0

        def __call__(self):
            return self.now

        def advance(self, seconds):
            self.now += seconds

    return Clock()
