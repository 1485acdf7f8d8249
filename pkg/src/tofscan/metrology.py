"""Mesh metrology: surface area and divergence-theorem volume.

Sums are accumulated with math.fsum, which rounds the exact sum once, so the
results are bit-identical under any vertex or triangle reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .reconstruction import TriangleMesh, is_watertight

__all__ = ["MeshMeasurements", "NotWatertightError", "surface_area", "volume", "measure_mesh"]


class NotWatertightError(ValueError):
    def __init__(self, boundary_edges: int):
        super().__init__(f"mesh is not watertight ({boundary_edges} boundary edges); "
                         "volume is undefined")
        self.boundary_edges = boundary_edges


@dataclass(frozen=True)
class MeshMeasurements:
    surface_area: float  # m^2
    volume: float        # m^3


def surface_area(mesh: TriangleMesh) -> float:
    """Sum of triangle areas; degenerate triangles contribute zero."""
    a, b, c = mesh.triangle_corners()
    return 0.5 * math.fsum(np.linalg.norm(np.cross(b - a, c - a), axis=1))


def volume(mesh: TriangleMesh) -> float:
    """|sum of signed tetrahedron volumes|; requires a watertight mesh.

    The signed sum is translation invariant for closed surfaces, so no
    centering is needed.
    """
    ok, boundary = is_watertight(mesh)
    if not ok:
        raise NotWatertightError(boundary)
    a, b, c = mesh.triangle_corners()
    signed = math.fsum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0
    return abs(signed)


def measure_mesh(mesh: TriangleMesh) -> MeshMeasurements:
    return MeshMeasurements(surface_area(mesh), volume(mesh))
