"""Oriented-normal estimation and Poisson surface reconstruction.

The indicator field is recovered on a uniform node grid: splat unit normals
into a vector field with trilinear weights, smooth once with a Gaussian
(sigma = 1 cell), solve the Poisson equation for the field whose gradient
matches it, pick the iso-value as the mean field value sampled at the input
points, and extract the surface with marching cubes. Components carrying
less than 1% of the triangles are dropped (stray fragments from segmentation
or interference leftovers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import PointCloud
from .marching import marching_cubes_grid
from .solver import solve_poisson_grid

__all__ = [
    "ReconstructionError", "OrientedPointCloud", "ScalarGrid", "TriangleMesh",
    "estimate_normals", "poisson_reconstruct", "is_watertight", "euler_characteristic",
]

_PAD_CELLS = 4


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OrientedPointCloud:
    """Points with mandatory unit normals facing their observing camera."""

    points: np.ndarray            # (N, 3)
    normals: np.ndarray           # (N, 3) unit
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(p) != len(n):
            raise ValueError("points/normals length mismatch")
        if len(n):
            lens = np.linalg.norm(n, axis=1)
            if np.abs(lens - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ScalarGrid:
    """Uniform node grid holding a scalar field (the indicator solve output)."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray  # (nx, ny, nz)

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if min(self.values.shape) < 8:
            raise ValueError(f"grid resolution {self.values.shape} below minimum 8 per axis")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))

    def sample(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at world points."""
        q = (np.asarray(pts, dtype=np.float64) - self.origin) / self.spacing
        return ndimage.map_coordinates(self.values, q.T, order=1, mode="nearest")


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle set, counter-clockwise outward winding."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_corners(self):
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def estimate_normals(cloud: PointCloud, k: int = 30,
                     camera_centers: dict | None = None,
                     viewpoint=(0.0, 0.0, 0.0)) -> OrientedPointCloud:
    """PCA normals over k nearest neighbors, flipped toward the observing camera.

    Per-point cameras come from ``cloud.source_ids`` and ``camera_centers``
    (device id -> center); without them every point uses ``viewpoint``.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    pts = cloud.points
    if len(pts) < k:
        raise ValueError(f"need at least k={k} points, got {len(pts)}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    nbrs = pts[idx]                               # (N, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)                 # ascending eigenvalues
    normals = vecs[:, :, 0]

    centers = np.tile(np.asarray(viewpoint, dtype=np.float64), (len(pts), 1))
    if camera_centers is not None and cloud.source_ids is not None:
        for dev, c in camera_centers.items():
            sel = cloud.source_ids == dev
            centers[sel] = np.asarray(c, dtype=np.float64)
    flip = np.einsum("ni,ni->n", normals, centers - pts) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return OrientedPointCloud(pts, normals, cloud.source_ids)


def _grid_layout(points: np.ndarray, resolution: int):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0:
        raise ReconstructionError("degenerate cloud: zero extent")
    spacing = extent / (resolution - 1 - 2 * _PAD_CELLS)
    shape = tuple(int(np.ceil((hi[i] - lo[i]) / spacing)) + 2 * _PAD_CELLS + 1
                  for i in range(3))
    origin = lo - _PAD_CELLS * spacing
    return origin, spacing, shape


def _splat_normals(cloud: OrientedPointCloud, origin, spacing, shape) -> np.ndarray:
    """Trilinear distribution of each unit normal into the 8 surrounding nodes."""
    field = np.zeros((3,) + shape)
    q = (cloud.points - origin) / spacing
    base = np.floor(q).astype(np.int64)
    frac = q - base
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        node = base + off
        flat = (node[:, 0] * shape[1] + node[:, 1]) * shape[2] + node[:, 2]
        for ax in range(3):
            np.add.at(field[ax].reshape(-1), flat, w * cloud.normals[:, ax])
    return field


def poisson_reconstruct(cloud: OrientedPointCloud, resolution: int = 128,
                        tol: float = 1e-6, keep_grid: bool = False):
    """Watertight triangle mesh from an oriented point cloud.

    ``resolution`` is the node count along the longest padded axis (the other
    axes scale with the cloud's bounding box). Raises ReconstructionError for
    empty input or an empty iso-surface, SolverError if the linear solve
    stalls.
    """
    if len(cloud) == 0:
        raise ReconstructionError("empty oriented cloud")
    if not (32 <= resolution <= 512):
        raise ValueError(f"resolution {resolution} outside [32, 512]")

    origin, spacing, shape = _grid_layout(cloud.points, resolution)
    field = _splat_normals(cloud, origin, spacing, shape)
    for ax in range(3):
        field[ax] = ndimage.gaussian_filter(field[ax], sigma=1.0)

    div = np.zeros(shape)
    for ax in range(3):
        div += np.gradient(field[ax], spacing, axis=ax)

    # -lap(chi) = -div(V); with camera-facing (outward) normals chi then rises
    # toward the inside up to the sign fixed below
    chi_arr, info = solve_poisson_grid(-div, spacing, tol=tol,
                                       maxiter=10 * resolution)
    grid = ScalarGrid(origin, spacing, chi_arr)

    sampled = grid.sample(cloud.points)
    iso = float(sampled.mean())
    inward = grid.sample(cloud.points - 1.5 * spacing * cloud.normals)
    sign = 1.0 if float(inward.mean()) >= iso else -1.0
    f = sign * (chi_arr - iso)

    verts, tris = marching_cubes_grid(f, origin, spacing, level=0.0)
    if len(tris) == 0:
        raise ReconstructionError("empty iso-surface (solve produced no crossing)")
    verts, tris = _weld_slivers(verts, tris, radius=1e-3 * spacing)
    verts, tris = _cull_small_components(verts, tris, min_fraction=0.01)
    mesh = TriangleMesh(verts, tris)
    if keep_grid:
        return mesh, grid, info
    return mesh


def _weld_slivers(verts: np.ndarray, tris: np.ndarray, radius: float):
    """Merge near-coincident vertices and drop the collapsed triangles.

    Marching cubes emits sliver triangles when the surface grazes a grid node;
    deleting them outright would open holes, but welding their coincident
    vertices collapses them to repeated-index triangles whose removal keeps
    the mesh closed.
    """
    pairs = cKDTree(verts).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        root = np.arange(len(verts))

        def find(i):
            while root[i] != i:
                root[i] = root[root[i]]
                i = root[i]
            return i

        for a, b in pairs:  # few pairs in practice, fine as a Python loop
            ra, rb = find(a), find(b)
            if ra != rb:
                root[max(ra, rb)] = min(ra, rb)
        remap = np.array([find(i) for i in range(len(verts))])
        tris = remap[tris]
    collapsed = ((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2])
                 | (tris[:, 0] == tris[:, 2]))
    return _compact(verts, tris[~collapsed])


def _compact(verts: np.ndarray, tris: np.ndarray):
    used = np.unique(tris.reshape(-1))
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[tris]


def _cull_small_components(verts: np.ndarray, tris: np.ndarray, min_fraction: float):
    """Drop connected components (via shared vertices) below a triangle fraction."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    rows = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2]])
    cols = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0]])
    adj = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                     shape=(len(verts), len(verts)))
    _, labels = connected_components(adj, directed=False)
    tri_label = labels[tris[:, 0]]
    lab, counts = np.unique(tri_label, return_counts=True)
    keep_lab = lab[counts >= min_fraction * len(tris)]
    keep = np.isin(tri_label, keep_lab)
    return _compact(verts, tris[keep])


def is_watertight(mesh: TriangleMesh) -> tuple[bool, int]:
    """(closed 2-manifold with consistent orientation, boundary edge count)."""
    t = mesh.triangles
    if len(t) == 0:
        return False, 0
    directed = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    _, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    boundary = int((counts == 1).sum())
    if (counts != 2).any():
        return False, boundary + int((counts > 2).sum())
    # each undirected edge must appear once per direction
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if (dcounts != 1).any():
        return False, 0
    return True, 0


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F over referenced vertices and unique undirected edges."""
    t = mesh.triangles
    if len(t) == 0:
        return 0
    v = len(np.unique(t.reshape(-1)))
    und = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    e = len(np.unique(und, axis=0))
    return v - e + len(t)
