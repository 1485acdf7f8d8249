import numpy as np
import pytest

from tofscan.geometry import RigidTransform
from tofscan.reconstruction import TriangleMesh


def pose_error(t: RigidTransform, t_ref: RigidTransform):
    """(rotation error degrees, translation error meters)."""
    dr = t.rotation.T @ t_ref.rotation
    ang = np.degrees(np.arccos(np.clip((np.trace(dr) - 1) / 2, -1.0, 1.0)))
    return float(ang), float(np.linalg.norm(t.translation - t_ref.translation))


def unit_cube_mesh() -> TriangleMesh:
    """12-triangle unit cube [0,1]^3 with outward CCW winding."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    # rings around each face plus the face's outward normal
    faces = [
        ((0, 1, 3, 2), (-1, 0, 0)), ((4, 5, 7, 6), (1, 0, 0)),
        ((0, 1, 5, 4), (0, -1, 0)), ((2, 3, 7, 6), (0, 1, 0)),
        ((0, 2, 6, 4), (0, 0, -1)), ((1, 3, 7, 5), (0, 0, 1)),
    ]
    tris = []
    for ring, n in faces:
        for tri in ([ring[0], ring[1], ring[2]], [ring[0], ring[2], ring[3]]):
            a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
            if np.cross(b - a, c - a) @ np.array(n) < 0:
                tri = [tri[0], tri[2], tri[1]]
            tris.append(tri)
    mesh = TriangleMesh(v, np.array(tris))
    corners = mesh.triangle_corners()
    assert np.einsum("ij,ij->i", corners[0],
                     np.cross(corners[1], corners[2])).sum() / 6.0 > 0
    return mesh


def tetrahedron_mesh() -> TriangleMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(v, t)


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriangleMesh:
    phi = (1 + np.sqrt(5)) / 2
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    v /= np.linalg.norm(v[0])
    t = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    verts = list(map(tuple, v))
    index = {w: i for i, w in enumerate(verts)}

    def midpoint(i, j):
        m = tuple((np.array(verts[i]) + np.array(verts[j])) / 2)
        if m not in index:
            index[m] = len(verts)
            verts.append(m)
        return index[m]

    tris = t.tolist()
    for _ in range(subdivisions):
        new = []
        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        tris = new
    out = np.array(verts)
    out = radius * out / np.linalg.norm(out, axis=1)[:, None]
    return TriangleMesh(out, np.array(tris))


def torus_grid_mesh(n: int = 8, big_r: float = 1.0, small_r: float = 0.3) -> TriangleMesh:
    """n x n parametric torus grid, closed in both directions."""
    verts = []
    for i in range(n):
        u = 2 * np.pi * i / n
        for j in range(n):
            w = 2 * np.pi * j / n
            verts.append([(big_r + small_r * np.cos(w)) * np.cos(u),
                          (big_r + small_r * np.cos(w)) * np.sin(u),
                          small_r * np.sin(w)])
    tris = []
    for i in range(n):
        for j in range(n):
            a = i * n + j
            b = ((i + 1) % n) * n + j
            c = ((i + 1) % n) * n + (j + 1) % n
            d = i * n + (j + 1) % n
            tris += [[a, b, c], [a, c, d]]
    return TriangleMesh(np.array(verts), np.array(tris))


def sampled_mesh_points(mesh: TriangleMesh, n: int, seed: int = 0):
    """Uniform area-weighted surface samples with face normals."""
    rng = np.random.default_rng(seed)
    a, b, c = mesh.triangle_corners()
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    probs = areas / areas.sum()
    pick = rng.choice(len(areas), size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    pts = a[pick] + u[:, None] * (b - a)[pick] + v[:, None] * (c - a)[pick]
    normals = cross[pick] / np.linalg.norm(cross[pick], axis=1)[:, None]
    return pts, normals


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
