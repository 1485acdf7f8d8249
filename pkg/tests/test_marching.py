import numpy as np

from tofscan.marching import marching_cubes_grid, marching_cubes_stream
from tofscan.mc_tables import EDGE_TABLE, TRI_TABLE


def sphere_field(n=48, r=0.6):
    xs = np.linspace(-1, 1, n)
    x, y, z = np.meshgrid(xs, xs, xs, indexing="ij")
    return r - np.sqrt(x * x + y * y + z * z), (-1, -1, -1), 2 / (n - 1)


def edge_incidence(tris):
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
    return counts


def test_tables_are_consistent():
    assert len(TRI_TABLE) == 256 and len(EDGE_TABLE) == 256
    for case, edges in enumerate(TRI_TABLE):
        assert len(edges) % 3 == 0
        bits = 0
        for e in edges:
            assert 0 <= e < 12
            bits |= 1 << e
        assert bits == EDGE_TABLE[case]


def test_sphere_surface_closed_and_oriented():
    f, origin, spacing = sphere_field()
    verts, tris = marching_cubes_grid(f, origin, spacing)
    counts = edge_incidence(tris)
    assert (counts == 2).all()            # closed, no edge on >2 triangles
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    signed = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6
    assert signed > 0                     # outward CCW
    vol_ref = 4 / 3 * np.pi * 0.6 ** 3
    area_ref = 4 * np.pi * 0.6 ** 2
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum()
    assert abs(signed - vol_ref) / vol_ref < 0.01
    assert abs(area - area_ref) / area_ref < 0.01


def test_vertices_lie_on_level_set():
    f, origin, spacing = sphere_field()
    verts, _ = marching_cubes_grid(f, origin, spacing)
    r = np.linalg.norm(verts, axis=1)
    # linear interpolation error is O(h^2 / r)
    assert np.abs(r - 0.6).max() < spacing ** 2 / 0.6 * 2


def test_stream_matches_block():
    f, origin, spacing = sphere_field(40)
    verts, tris = marching_cubes_grid(f, origin, spacing)
    v2, t2 = marching_cubes_stream(lambda k0, k1: f[:, :, k0:k1], origin, spacing,
                                   f.shape, max_slab_nodes=40 * 40 * 7)
    assert np.array_equal(verts, v2)
    assert set(map(tuple, tris)) == set(map(tuple, t2))


def test_empty_and_full_fields():
    f = np.full((8, 8, 8), -1.0)
    verts, tris = marching_cubes_grid(f, (0, 0, 0), 1.0)
    assert len(verts) == 0 and len(tris) == 0
    verts, tris = marching_cubes_grid(-f, (0, 0, 0), 1.0)
    assert len(tris) == 0


def test_deterministic():
    f, origin, spacing = sphere_field(32)
    a = marching_cubes_grid(f, origin, spacing)
    b = marching_cubes_grid(f, origin, spacing)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
