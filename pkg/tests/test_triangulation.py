import json

import numpy as np
import pytest

from cmsphere import harmonics as hm
from cmsphere import triangulation as tr

from conftest import sphere_cloud

# Number of vertices / triangles / maximum geodesic edge length per
# refinement level of the icosahedral mesh.
ICO_TABLE = {
    0: (12, 20, 1.10715),
    1: (42, 80, 0.62832),
    2: (162, 320, 0.32637),
    3: (642, 1280, 0.16483),
    4: (2562, 5120, 0.08263),
    5: (10242, 20480, 0.04134),
}


@pytest.mark.parametrize("k", sorted(ICO_TABLE))
def test_icosahedral_counts_and_h(k):
    t = tr.build_icosahedral(k)
    n_v, n_t, h = ICO_TABLE[k]
    assert t.n_vertices == n_v == 10 * 4**k + 2
    assert t.n_triangles == n_t == 20 * 4**k
    assert abs(t.h_max - h) / h < 0.02
    assert t.euler_characteristic() == 2


def test_vertices_on_sphere(ico3):
    assert np.abs(np.linalg.norm(ico3.vertices, axis=1) - 1).max() < 1e-14


def test_orientation_positive(ico3):
    tv = ico3.vertices[ico3.triangles]
    assert np.linalg.det(tv).min() > 0


def test_neighbor_consistency(ico3):
    # the neighbor across edge (j+1, j+2) must share exactly that edge
    T = ico3.triangles
    for t in range(0, ico3.n_triangles, 37):
        for j in range(3):
            edge = {T[t, (j + 1) % 3], T[t, (j + 2) % 3]}
            n = ico3.neighbors_opp[t, j]
            assert n != t and edge < set(T[n])


def test_powell_sabin_counts(ps3):
    assert ps3.n_sub == 6 * ps3.tri.n_triangles


def test_powell_sabin_k0_counts():
    t = tr.build_icosahedral(0)
    ps = tr.PowellSabinSplit(t)
    assert ps.n_sub == 120


def test_edge_split_coplanarity(ps3):
    t = ps3.tri
    c1 = ps3.centers[t.edge_tris[:, 0]]
    c2 = ps3.centers[t.edge_tris[:, 1]]
    res = np.abs(np.einsum("ei,ei->e", ps3.edge_splits, np.cross(c1, c2)))
    assert res.max() < 1e-13


def test_edge_split_on_edge(ps3):
    t = ps3.tri
    u, v = t.vertices[t.edges[:, 0]], t.vertices[t.edges[:, 1]]
    res = np.abs(np.einsum("ei,ei->e", ps3.edge_splits, np.cross(u, v)))
    assert res.max() < 1e-13
    assert ps3.edge_ab.min() > 0  # strictly between the endpoints


def test_equilateral_center_is_centroid():
    t = tr.build_icosahedral(0)
    ps = tr.PowellSabinSplit(t)
    cent = t.vertices[t.triangles].sum(axis=1)
    cent /= np.linalg.norm(cent, axis=1, keepdims=True)
    assert np.abs(ps.centers - cent).max() < 1e-13


def test_subtriangle_solid_angles_positive(ps3):
    v = ps3.sub_vertices
    assert np.linalg.det(v).min() > 0


def test_locate_walk_vertex(ico3):
    v = ico3.vertices[17]
    tri_idx, bary = tr.locate_walk(ico3, v[None, :])
    assert 17 in set(ico3.triangles[tri_idx[0]])
    assert bary.max() > 1 - 1e-12  # one coordinate is 1


def test_locate_walk_centroid(ico3):
    cent = ico3.vertices[ico3.triangles[100]].sum(axis=0)
    cent /= np.linalg.norm(cent)
    tri_idx, _ = tr.locate_walk(ico3, cent[None, :])
    scan = tr.locate_scan(ico3, cent[None, :])
    assert tri_idx[0] == scan[0] == 100


def test_locate_walk_matches_scan(ico3):
    pts = sphere_cloud(3000, seed=11)
    walk, bary = tr.locate_walk(ico3, pts)
    scan = tr.locate_scan(ico3, pts)
    assert np.array_equal(walk, scan)
    assert bary.min() > -1e-12


def test_locate_walk_bad_hints(ico3):
    pts = sphere_cloud(500, seed=12)
    walk, _ = tr.locate_walk(ico3, pts, hints=np.zeros(len(pts), dtype=int))
    assert np.array_equal(walk, tr.locate_scan(ico3, pts))


def test_subtriangle_location(ps3):
    pts = sphere_cloud(2000, seed=13)
    macro, _ = tr.locate_walk(ps3.tri, pts)
    sub, bary = tr.locate_subtriangles(ps3, macro, pts)
    assert np.all(sub // 6 == macro)
    assert bary.min() > -1e-10


# ---------------------------------------------------------------------------
# lat-lon mesh over the dynamics grid
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def latlon16():
    grid = hm.DynamicsGrid(16)
    tri, index = tr.build_latlon_triangulation(16, grid.thetas, grid.lambdas)
    return grid, tri, index


def test_latlon_counts(latlon16):
    grid, tri, _ = latlon16
    assert tri.n_vertices == grid.n_lat * grid.n_lon + 2
    assert tri.n_triangles == 2 * grid.n_lon + 2 * (grid.n_lat - 1) * grid.n_lon
    assert tri.euler_characteristic() == 2


def test_latlon_column_index(latlon16):
    # the fast query's column is plain floor division on longitude
    grid, _, index = latlon16
    pts = sphere_cloud(500, seed=14)
    lam = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * np.pi)
    q = np.minimum((lam * grid.n_lon / (2 * np.pi)).astype(int), grid.n_lon - 1)
    tri_idx = index.locate(pts)
    cols = []
    for t in tri_idx:
        if t < index.t_cells:
            cols.append(t)  # north fan triangle q
        elif t >= index.t_south:
            cols.append(t - index.t_south)
        else:
            cols.append(((t - index.t_cells) // 2) % grid.n_lon)
    assert np.array_equal(np.array(cols), q)


def test_latlon_fast_equals_walk_and_scan(latlon16):
    _, tri, index = latlon16
    pts = sphere_cloud(20000, seed=15)
    fast = index.locate(pts)
    walk, _ = tr.locate_walk(tri, pts)
    assert np.array_equal(fast, walk)
    scan = tr.locate_scan(tri, pts[:2000])
    assert np.array_equal(fast[:2000], scan)


def test_latlon_pole_query(latlon16):
    _, tri, index = latlon16
    poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    found = index.locate(poles)
    assert len(set(tri.triangles[found[0]]) & {tri.n_vertices - 2}) == 1
    assert len(set(tri.triangles[found[1]]) & {tri.n_vertices - 1}) == 1


def test_latlon_powell_sabin_builds(latlon16):
    _, tri, _ = latlon16
    ps = tr.PowellSabinSplit(tri)
    assert ps.n_sub == 6 * tri.n_triangles


def test_mesh_json_dump(ico3):
    data = json.loads(ico3.to_json())
    assert len(data["vertices"]) == ico3.n_vertices
    assert len(data["triangles"]) == ico3.n_triangles
