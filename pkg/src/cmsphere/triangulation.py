"""Spherical triangulations, Powell-Sabin split geometry, and point location.

Two mesh families are supported: refined icosahedral meshes (for the inverse
map) and the latitude-longitude mesh over the spectral dynamics grid (for the
velocity field), the latter with an O(1) containing-triangle query.

Triangles are stored counterclockwise as seen from outside the sphere, i.e.
det[v0, v1, v2] > 0.  All edges of a closed spherical mesh are interior, so
every edge has exactly two incident triangles.
"""

from __future__ import annotations

import json

import numpy as np

from cmsphere.geometry import tangent_frame

BARY_TOL = 1e-12


class SplitDegenerate(ValueError):
    """A Powell-Sabin subtriangle collapsed to (near) zero solid angle."""


class WalkCycle(RuntimeError):
    """Point-location walk failed to terminate; caller falls back to a scan."""


class SphericalTriangulation:
    """Conforming triangulation of the unit sphere.

    Attributes
    ----------
    vertices : (N_v, 3) unit vectors
    triangles : (N_T, 3) int, CCW from outside
    edges : (N_e, 2) int, each row sorted (lo, hi)
    tri_edges : (N_T, 3) int, global edge id of (T[j], T[(j+1)%3])
    neighbors_opp : (N_T, 3) int, neighbor sharing the edge opposite vertex j
    frames : pair of (N_v, 3) arrays, the per-vertex tangent frame
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.n_vertices = len(self.vertices)
        self.n_triangles = len(self.triangles)
        self._build_edges()
        self.frames = tangent_frame(self.vertices)
        # any incident triangle per vertex, used as a walk hint
        self.vertex_tri = np.zeros(self.n_vertices, dtype=np.int64)
        self.vertex_tri[self.triangles[:, ::-1].ravel()] = np.repeat(
            np.arange(self.n_triangles), 3
        )
        tv = self.vertices[self.triangles]
        dets = np.linalg.det(tv)
        if np.any(dets <= 0):
            raise ValueError("triangles must be CCW from outside (det > 0)")
        # inverse of [v0 v1 v2] columns; rows give homogeneous barycentric coords
        self.inv_mats = np.linalg.inv(tv.transpose(0, 2, 1))
        arcs = np.arccos(np.clip(np.einsum(
            "tjk,tjk->tj", tv, tv[:, [1, 2, 0], :]), -1.0, 1.0))
        self.h_max = float(arcs.max())

    def _build_edges(self):
        tri = self.triangles
        raw = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        raw_sorted = np.sort(raw, axis=1)
        edges, inverse, counts = np.unique(
            raw_sorted, axis=0, return_inverse=True, return_counts=True
        )
        if not np.all(counts == 2):
            raise ValueError("mesh is not a closed conforming surface")
        self.edges = edges
        self.n_edges = len(edges)
        # tri_edges[t, j] is the edge (T[j], T[j+1])
        self.tri_edges = inverse.reshape(3, -1).T
        # two triangles per edge
        edge_tris = np.full((self.n_edges, 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        tri_of_slot = order % self.n_triangles
        eids = inverse[order]
        edge_tris[:, 0] = tri_of_slot[0::2]
        edge_tris[:, 1] = tri_of_slot[1::2]
        assert np.all(eids[0::2] == np.arange(self.n_edges))
        self.edge_tris = edge_tris
        # neighbor across the edge opposite local vertex j is edge (j+1, j+2)
        opp_edge = self.tri_edges[:, [1, 2, 0]]
        both = edge_tris[opp_edge]
        own = np.arange(self.n_triangles)[:, None]
        self.neighbors_opp = np.where(both[:, :, 0] == own, both[:, :, 1], both[:, :, 0])

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    def barycentric(self, tri_idx, pts):
        """Homogeneous spherical barycentric coordinates of pts in triangles tri_idx."""
        return np.einsum("...ij,...j->...i", self.inv_mats[tri_idx], pts)

    def to_json(self):
        """Mesh dump {vertices, triangles} for debugging/visualization."""
        return json.dumps(
            {"vertices": self.vertices.tolist(), "triangles": self.triangles.tolist()}
        )


def _icosahedron():
    """Golden-ratio icosahedron rotated so one vertex sits at (0, 0, 1)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    # rotate vertex 5 = (0, 1, phi)/n onto the north pole, about the x-axis
    beta = np.arctan2(1.0, phi)
    c, s = np.cos(beta), np.sin(beta)
    rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    verts = verts @ rot.T
    verts[5] = (0.0, 0.0, 1.0)
    return verts, faces


def build_icosahedral(k):
    """k-fold refined icosahedral triangulation (N_v = 10*4^k + 2, N_T = 20*4^k).

    Each refinement splits every triangle into four via geodesic edge
    midpoints projected to the sphere.
    """
    if k < 0:
        raise ValueError("refinement level must be >= 0")
    verts, faces = _icosahedron()
    for _ in range(k):
        verts, faces = _refine_once(verts, faces)
    return SphericalTriangulation(verts, faces)


def _refine_once(verts, faces):
    raw = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
    mids = verts[edges[:, 0]] + verts[edges[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    mid_idx = len(verts) + np.arange(len(edges))
    new_verts = np.vstack([verts, mids])
    m01, m12, m20 = (mid_idx[inverse.reshape(3, -1)[j]] for j in range(3))
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([v0, m01, m20], axis=1),
            np.stack([v1, m12, m01], axis=1),
            np.stack([v2, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return new_verts, new_faces


def _solid_angles(w0, w1, w2):
    """Solid angle of spherical triangles (van Oosterom-Strackee)."""
    det = np.einsum("...i,...i->...", w0, np.cross(w1, w2))
    denom = (
        1.0
        + np.einsum("...i,...i->...", w0, w1)
        + np.einsum("...i,...i->...", w1, w2)
        + np.einsum("...i,...i->...", w2, w0)
    )
    return 2.0 * np.arctan2(np.abs(det), denom)


class PowellSabinSplit:
    """Powell-Sabin split of a spherical triangulation.

    Each macro triangle is split into six subtriangles about an interior
    point; each macro edge is split where the geodesic through the two
    adjacent interior points crosses it.  Interior points are spherical
    incenters (vertices weighted by opposite arc lengths, projected), the
    construction for which the C1 coefficient formulas hold: the interior
    points of two adjacent triangles and their shared edge split point are
    then coplanar with the origin.

    Subtriangle 6*t + 2*j is (v_j, m_j, c_t) and 6*t + 2*j + 1 is
    (m_j, v_{j+1}, c_t), where m_j splits macro edge (T[j], T[j+1]).

    The split also carries the degree-2 Bernstein-Bezier coefficient
    indexing: one shared scalar slot per domain point (corners at vertices,
    edge splits and interior points; mid-edge slots on every subedge), with
    ``sub_coeff_idx[s]`` giving the six slots of subtriangle s in the order
    (200, 020, 002, 110, 101, 011).
    """

    def __init__(self, tri: SphericalTriangulation):
        self.tri = tri
        V, T, E = tri.vertices, tri.triangles, tri.edges
        n_v, n_t, n_e = tri.n_vertices, tri.n_triangles, tri.n_edges

        tv = V[T]
        arc = lambda a, b: np.arccos(np.clip(np.einsum("...i,...i->...", a, b), -1, 1))
        # opposite arc lengths as incenter weights
        a0 = arc(tv[:, 1], tv[:, 2])
        a1 = arc(tv[:, 2], tv[:, 0])
        a2 = arc(tv[:, 0], tv[:, 1])
        centers = a0[:, None] * tv[:, 0] + a1[:, None] * tv[:, 1] + a2[:, None] * tv[:, 2]
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        self.centers = centers

        # edge split point: intersection of the geodesic through the two
        # adjacent centers with the edge geodesic
        c1 = centers[tri.edge_tris[:, 0]]
        c2 = centers[tri.edge_tris[:, 1]]
        u, v = V[E[:, 0]], V[E[:, 1]]
        d = np.cross(np.cross(c1, c2), np.cross(u, v))
        nrm = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(nrm < 1e-12):
            raise SplitDegenerate("incenter geodesic is tangent to a macro edge")
        d /= nrm
        d *= np.sign(np.einsum("ei,ei->e", d, u + v))[:, None]
        self.edge_splits = d

        # homogeneous decomposition m = a*u + b*v (exact: m lies in span(u, v))
        uv = np.einsum("ei,ei->e", u, v)
        mu = np.einsum("ei,ei->e", d, u)
        mv = np.einsum("ei,ei->e", d, v)
        det = 1.0 - uv * uv
        ea = (mu - uv * mv) / det
        eb = (mv - uv * mu) / det
        if np.any(ea <= 0) or np.any(eb <= 0):
            raise SplitDegenerate("edge split point fell outside its edge")
        self.edge_ab = np.stack([ea, eb], axis=1)

        # center barycentric weights c = alpha*v0 + beta*v1 + gamma*v2
        self.center_bary = np.einsum("tij,tj->ti", tri.inv_mats, centers)

        # per-triangle-edge orientation: m_j = a*T[j] + b*T[j+1]
        eid = tri.tri_edges
        first_is_lo = T == E[eid, 0]  # T[:, j] compared with edge lo end
        a_or = np.where(first_is_lo, ea[eid], eb[eid])
        b_or = np.where(first_is_lo, eb[eid], ea[eid])
        self.tri_edge_ab = np.stack([a_or, b_or], axis=2)  # (n_t, 3, 2)
        self.tri_edge_side = (~first_is_lo).astype(np.int64)  # 0 if T[j] is lo

        # subtriangle vertex coordinates
        m = self.edge_splits[eid]  # (n_t, 3, 3)
        subs = np.empty((n_t, 6, 3, 3))
        for j in range(3):
            subs[:, 2 * j, 0] = tv[:, j]
            subs[:, 2 * j, 1] = m[:, j]
            subs[:, 2 * j, 2] = centers
            subs[:, 2 * j + 1, 0] = m[:, j]
            subs[:, 2 * j + 1, 1] = tv[:, (j + 1) % 3]
            subs[:, 2 * j + 1, 2] = centers
        subs = subs.reshape(-1, 3, 3)
        omega = _solid_angles(subs[:, 0], subs[:, 1], subs[:, 2])
        if np.any(omega < 1e-14):
            raise SplitDegenerate(f"subtriangle solid angle {omega.min():.2e} < 1e-14")
        if np.any(np.linalg.det(subs) <= 0):
            raise SplitDegenerate("subtriangle with reversed orientation")
        self.sub_vertices = subs
        self.sub_inv_mats = np.linalg.inv(subs.transpose(0, 2, 1))
        self.n_sub = len(subs)

        # ---- global coefficient slots -------------------------------------
        # corners: vertices | edge splits | centers
        # mids: 2 per macro edge (lo->m, m->hi) | vertex spokes | split spokes
        o_esplit = n_v
        o_center = o_esplit + n_e
        o_emid = o_center + n_t
        o_vspoke = o_emid + 2 * n_e
        o_espoke = o_vspoke + 3 * n_t
        self.n_coeff = o_espoke + 3 * n_t
        self.offsets = (o_esplit, o_center, o_emid, o_vspoke, o_espoke)

        idx = np.empty((n_t, 6, 6), dtype=np.int64)
        t_ar = np.arange(n_t)
        for j in range(3):
            jn = (j + 1) % 3
            e_j = eid[:, j]
            side_j = self.tri_edge_side[:, j]
            # (200, 020, 002, 110, 101, 011)
            idx[:, 2 * j, 0] = T[:, j]
            idx[:, 2 * j, 1] = o_esplit + e_j
            idx[:, 2 * j, 2] = o_center + t_ar
            idx[:, 2 * j, 3] = o_emid + 2 * e_j + side_j
            idx[:, 2 * j, 4] = o_vspoke + 3 * t_ar + j
            idx[:, 2 * j, 5] = o_espoke + 3 * t_ar + j
            idx[:, 2 * j + 1, 0] = o_esplit + e_j
            idx[:, 2 * j + 1, 1] = T[:, jn]
            idx[:, 2 * j + 1, 2] = o_center + t_ar
            idx[:, 2 * j + 1, 3] = o_emid + 2 * e_j + (1 - side_j)
            idx[:, 2 * j + 1, 4] = o_espoke + 3 * t_ar + j
            idx[:, 2 * j + 1, 5] = o_vspoke + 3 * t_ar + jn
        self.sub_coeff_idx = idx.reshape(-1, 6)


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------

def locate_scan(tri: SphericalTriangulation, pts):
    """Exhaustive containing-triangle search (oracle; smallest index on ties)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.empty(len(pts), dtype=np.int64)
    chunk = max(1, int(4e7 // max(tri.n_triangles, 1)))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        b = np.einsum("tij,pj->pti", tri.inv_mats, p)
        ok = b.min(axis=2) >= -BARY_TOL
        # smallest containing index; argmax returns the first True
        found = ok.any(axis=1)
        idx = np.argmax(ok, axis=1)
        best = b.min(axis=2).argmax(axis=1)
        out[s : s + chunk] = np.where(found, idx, best)
    return out


def locate_walk(tri: SphericalTriangulation, pts, hints=None, max_steps=None):
    """Walk point location on a spherical triangulation.

    Moves across the edge with the most negative barycentric coordinate until
    the containing triangle is found.  Walks that exceed ``max_steps`` (a
    revisit necessarily happened) fall back to the exhaustive scan.

    Returns (triangle indices, homogeneous barycentric coordinates).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = len(pts)
    if hints is None:
        cur = np.zeros(n, dtype=np.int64)
    else:
        cur = np.broadcast_to(np.asarray(hints, dtype=np.int64), (n,)).copy()
        np.clip(cur, 0, tri.n_triangles - 1, out=cur)
    if max_steps is None:
        max_steps = 4 * int(np.ceil(np.pi / tri.h_max)) + 20
    active = np.arange(n)
    bary = np.empty((n, 3))
    prev = np.full(n, -1, dtype=np.int64)
    for _ in range(max_steps):
        b = np.einsum("tij,tj->ti", tri.inv_mats[cur[active]], pts[active])
        worst = b.argmin(axis=1)
        done = b[np.arange(len(active)), worst] >= -BARY_TOL
        bary[active[done]] = b[done]
        moving = active[~done]
        if len(moving) == 0:
            return cur, bary
        nxt = tri.neighbors_opp[cur[moving], worst[~done]]
        # a 2-cycle means the query straddles an edge numerically: scan it
        cyc = nxt == prev[moving]
        prev[moving] = cur[moving]
        cur[moving] = np.where(cyc, cur[moving], nxt)
        active = moving[~cyc]
        stuck = moving[cyc]
        if len(stuck):
            cur[stuck] = locate_scan(tri, pts[stuck])
            bary[stuck] = np.einsum("tij,tj->ti", tri.inv_mats[cur[stuck]], pts[stuck])
    # leftovers: exhaustive
    cur[active] = locate_scan(tri, pts[active])
    bary[active] = np.einsum("tij,tj->ti", tri.inv_mats[cur[active]], pts[active])
    return cur, bary


def locate_subtriangles(ps: PowellSabinSplit, macro_idx, pts):
    """Resolve the containing PS subtriangle within located macro triangles.

    Returns (subtriangle indices, homogeneous barycentric coordinates).  The
    subtriangle with the largest minimum coordinate wins, which is stable on
    internal boundaries.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    sub0 = 6 * np.asarray(macro_idx, dtype=np.int64)
    cand = sub0[:, None] + np.arange(6)
    b = np.einsum("pcij,pj->pci", ps.sub_inv_mats[cand], pts)
    pick = b.min(axis=2).argmax(axis=1)
    rows = np.arange(len(pts))
    return cand[rows, pick], b[rows, pick]


# ---------------------------------------------------------------------------
# latitude-longitude mesh over the dynamics grid
# ---------------------------------------------------------------------------

class LatLonGridIndex:
    """O(1) containing-triangle query for the dynamics-grid triangulation.

    The column follows from floor(lambda / dlambda); the row from a binary
    search over the (non-uniform) colatitude nodes.  Since great-circle cell
    edges bulge away from the coordinate lines by far less than one row
    spacing, testing the two triangles of the guessed cell and of its row
    neighbors (or the polar fans at the caps) settles the exact triangle by
    barycentric sign.
    """

    def __init__(self, tri, thetas, n_lon, L):
        self.tri = tri
        self.thetas = np.asarray(thetas)
        self.n_lat = len(thetas)
        self.n_lon = n_lon
        self.L = L
        self.t_cells = self.n_lon  # first cell-triangle index
        self.t_south = self.n_lon + 2 * (self.n_lat - 1) * self.n_lon

    def locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = len(pts)
        lam = np.arctan2(pts[:, 1], pts[:, 0]) % (2.0 * np.pi)
        theta = np.arccos(np.clip(pts[:, 2], -1.0, 1.0))
        q = np.minimum((lam * self.n_lon / (2.0 * np.pi)).astype(np.int64), self.n_lon - 1)
        p = np.searchsorted(self.thetas, theta, side="right") - 1
        cand = np.full((n, 8), -1, dtype=np.int64)
        col = 0
        for dp in (-1, 0, 1):
            row = p + dp
            north = row < 0
            south = row >= self.n_lat - 1
            mid = ~(north | south)
            base = self.t_cells + 2 * (row * self.n_lon + q)
            cand[mid, col] = base[mid]
            cand[mid, col + 1] = base[mid] + 1
            cand[north, col] = q[north]  # north fan
            cand[south, col] = self.t_south + q[south]  # south fan
            col += 2
        # evaluate barycentric signs on candidates; -1 slots get -inf score
        safe = np.maximum(cand, 0)
        b = np.einsum("pcij,pj->pci", self.tri.inv_mats[safe], pts)
        score = b.min(axis=2)
        score[cand < 0] = -np.inf
        pick = score.argmax(axis=1)
        rows = np.arange(n)
        out = cand[rows, pick]
        good = score[rows, pick] >= -BARY_TOL
        if not np.all(good):
            out[~good], _ = locate_walk(self.tri, pts[~good], hints=np.maximum(out[~good], 0))
        return out


def build_latlon_triangulation(L, thetas, lambdas):
    """Triangulate the dynamics grid points plus two pole vertices.

    Non-polar cells are split along the (q, p) -> (q+1, p+1) great-circle
    diagonal; the polar caps are closed with triangle fans so splines on this
    mesh are defined on the whole sphere.  Returns the triangulation and its
    fast query index.
    """
    if L < 4:
        raise ValueError("band limit must be >= 4")
    thetas = np.asarray(thetas, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    n_lat, n_lon = len(thetas), len(lambdas)
    st, ct = np.sin(thetas)[:, None], np.cos(thetas)[:, None]
    cl, sl = np.cos(lambdas)[None, :], np.sin(lambdas)[None, :]
    verts = np.empty((n_lat * n_lon + 2, 3))
    verts[: n_lat * n_lon, 0] = (st * cl).ravel()
    verts[: n_lat * n_lon, 1] = (st * sl).ravel()
    verts[: n_lat * n_lon, 2] = np.broadcast_to(ct, (n_lat, n_lon)).ravel()
    i_np, i_sp = n_lat * n_lon, n_lat * n_lon + 1
    verts[i_np] = (0.0, 0.0, 1.0)
    verts[i_sp] = (0.0, 0.0, -1.0)

    def vid(p, q):
        return p * n_lon + q % n_lon

    q = np.arange(n_lon)
    tris = [np.stack([np.full(n_lon, i_np), vid(0, q), vid(0, q + 1)], axis=1)]
    p = np.arange(n_lat - 1)[:, None]
    A, B = vid(p, q[None, :]), vid(p, q[None, :] + 1)
    C, D = vid(p + 1, q[None, :]), vid(p + 1, q[None, :] + 1)
    lower = np.stack([A, C, D], axis=2).reshape(-1, 3)
    upper = np.stack([A, D, B], axis=2).reshape(-1, 3)
    cells = np.empty((2 * len(lower), 3), dtype=np.int64)
    cells[0::2], cells[1::2] = lower, upper
    tris.append(cells)
    tris.append(
        np.stack([np.full(n_lon, i_sp), vid(n_lat - 1, q + 1), vid(n_lat - 1, q)], axis=1)
    )
    tri = SphericalTriangulation(verts, np.concatenate(tris))
    index = LatLonGridIndex(tri, thetas, n_lon, L)
    return tri, index
