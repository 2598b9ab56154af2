"""Projected sphere-to-sphere spline maps and their composition stack.

A SphereMap holds the three Cartesian components of the *displacement*
phi(x) - x as C1 splines; evaluation is the normalized sum

    F(x) = (x + s(x)) / ||x + s(x)||.

Storing the displacement rather than the position makes the identity map
exactly representable (all coefficients zero) and lets the fit error of a
short-interval flow scale with the size of its displacement instead of with
the curvature of the coordinate functions.  The inverse map over a long time
interval is a MapStack: an append-only list of submaps over abutting
intervals, applied latest-first.
"""

from __future__ import annotations

import numpy as np

from cmsphere.geometry import NORM_FLOOR, NormTooSmall
from cmsphere.spline import (
    SplineScalar,
    eval_grad_located,
    eval_located,
    frame_derivatives,
    hermite_fit,
)
from cmsphere.triangulation import locate_subtriangles, locate_walk


def identity_hermite_data(tri):
    """Hermite data of the identity map: vertex coordinates and frame vectors.

    Returns (values, d1, d2) with component axes trailing: values (N_v, 3),
    d1/d2 (N_v, 3) where d1[v, c] = e1[v]_c.
    """
    e1, e2 = tri.frames
    return tri.vertices.copy(), e1.copy(), e2.copy()


class SphereMap:
    """Discretized map of the sphere over a time interval [t_start, t_end]."""

    def __init__(self, ps, displacement_splines, t_start=0.0, t_end=0.0):
        self.ps = ps
        self.splines = list(displacement_splines)
        if len(self.splines) != 3:
            raise ValueError("a sphere map needs three displacement components")
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self._identity = all(not np.any(s.coeffs) for s in self.splines)

    @property
    def coeffs(self):
        return np.stack([s.coeffs for s in self.splines])

    def is_identity(self):
        return self._identity

    def eval(self, pts, hints=None, return_hints=False):
        """Evaluate the map at points on the sphere.

        Raises NormTooSmall when the raw spline value degenerates (a
        diagnosable blow-up of the run, not a recoverable state).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._identity:
            return (pts, hints) if return_hints else pts
        macro, _ = locate_walk(self.ps.tri, pts, hints=hints)
        sub, bary = locate_subtriangles(self.ps, macro, pts)
        raw = pts + np.stack(
            [eval_located(s, sub, bary) for s in self.splines], axis=-1
        )
        n = np.linalg.norm(raw, axis=-1, keepdims=True)
        if not np.all(n > NORM_FLOOR):
            raise NormTooSmall(f"map value norm {n.min():.3e} at t={self.t_end}")
        out = raw / n
        if return_hints:
            return out, macro
        return out

    def eval_raw_norm(self, pts):
        """Norm of the un-projected spline value (conditioning diagnostic)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        macro, _ = locate_walk(self.ps.tri, pts)
        sub, bary = locate_subtriangles(self.ps, macro, pts)
        raw = pts + np.stack(
            [eval_located(s, sub, bary) for s in self.splines], axis=-1
        )
        return np.linalg.norm(raw, axis=-1)

    def jacobian_det(self, pts):
        """Determinant of the projected differential in tangent frames.

        The differential of P(r(x)) applied to a tangent vector a is
        (I - FF^T)(a + Ds a)/||r||; expressing it between the frames at x and
        at F(x) gives a 2x2 matrix whose determinant is positive for
        orientation-preserving maps (identically 1 for the identity).
        """
        from cmsphere.geometry import tangent_frame

        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        macro, _ = locate_walk(self.ps.tri, pts)
        sub, bary = locate_subtriangles(self.ps, macro, pts)
        raw = pts + np.stack(
            [eval_located(s, sub, bary) for s in self.splines], axis=-1
        )
        rn = np.linalg.norm(raw, axis=-1)
        if np.any(rn <= NORM_FLOOR):
            raise NormTooSmall("degenerate map value in jacobian_det")
        img = raw / rn[:, None]
        a1, a2 = tangent_frame(pts)
        b1, b2 = tangent_frame(img)
        grads = [eval_grad_located(s, sub, bary, pts) for s in self.splines]
        cols = []
        for a in (a1, a2):
            w = a + np.stack([np.einsum("pi,pi->p", g, a) for g in grads], axis=-1)
            cols.append(w / rn[:, None])
        m11 = np.einsum("pi,pi->p", b1, cols[0])
        m12 = np.einsum("pi,pi->p", b1, cols[1])
        m21 = np.einsum("pi,pi->p", b2, cols[0])
        m22 = np.einsum("pi,pi->p", b2, cols[1])
        return m11 * m22 - m12 * m21


def identity_map(ps, t_start=0.0, t_end=0.0):
    """The identity map: zero displacement, represented exactly."""
    zero = np.zeros(ps.n_coeff)
    return SphereMap(
        ps, [SplineScalar(ps, zero.copy()) for _ in range(3)], t_start, t_end
    )


def project_fit(ps, values, d1, d2, t_start=0.0, t_end=0.0):
    """Fit a SphereMap from per-vertex map values and frame derivative pairs.

    values: (N_v, 3) map values (on or near the sphere); d1, d2: (N_v, 3)
    directional derivatives of each component along the vertex frame.  The
    identity's data is subtracted so the displacement is what gets fitted;
    fitting the identity data therefore returns the exact identity.
    """
    iv, i1, i2 = identity_hermite_data(ps.tri)
    splines = hermite_fit(ps, values - iv, d1 - i1, d2 - i2)
    return SphereMap(ps, splines, t_start, t_end)


class MapStack:
    """Composed inverse map: ordered submaps over abutting time intervals.

    Evaluation applies the LAST submap first, then earlier ones.  The stack
    is append-only; submaps are immutable once pushed.
    """

    def __init__(self, submaps=()):
        self.submaps = list(submaps)
        for a, b in zip(self.submaps, self.submaps[1:]):
            if abs(a.t_end - b.t_start) > 1e-12:
                raise ValueError("submap intervals must abut")

    def __len__(self):
        return len(self.submaps)

    def push(self, submap):
        if self.submaps and abs(self.submaps[-1].t_end - submap.t_start) > 1e-9:
            raise ValueError("submap interval does not abut the stack")
        self.submaps.append(submap)

    def eval(self, pts, extra_last=None, hints=None):
        """Evaluate the composition at pts; optionally prepend an in-progress map.

        ``hints`` is an optional list of per-submap walk hints (latest first,
        starting with extra_last when given); it is updated in place so
        repeated evaluation at slowly moving point sets stays O(1).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        chain = ([extra_last] if extra_last is not None else []) + self.submaps[::-1]
        out = pts
        for i, sm in enumerate(chain):
            if sm.is_identity():
                continue
            h = None if hints is None else hints[i]
            try:
                out, found = sm.eval(out, hints=h, return_hints=True)
            except NormTooSmall as exc:
                raise NormTooSmall(f"submap {i} of {len(chain)}: {exc}") from exc
            if hints is not None:
                hints[i] = found
        return out


def serialize_map_stack(stack, extra_last=None, meta=None):
    """Deterministic binary dump of a map stack; round-trips exactly."""
    from cmsphere.binio import pack_arrays

    chain = list(stack.submaps) + ([extra_last] if extra_last is not None else [])
    arrays = {"times": np.array([[sm.t_start, sm.t_end] for sm in chain]).reshape(-1, 2)}
    for i, sm in enumerate(chain):
        arrays[f"coeffs_{i}"] = sm.coeffs
    return pack_arrays(arrays, meta={"n_submaps": len(chain), **(meta or {})})


def deserialize_map_stack(data, ps):
    """Inverse of serialize_map_stack; needs the (reconstructed) PS split."""
    from cmsphere.binio import unpack_arrays

    arrays, meta = unpack_arrays(data)
    times = arrays["times"]
    maps = []
    for i in range(int(meta["n_submaps"])):
        splines = [SplineScalar(ps, c) for c in arrays[f"coeffs_{i}"]]
        maps.append(SphereMap(ps, splines, times[i, 0], times[i, 1]))
    return MapStack(maps), meta
