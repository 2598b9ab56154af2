"""Sphere primitives: projections, tangent frames, difference stencils, RK4 trajectories.

All operations act on Cartesian coordinates of points on the embedded unit
sphere and are vectorized over a leading batch axis: a "point" argument is an
array of shape (..., 3).  Everything here is pure; velocity callables must be
read-only during integration.
"""

from __future__ import annotations

import numpy as np

NORM_FLOOR = 1e-8
DEFAULT_EPSILON = 1e-5


class NormTooSmall(ValueError):
    """Raised when a vector to be projected onto the sphere is degenerate.

    During a run this signals a corrupt spline-map value (blow-up) rather
    than a situation that should be silently normalized away.
    """


def project_to_sphere(p, norm_floor=NORM_FLOOR):
    """Radially project points onto the unit sphere (p / ||p||).

    Raises NormTooSmall if any norm is at or below ``norm_floor`` (NaN norms
    count as degenerate: they signal a corrupt value upstream).
    """
    p = np.asarray(p, dtype=float)
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    if not np.all(n > norm_floor):
        bad = np.argwhere(~(n[..., 0] > norm_floor))
        raise NormTooSmall(f"norm {n.min():.3e} <= {norm_floor:.1e} at index {bad[0]}")
    return p / n


def tangent_frame(v):
    """Deterministic orthonormal tangent frame (e1, e2) at unit vectors v.

    e1 = normalize(a × v) with a = z-hat, falling back to a = x-hat where
    |v·z| > 1 - 1e-6; e2 = v × e1.  (e1, e2, v) is right-handed, so
    e1 × e2 = v.  The same v always yields the identical frame.
    """
    v = np.asarray(v, dtype=float)
    a = np.zeros_like(v)
    polar = np.abs(v[..., 2]) > 1.0 - 1e-6
    a[..., 2] = np.where(polar, 0.0, 1.0)
    a[..., 0] = np.where(polar, 1.0, 0.0)
    e1 = np.cross(a, v)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(v, e1)
    return e1, e2


def eps_stencil(v, epsilon=DEFAULT_EPSILON):
    """Four-point difference stencil about each vertex v.

    Returns an array of shape v.shape[:-1] + (4, 3) holding the points
    normalize(v ± eps*e1 ± eps*e2) in the fixed order
    (-,-), (+,-), (-,+), (+,+) with respect to the frame (e1, e2) of
    ``tangent_frame``.  epsilon = 0 returns four copies of v.
    """
    v = np.asarray(v, dtype=float)
    e1, e2 = tangent_frame(v)
    s1 = epsilon * e1
    s2 = epsilon * e2
    pts = np.stack([v - s1 - s2, v + s1 - s2, v - s1 + s2, v + s1 + s2], axis=-2)
    return pts / np.linalg.norm(pts, axis=-1, keepdims=True)


def tangential_part(u, x):
    """Component of u tangent to the sphere at x: u - (u·x)x."""
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    return u - np.sum(u * x, axis=-1, keepdims=True) * x


def rk4_step(u, x, t_start, dt_signed):
    """One classical RK4 step of dx/ds = u(x, s) from t_start by dt_signed.

    Intermediate stage points are projected back to the sphere before the
    velocity is evaluated, and the final point is projected as well; the
    radial drift of the stages is of the same order as the local truncation
    error so the projection does not degrade the scheme.
    """
    h = dt_signed
    k1 = u(x, t_start)
    k2 = u(project_to_sphere(x + 0.5 * h * k1), t_start + 0.5 * h)
    k3 = u(project_to_sphere(x + 0.5 * h * k2), t_start + 0.5 * h)
    k4 = u(project_to_sphere(x + h * k3), t_start + h)
    if not (np.any(k1) or np.any(k2) or np.any(k3) or np.any(k4)):
        return x  # exactly zero field: the trajectory is constant, bitwise
    return project_to_sphere(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def rk4_backward(u, x, t_end, dt):
    """Integrate the characteristic ODE backward: from (x, t_end) to t_end - dt.

    ``u(points, t)`` must return tangent vectors of the same shape as points.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return rk4_step(u, np.asarray(x, dtype=float), t_end, -dt)


def rk4_forward(u, x, t_start, dt):
    """Forward counterpart of rk4_backward (same scheme, positive step)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return rk4_step(u, np.asarray(x, dtype=float), t_start, dt)


class TangentialVelocity:
    """Wrap a raw velocity callable, enforcing tangency on evaluation.

    The wrapped callable receives points already on the sphere; its return
    value is projected onto the tangent plane so that |u·x| <= 1e-12 ||u||.
    """

    def __init__(self, func):
        self._func = func

    def __call__(self, x, t):
        return tangential_part(np.asarray(self._func(x, t), dtype=float), x)
