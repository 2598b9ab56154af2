"""Initial vorticity distributions and their analytic references.

All angles follow the grid convention: theta is COLATITUDE in [0, pi]
(theta = 0 at the north pole), lambda is longitude in [0, 2pi).  Evaluators
take Cartesian points of shape (N, 3) so no case ever touches a coordinate
singularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cmsphere.harmonics import SpectralField, synth_at_points

DEFAULT_OMEGA = (0.0, 0.0, 2.0 * np.pi)


@dataclass
class VorticityCase:
    """A named initial condition with optional analytic references.

    zeta0(points) gives the initial relative vorticity; solution(points, t),
    when present, is the exact relative vorticity at time t; velocity(points,
    t) the exact rotating-frame velocity; dzeta_dt(points, t) the exact time
    derivative (used by the equation-residual test).
    """

    name: str
    zeta0: callable
    omega: tuple = DEFAULT_OMEGA
    solution: callable = None
    velocity: callable = None
    dzeta_dt: callable = None
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Rossby-Haurwitz wave: relative vorticity 30 cos(theta) sin^4(theta) cos(4 lambda')
# with lambda' = lambda - nu t, a pure (l=5, m=+-4) harmonic travelling at
# nu = -2 Omega_z / (l (l+1)).
# ---------------------------------------------------------------------------

def _rh_polys(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    A = x**4 - 6.0 * x * x * y * y + y**4          # rho^4 cos 4 lambda
    B = 4.0 * x * y * (x * x - y * y)              # rho^4 sin 4 lambda
    return x, y, z, A, B


def rh_wave(omega=DEFAULT_OMEGA, amplitude=30.0):
    if omega[0] != 0.0 or omega[1] != 0.0:
        raise ValueError("the travelling RH wave needs a z-aligned rotation axis")
    nu = -2.0 * omega[2] / 30.0  # l = 5

    def zeta(p, t=0.0):
        _, _, z, A, B = _rh_polys(np.atleast_2d(p))
        c, s = np.cos(4.0 * nu * t), np.sin(4.0 * nu * t)
        return amplitude * z * (A * c + B * s)

    def velocity(p, t=0.0):
        p = np.atleast_2d(p)
        x, y, z, A, B = _rh_polys(p)
        c, s = np.cos(4.0 * nu * t), np.sin(4.0 * nu * t)
        ax = 4.0 * x**3 - 12.0 * x * y * y
        ay = -12.0 * x * x * y + 4.0 * y**3
        bx = 12.0 * x * x * y - 4.0 * y**3
        by = 4.0 * x**3 - 12.0 * x * y * y
        # psi = zeta / (l(l+1)); ambient gradient of the degree-5 polynomial
        gx = amplitude / 30.0 * z * (ax * c + bx * s)
        gy = amplitude / 30.0 * z * (ay * c + by * s)
        gz = amplitude / 30.0 * (A * c + B * s)
        grad = np.stack([gx, gy, gz], axis=1)
        return np.cross(grad, p)

    def dzdt(p, t=0.0):
        _, _, z, A, B = _rh_polys(np.atleast_2d(p))
        c, s = np.cos(4.0 * nu * t), np.sin(4.0 * nu * t)
        return amplitude * z * 4.0 * nu * (-A * s + B * c)

    return VorticityCase(
        name="rh_wave",
        zeta0=lambda p: zeta(p, 0.0),
        omega=tuple(omega),
        solution=zeta,
        velocity=velocity,
        dzeta_dt=dzdt,
        params={"nu": nu, "amplitude": amplitude},
    )


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotated_rh_wave(tilt=np.pi / 3.0, amplitude=30.0):
    """Non-rotating RH profile in axes tilted by ``tilt`` about the y-axis.

    With Omega = 0 the phase speed vanishes and the field is steady; the tilt
    exercises coordinate-free behaviour (the spectrum stays pure l = 5).
    """
    R = rotation_y(tilt)
    base = rh_wave(omega=(0.0, 0.0, 0.0), amplitude=amplitude)

    def zeta(p, t=0.0):
        return base.zeta0(np.atleast_2d(p) @ R)  # rows p R = R^T p

    def velocity(p, t=0.0):
        p = np.atleast_2d(p)
        return base.velocity(p @ R, 0.0) @ R.T

    return VorticityCase(
        name="rotated_rh_wave",
        zeta0=zeta,
        omega=(0.0, 0.0, 0.0),
        solution=zeta,
        velocity=velocity,
        dzeta_dt=lambda p, t=0.0: np.zeros(len(np.atleast_2d(p))),
        params={"tilt": tilt, "pole": (np.sin(tilt), 0.0, np.cos(tilt))},
    )


def gaussian_vortex(center=(1.0, 0.0, 0.0), omega=DEFAULT_OMEGA):
    """zeta_0 = 4 pi exp(-16 ||x - x_c||^2); no analytic solution (conservation only)."""
    xc = np.asarray(center, dtype=float)

    def zeta0(p):
        p = np.atleast_2d(p)
        return 4.0 * np.pi * np.exp(-16.0 * np.sum((p - xc) ** 2, axis=1))

    return VorticityCase(
        name="gaussian_vortex", zeta0=zeta0, omega=tuple(omega), params={"center": center}
    )


# ---------------------------------------------------------------------------
# zonal jets
# ---------------------------------------------------------------------------

def jet_speed_profile(theta, beta=12.0, theta_c=np.pi / 4.0):
    """Nominal jet speed (pi/2) exp(-2 beta^2 (1 - sin(theta + theta_c)))."""
    return 0.5 * np.pi * np.exp(-2.0 * beta * beta * (1.0 - np.sin(theta + theta_c)))


def _jet_zeta(theta, theta_c, beta):
    u = jet_speed_profile(theta, beta, theta_c)
    return np.sin(theta) * (
        2.0 * beta * beta * (np.cos(theta_c) * np.cos(theta) - np.sin(theta_c) * np.sin(theta))
        + np.cos(theta)
    ) * u


def _colat(p):
    return np.arccos(np.clip(np.atleast_2d(p)[:, 2], -1.0, 1.0))


def zonal_jet(beta=12.0, theta_c=np.pi / 4.0, omega=DEFAULT_OMEGA):
    """Single zonal jet.  Any zonal vorticity is a steady solution when the
    rotation axis is z-aligned, so the analytic solution is zeta_0 itself.

    The steady velocity is derived from zeta_0 by exact zonal quadrature
    u(theta) = (1/sin theta) int_0^theta (zeta_0 - mean) sin dtheta', the
    rotational field of the mean-free vorticity.
    """

    def zeta0(p):
        return _jet_zeta(_colat(p), theta_c, beta)

    # dense cumulative quadrature for the zonal velocity oracle
    n = 16384
    tg = np.linspace(0.0, np.pi, n + 1)
    integ = _jet_zeta(tg, theta_c, beta) * np.sin(tg)
    dtheta = tg[1] - tg[0]
    total = float(np.sum(0.5 * (integ[1:] + integ[:-1])) * dtheta)
    mean = total / 2.0  # (1/4pi) * 2pi * integral
    integ = integ - mean * np.sin(tg)
    cumulative = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integ[1:] + integ[:-1]) * dtheta)]
    )

    def velocity(p, t=0.0):
        p = np.atleast_2d(p)
        theta = _colat(p)
        rho = np.hypot(p[:, 0], p[:, 1])
        speed = np.interp(theta, tg, cumulative)
        with np.errstate(invalid="ignore", divide="ignore"):
            speed = np.where(rho > 1e-12, speed / np.maximum(rho, 1e-300), 0.0)
        east = np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)
        with np.errstate(invalid="ignore"):
            east = np.where(rho[:, None] > 1e-12, east / np.maximum(rho, 1e-300)[:, None], 0.0)
        return speed[:, None] * east

    return VorticityCase(
        name="zonal_jet",
        zeta0=zeta0,
        omega=tuple(omega),
        solution=lambda p, t=0.0: zeta0(p),
        velocity=velocity,
        dzeta_dt=lambda p, t=0.0: np.zeros(len(np.atleast_2d(p))),
        params={"beta": beta, "theta_c": theta_c},
    )


def multi_jet(omega=DEFAULT_OMEGA, perturbation=0.01, wavenumber=12):
    """Two perturbed jets: centerlines pi/4 + 0.01 cos(12 lambda) and
    3 pi/8 + 0.01 cos(12 lambda).  Unsteady; experiment driver only."""
    beta = 12.0

    def zeta0(p):
        p = np.atleast_2d(p)
        theta = _colat(p)
        lam = np.arctan2(p[:, 1], p[:, 0])
        wobble = perturbation * np.cos(wavenumber * lam)
        return _jet_zeta(theta, np.pi / 4.0 + wobble, beta) + _jet_zeta(
            theta, 3.0 * np.pi / 8.0 + wobble, beta
        )

    return VorticityCase(
        name="multi_jet",
        zeta0=zeta0,
        omega=tuple(omega),
        params={"beta": beta, "perturbation": perturbation, "wavenumber": wavenumber},
    )


def random_vorticity(seed=0, lmax=20, amplitude=5.0, omega=(0.0, 0.0, 0.0)):
    """Band-limited random field: degrees 1..lmax, all orders filled, real and
    imaginary coefficient parts uniform on [-amplitude, amplitude], conjugate
    symmetry enforced (m = 0 purely real), l = 0 zero.  Seeded and bit
    reproducible."""
    rng = np.random.default_rng(seed)
    L = lmax + 1
    f = SpectralField(L)
    for l in range(1, lmax + 1):
        f.set(l, 0, rng.uniform(-amplitude, amplitude))
        for m in range(1, l + 1):
            v = rng.uniform(-amplitude, amplitude) + 1j * rng.uniform(-amplitude, amplitude)
            f.set(l, m, v)
            f.set(l, -m, (-1.0 if m % 2 else 1.0) * np.conj(v))

    def zeta0(p):
        return synth_at_points(f, p).real

    case = VorticityCase(
        name="random_vorticity",
        zeta0=zeta0,
        omega=tuple(omega),
        params={"seed": seed, "lmax": lmax, "amplitude": amplitude},
    )
    case.spectral_ic = f
    return case


def zero_vorticity(omega=DEFAULT_OMEGA):
    """Identically zero relative vorticity: the flow must stay at rest and the
    planetary part must cancel exactly in the pullback."""
    zero = lambda p, t=0.0: np.zeros(len(np.atleast_2d(p)))
    return VorticityCase(
        name="zero", zeta0=zero, omega=tuple(omega), solution=zero,
        velocity=lambda p, t=0.0: np.zeros_like(np.atleast_2d(p)),
        dzeta_dt=zero,
    )


def solid_body(amplitude=2.0, omega=DEFAULT_OMEGA):
    """zeta_0 = amplitude * z: rigid rotation about the z-axis, steady for any
    z-aligned planetary rotation."""

    def zeta(p, t=0.0):
        return amplitude * np.atleast_2d(p)[:, 2]

    def velocity(p, t=0.0):
        p = np.atleast_2d(p)
        return 0.5 * amplitude * np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)

    return VorticityCase(
        name="solid_body", zeta0=zeta, omega=tuple(omega), solution=zeta,
        velocity=velocity, dzeta_dt=lambda p, t=0.0: np.zeros(len(np.atleast_2d(p))),
        params={"amplitude": amplitude},
    )


_BUILDERS = {
    "rh_wave": rh_wave,
    "rotated_rh_wave": rotated_rh_wave,
    "gaussian_vortex": gaussian_vortex,
    "zonal_jet": zonal_jet,
    "multi_jet": multi_jet,
    "random_vorticity": random_vorticity,
    "zero": zero_vorticity,
    "solid_body": solid_body,
}


def make_case(name, **kwargs):
    """Build a case by name; unknown names raise KeyError.

    The rotated RH wave is non-rotating by construction, so a passed omega is
    accepted only if it is zero.
    """
    if name not in _BUILDERS:
        raise KeyError(f"unknown case '{name}'; pick one of {sorted(_BUILDERS)}")
    if name == "rotated_rh_wave":
        omega = kwargs.pop("omega", (0.0, 0.0, 0.0))
        if np.any(np.asarray(omega)):
            raise ValueError("rotated_rh_wave is defined for omega = 0")
    return _BUILDERS[name](**kwargs)
