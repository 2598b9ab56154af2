"""Scalar spherical-harmonic transforms, Poisson inversion, and angular-momentum calculus.

Conventions
-----------
Colatitude theta in [0, pi] (theta = 0 at the north pole), longitude lambda in
[0, 2pi).  Basis functions are the standard orthonormal spherical harmonics

    Y_l^m(lambda, theta) = Pb_l^m(cos theta) e^{i m lambda},

where Pb includes the Condon-Shortley phase and the full L2(S^2)
normalization, so the ladder operators act with positive coefficients:
L_pm Y_l^m = sqrt(l(l+1) - m(m+-1)) Y_l^{m+-1} and L_z Y_l^m = m Y_l^m.

The dynamics grid couples Gauss-Legendre colatitudes (exact quadrature for
band-limit L) with 2L-1 uniform longitudes; both directions integrate
products of band-limited functions exactly, so analysis inverts synthesis on
band-limited data to round-off.

Coefficients are stored dense and complex with shape (L, 2L-1); column
m + L - 1 holds order m.  Real fields satisfy c[l,-m] = (-1)^m conj(c[l,m]),
which is an enforced invariant of analysis output, not a storage constraint.
"""

from __future__ import annotations

import numpy as np

_TABLE_MAX_L = 300  # cache Legendre tables below this band limit


class SpectralField:
    """Dense spherical-harmonic coefficients up to band limit L (exclusive)."""

    __slots__ = ("L", "coeffs")

    def __init__(self, L, coeffs=None):
        self.L = int(L)
        if coeffs is None:
            self.coeffs = np.zeros((self.L, 2 * self.L - 1), dtype=complex)
        else:
            coeffs = np.asarray(coeffs, dtype=complex)
            if coeffs.shape != (self.L, 2 * self.L - 1):
                raise ValueError("coefficient array has wrong shape")
            self.coeffs = coeffs

    def copy(self):
        return SpectralField(self.L, self.coeffs.copy())

    def get(self, l, m):
        return self.coeffs[l, m + self.L - 1]

    def set(self, l, m, value):
        if abs(m) > l:
            raise IndexError("|m| must be <= l")
        self.coeffs[l, m + self.L - 1] = value

    def conjugate_symmetry_residual(self):
        """Max |c[l,-m] - (-1)^m conj(c[l,m])| over the triangle."""
        L = self.L
        res = 0.0
        for m in range(L):
            sgn = -1.0 if m % 2 else 1.0
            a = self.coeffs[m:, L - 1 + m]
            b = self.coeffs[m:, L - 1 - m]
            res = max(res, float(np.abs(b - sgn * np.conj(a)).max(initial=0.0)))
        return res

    def is_real_symmetric(self, tol=1e-10):
        scale = max(float(np.abs(self.coeffs).max(initial=0.0)), 1.0)
        return self.conjugate_symmetry_residual() <= tol * scale

    def l_degrees(self):
        return np.arange(self.L)

    def power_per_degree(self):
        """sum_m |c_lm|^2 for each degree."""
        return np.sum(np.abs(self.coeffs) ** 2, axis=1)

    def total_power(self):
        return float(np.sum(np.abs(self.coeffs) ** 2))


def invert_laplacian(zeta: SpectralField) -> SpectralField:
    """Stream function of a vorticity field: psi_lm = zeta_lm / (l(l+1)).

    The l = 0 row is dropped (zero-mean gauge); with this sign the spectral
    surface Laplacian of psi is -zeta for mean-free zeta.
    """
    L = zeta.L
    ll1 = np.arange(L) * (np.arange(L) + 1.0)
    ll1[0] = 1.0
    out = zeta.coeffs / ll1[:, None]
    out[0, :] = 0.0
    return SpectralField(L, out)


def laplacian(f: SpectralField) -> SpectralField:
    """Spectral surface Laplacian: multiply degree l by -l(l+1)."""
    ll1 = -np.arange(f.L) * (np.arange(f.L) + 1.0)
    return SpectralField(f.L, f.coeffs * ll1[:, None])


def _ladder_kappa(L):
    """kappa[l, col(m)] = sqrt(l(l+1) - m(m+1)), zero outside |m| <= l."""
    l = np.arange(L)[:, None]
    m = np.arange(-(L - 1), L)[None, :]
    val = l * (l + 1.0) - m * (m + 1.0)
    val[(m < -l) | (m > l - 1)] = 0.0
    return np.sqrt(np.maximum(val, 0.0))


def cross_gradient_coeffs(f: SpectralField):
    """Coefficients of the three components of grad(f) x position.

    grad(f) x x = -i L f with L = -i x x grad the angular momentum operator;
    component-wise u_c = -i (L_c f) using L_x = (L+ + L-)/2,
    L_y = (L+ - L-)/(2i), L_z with eigenvalue m.  For the stream function
    this is exactly the rotational velocity u = -grad_perp(psi); applying
    x x (.) to the synthesized vectors recovers the tangential gradient.
    """
    L = f.L
    c = f.coeffs
    kap = _ladder_kappa(L)
    plus = np.zeros_like(c)
    minus = np.zeros_like(c)
    plus[:, 1:] = kap[:, :-1] * c[:, :-1]  # (L+ f)_m = kappa(l, m-1) f_{m-1}
    minus[:, :-1] = kap[:, :-1] * c[:, 1:]  # (L- f)_m = kappa(l, m) f_{m+1}
    m = np.arange(-(L - 1), L)[None, :].astype(float)
    ux = SpectralField(L, -0.5j * (plus + minus))
    uy = SpectralField(L, -0.5 * (plus - minus))
    uz = SpectralField(L, -1j * m * c)
    return ux, uy, uz


def energy_spectrum(zeta: SpectralField):
    """Per-degree energies E(l) = sum_m |zeta_lm|^2 / (l(l+1)), l >= 1.

    Returns (degrees l = 1..L-1, energies); their sum is the kinetic energy
    of the rotational velocity field induced by zeta.
    """
    power = zeta.power_per_degree()
    l = np.arange(1, zeta.L)
    return l, power[1:] / (l * (l + 1.0))


def kinetic_energy(zeta: SpectralField) -> float:
    _, e = energy_spectrum(zeta)
    return float(e.sum())


def enstrophy(omega: SpectralField) -> float:
    """Integral of omega^2 over the sphere (Parseval)."""
    return omega.total_power()


# ---------------------------------------------------------------------------
# associated Legendre recurrence
# ---------------------------------------------------------------------------

def _legendre_blocks(L, x):
    """Yield (m, block) with block[i, p] = Pb_{m+i}^m(x_p), i = 0..L-1-m.

    Fully normalized stable three-term recurrence, increasing l at fixed m.
    """
    x = np.asarray(x, dtype=float)
    st = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    pmm = np.full_like(x, np.sqrt(1.0 / (4.0 * np.pi)))
    for m in range(L):
        block = np.empty((L - m, len(x)))
        block[0] = pmm
        if L - m > 1:
            block[1] = np.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, L):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            lp = l - 1.0
            b = np.sqrt((4.0 * lp * lp - 1.0) / (lp * lp - m * m))
            block[l - m] = a * (x * block[l - m - 1] - block[l - m - 2] / b)
        yield m, block
        if m < L - 1:
            pmm = -np.sqrt((2.0 * m + 3.0) / (2.0 * m + 2.0)) * st * pmm


# ---------------------------------------------------------------------------
# dynamics grid and transforms
# ---------------------------------------------------------------------------

class DynamicsGrid:
    """Gauss-Legendre x uniform-longitude sampling grid for band limit L.

    n_lat = L colatitudes (GL nodes in cos theta, pole-free, theta ascending),
    n_lon = 2L - 1 longitudes lambda_q = 2 pi q / n_lon.  The associated
    quadrature integrates products of band-limited functions exactly.
    """

    def __init__(self, L):
        if L < 4:
            raise ValueError("band limit must be >= 4")
        self.L = int(L)
        self.n_lat = self.L
        self.n_lon = 2 * self.L - 1
        x, w = np.polynomial.legendre.leggauss(self.n_lat)
        order = np.argsort(-x)  # theta ascending = x descending
        self.cos_theta = x[order]
        self.gl_weights = w[order]
        self.thetas = np.arccos(self.cos_theta)
        self.lambdas = 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon
        st = np.sin(self.thetas)
        cl, sl = np.cos(self.lambdas), np.sin(self.lambdas)
        pts = np.empty((self.n_lat, self.n_lon, 3))
        pts[:, :, 0] = st[:, None] * cl[None, :]
        pts[:, :, 1] = st[:, None] * sl[None, :]
        pts[:, :, 2] = self.cos_theta[:, None]
        self.points = pts.reshape(-1, 3)
        self.point_weights = np.repeat(
            self.gl_weights * (2.0 * np.pi / self.n_lon), self.n_lon
        )

    def quadrature(self, samples):
        """Integrate grid samples over the sphere."""
        return float(np.sum(np.asarray(samples).reshape(-1) * self.point_weights))


class SphericalTransform:
    """Forward/backward spherical-harmonic transform on a DynamicsGrid."""

    def __init__(self, grid: DynamicsGrid):
        self.grid = grid
        self.L = grid.L
        self._tables = None
        if self.L <= _TABLE_MAX_L:
            self._tables = [
                blk for _, blk in _legendre_blocks(self.L, grid.cos_theta)
            ]

    def _blocks(self):
        if self._tables is not None:
            return enumerate(self._tables)
        return _legendre_blocks(self.L, self.grid.cos_theta)

    def analysis(self, samples) -> SpectralField:
        """Spherical-harmonic coefficients of real samples on the grid.

        samples: (n_lat, n_lon) or flattened.  Exact for band-limited input.
        """
        g = self.grid
        s = np.asarray(samples, dtype=float).reshape(g.n_lat, g.n_lon)
        F = np.fft.rfft(s, axis=1) * (2.0 * np.pi / g.n_lon)
        WF = g.gl_weights[:, None] * F  # (n_lat, L)
        L = self.L
        out = np.zeros((L, 2 * L - 1), dtype=complex)
        for m, blk in self._blocks():
            col = blk @ WF[:, m]
            out[m:, L - 1 + m] = col
            if m > 0:
                out[m:, L - 1 - m] = (-1.0 if m % 2 else 1.0) * np.conj(col)
        return SpectralField(L, out)

    def analysis_many(self, samples):
        """Batched analysis: samples (k, n_lat, n_lon) -> list of SpectralFields."""
        g = self.grid
        s = np.asarray(samples, dtype=float).reshape(-1, g.n_lat, g.n_lon)
        F = np.fft.rfft(s, axis=2) * (2.0 * np.pi / g.n_lon)
        WF = g.gl_weights[None, :, None] * F
        L = self.L
        out = np.zeros((len(s), L, 2 * L - 1), dtype=complex)
        for m, blk in self._blocks():
            col = np.einsum("lp,kp->kl", blk, WF[:, :, m])
            out[:, m:, L - 1 + m] = col
            out[:, m:, L - 1 - m] = (-1.0 if m % 2 else 1.0) * np.conj(col)
        return [SpectralField(L, c) for c in out]

    def synth_grid(self, field: SpectralField):
        """Real samples of a (conjugate-symmetric) field on the grid."""
        return self.synth_grid_many([field])[0]

    def synth_grid_many(self, fields):
        g, L = self.grid, self.L
        cs = np.stack([f.coeffs for f in fields])
        S = np.zeros((len(fields), g.n_lat, L), dtype=complex)
        for m, blk in self._blocks():
            S[:, :, m] = np.einsum("lp,kl->kp", blk, cs[:, m:, L - 1 + m])
        return np.fft.irfft(S * g.n_lon, n=g.n_lon, axis=2)

    def synth_points(self, field: SpectralField, pts):
        return synth_at_points(field, pts)

    def synth_points_real(self, field, pts):
        return synth_at_points(field, pts).real


def synth_at_points(field: SpectralField, pts):
    """Pointwise synthesis at arbitrary unit vectors (complex values).

    O(N L^2); intended for initial conditions and oracles, not the per-step
    grid work.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x = np.clip(pts[:, 2], -1.0, 1.0)
    lam = np.arctan2(pts[:, 1], pts[:, 0])
    L = field.L
    out = np.zeros(len(pts), dtype=complex)
    eil = np.exp(1j * lam)
    phase = np.ones_like(eil)
    for m, blk in _legendre_blocks(L, x):
        tm = np.einsum("l,lp->p", field.coeffs[m:, L - 1 + m], blk)
        if m == 0:
            out += tm
        else:
            tneg = np.einsum("l,lp->p", field.coeffs[m:, L - 1 - m], blk)
            sgn = -1.0 if m % 2 else 1.0
            out += tm * phase + sgn * tneg * np.conj(phase)
        phase = phase * eil
    return out


def basis_function(L, l, m):
    """SpectralField with a single unit coefficient at (l, m)."""
    f = SpectralField(L)
    f.set(l, m, 1.0)
    return f


def tangential_gradient(transform: SphericalTransform, field: SpectralField, pts=None):
    """Tangential surface gradient of a real field.

    With w = grad(f) x x synthesized from cross_gradient_coeffs, the gradient
    is x cross w.  When pts is None the grid itself is used and an array of
    shape (n_lat*n_lon, 3) is returned.
    """
    ux, uy, uz = cross_gradient_coeffs(field)
    if pts is None:
        w = transform.synth_grid_many([ux, uy, uz])
        g = transform.grid
        w = w.reshape(3, -1).T
        pts = g.points
    else:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        w = np.stack(
            [transform.synth_points(c, pts).real for c in (ux, uy, uz)], axis=-1
        )
    return np.cross(pts, w)


def velocity_from_stream(transform: SphericalTransform, psi: SpectralField, pts=None):
    """Rotational velocity u = grad(psi) x x (equivalently -grad_perp psi)."""
    ux, uy, uz = cross_gradient_coeffs(psi)
    if pts is None:
        w = transform.synth_grid_many([ux, uy, uz])
        return w.reshape(3, -1).T
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return np.stack(
        [transform.synth_points(c, pts).real for c in (ux, uy, uz)], axis=-1
    )
