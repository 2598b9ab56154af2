"""Coupled evolution: GALS submap transport + spectral velocity reconstruction.

One iteration advances the in-progress submap with a semi-Lagrangian step
(backward RK4 trajectories of a four-point difference stencil, Hermite refit
of the composed map), samples the advected absolute vorticity on the
spectral grid through the composed inverse map, solves for the stream
function, and projects the reconstructed velocity onto the C1 spline space
over the grid triangulation.  Remapping pushes the in-progress submap onto
the stack every ``remap_stride`` steps and restarts it at the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from cmsphere import harmonics as hm
from cmsphere.cases import VorticityCase, make_case
from cmsphere.geometry import (
    DEFAULT_EPSILON,
    NormTooSmall,
    eps_stencil,
    rk4_backward,
    tangential_part,
)
from cmsphere.spheremap import MapStack, identity_map, project_fit
from cmsphere.spline import hermite_fit
from cmsphere.triangulation import (
    PowellSabinSplit,
    build_icosahedral,
    build_latlon_triangulation,
    locate_subtriangles,
    locate_walk,
)

TWO_PI = 2.0 * np.pi


class SolverAbort(RuntimeError):
    """A run died (degenerate map value); carries the failing step index."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class SimConfig:
    """Run parameters.  dt defaults to T / 2^(k+2) (the refinement coupling)."""

    case: str = "rh_wave"
    k: int = 3
    L: int = 64
    T: float = 1.0
    dt: float = None
    remap_stride: int | None = 10
    omega: tuple = (0.0, 0.0, TWO_PI)
    epsilon: float = DEFAULT_EPSILON
    diag_stride: int = 1
    case_params: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.dt is None:
            self.dt = self.T / 2 ** (self.k + 2)
        if self.dt <= 0 or self.T < 2 * self.dt:
            raise ValueError("need dt > 0 and T >= 2 dt (startup covers two steps)")
        if self.remap_stride is not None and self.remap_stride < 1:
            raise ValueError("remap stride must be >= 1 (or None)")
        if self.L < 8:
            raise ValueError("band limit must be >= 8")

    def n_steps(self):
        return int(round(self.T / self.dt))


def _eval_components(ps, coeffs, sub, bary):
    """Evaluate stacked spline components (k, n_coeff) at located points -> (N, k)."""
    b = np.clip(bary, 0.0, None)
    c = coeffs[:, ps.sub_coeff_idx[sub]]  # (k, N, 6)
    b1, b2, b3 = b[:, 0], b[:, 1], b[:, 2]
    out = (
        c[:, :, 0] * b1 * b1
        + c[:, :, 1] * b2 * b2
        + c[:, :, 2] * b3 * b3
        + 2.0 * (c[:, :, 3] * b1 * b2 + c[:, :, 4] * b1 * b3 + c[:, :, 5] * b2 * b3)
    )
    return out.T


class VelocityMesh:
    """Spline machinery over the dynamics grid: triangulation, PS split, fast query.

    Sharable across runs at the same band limit (construction dominates the
    setup cost of a convergence sweep); also carries the spectral transform.
    """

    def __init__(self, grid: hm.DynamicsGrid):
        self.grid = grid
        self.tri, self.index = build_latlon_triangulation(
            grid.L, grid.thetas, grid.lambdas
        )
        self.ps = PowellSabinSplit(self.tri)
        self.pole_points = self.tri.vertices[-2:]
        self._transform = None

    @property
    def transform(self):
        if self._transform is None:
            self._transform = hm.SphericalTransform(self.grid)
        return self._transform

    def locate(self, pts):
        macro = self.index.locate(pts)
        return locate_subtriangles(self.ps, macro, pts)


class VelocitySpline:
    """C1 spline velocity field (three Cartesian components) at one time level."""

    def __init__(self, mesh: VelocityMesh, coeffs, t):
        self.mesh = mesh
        self.coeffs = np.asarray(coeffs)  # (3, n_coeff)
        self.t = float(t)

    def eval(self, pts):
        sub, bary = self.mesh.locate(np.atleast_2d(pts))
        return _eval_components(self.mesh.ps, self.coeffs, sub, bary)


def lagrange_weights(times, t):
    times = np.asarray(times, dtype=float)
    w = np.ones(len(times))
    for i, ti in enumerate(times):
        for j, tj in enumerate(times):
            if j != i:
                w[i] *= (t - tj) / (ti - tj)
    return w


class ExtrapolatedVelocity:
    """Lagrange combination in time of buffered velocity splines.

    Combining the coefficient arrays once per requested time collapses each
    RK4 stage to a single spline evaluation; results are tangentially
    projected (the buffered splines are only tangent at mesh vertices).
    """

    def __init__(self, buffer):
        self.buffer = list(buffer)  # [(t, VelocitySpline), ...]
        self.mesh = self.buffer[0][1].mesh
        self._cache = {}

    def _combined(self, t):
        key = float(t)
        got = self._cache.get(key)
        if got is None:
            w = lagrange_weights([b[0] for b in self.buffer], t)
            got = sum(wi * b[1].coeffs for wi, b in zip(w, self.buffer))
            self._cache[key] = got
        return got

    def __call__(self, pts, t):
        coeffs = self._combined(t)
        sub, bary = self.mesh.locate(pts)
        u = _eval_components(self.mesh.ps, coeffs, sub, bary)
        return tangential_part(u, pts)


def extrapolate_velocity(buffer, t, pts):
    """Functional form of the quadratic-in-time velocity extrapolation."""
    return ExtrapolatedVelocity(buffer)(np.atleast_2d(pts), t)


def rk4_backward_n(u, pts, t_end, dt, n_sub):
    """Backward trajectory over dt split into n_sub RK4 substeps."""
    x = pts
    h = dt / n_sub
    for i in range(n_sub):
        x = rk4_backward(u, x, t_end - i * h, h)
    return x


class Simulation:
    """Owns the meshes, the composed map, the velocity buffer, and diagnostics."""

    def __init__(self, config: SimConfig, case: VorticityCase = None, velocity_mesh=None):
        self.config = config
        self.case = case if case is not None else make_case(
            config.case, omega=config.omega, **config.case_params
        )
        self.omega_vec = np.asarray(self.case.omega, dtype=float)

        self.map_tri = build_icosahedral(config.k)
        self.map_ps = PowellSabinSplit(self.map_tri)
        if velocity_mesh is not None:
            if velocity_mesh.grid.L != config.L:
                raise ValueError("velocity mesh band limit does not match config")
            self.vmesh = velocity_mesh
        else:
            self.vmesh = VelocityMesh(hm.DynamicsGrid(config.L))
        self.grid = self.vmesh.grid
        self.transform = self.vmesh.transform

        self.stencil = eps_stencil(self.map_tri.vertices, config.epsilon).reshape(-1, 3)
        self.stencil_hints = np.repeat(self.map_tri.vertex_tri, 4)

        self_loc, _ = locate_walk(self.map_tri, self.grid.points)
        self._grid_self_loc = self_loc
        self.grid_hints = [self_loc.copy()]

        self.t = 0.0
        self.step_count = 0
        self.stack = MapStack()
        self.inprog = identity_map(self.map_ps, 0.0, 0.0)
        self.buffer = []  # [(t, VelocitySpline)] oldest first
        self.diagnostics = []
        self._f_hat = self.transform.analysis(self.planetary_vorticity(self.grid.points))
        self._e0 = None
        self._z0 = None
        self._bootstrapped = False

    # -- fields ------------------------------------------------------------

    def planetary_vorticity(self, pts):
        return 2.0 * (np.atleast_2d(pts) @ self.omega_vec)

    def sample_vorticity(self, pts, hints=None):
        """Relative vorticity at pts: (zeta0 + f) o X_[t,0] - f."""
        pts = np.atleast_2d(pts)
        labels = self.stack.eval(pts, extra_last=self.inprog, hints=hints)
        return (
            self.case.zeta0(labels)
            + self.planetary_vorticity(labels)
            - self.planetary_vorticity(pts)
        )

    def _grid_vorticity(self):
        samples = self.sample_vorticity(self.grid.points, hints=self.grid_hints)
        return samples.reshape(self.grid.n_lat, self.grid.n_lon)

    # -- velocity reconstruction --------------------------------------------

    def reconstruct_velocity(self):
        """Spectral velocity from the current map chain, projected to splines.

        Returns (VelocitySpline at the current time, vorticity SpectralField).
        """
        zeta = self._grid_vorticity()
        zh = self.transform.analysis(zeta)
        psi = hm.invert_laplacian(zh)
        u_fields = hm.cross_gradient_coeffs(psi)  # velocity components
        grad_fields = []
        for uf in u_fields:
            grad_fields.extend(hm.cross_gradient_coeffs(uf))  # 3 per component
        synth = self.transform.synth_grid_many(list(u_fields) + grad_fields)
        n_pts = self.grid.n_lat * self.grid.n_lon
        u_grid = synth[:3].reshape(3, n_pts).T
        w_grid = synth[3:].reshape(3, 3, n_pts)

        poles = self.vmesh.pole_points
        u_pole = np.stack(
            [hm.synth_at_points(f, poles).real for f in u_fields], axis=1
        )
        w_pole = np.array(
            [[hm.synth_at_points(g, poles).real for g in grad_fields[3 * c : 3 * c + 3]]
             for c in range(3)]
        )  # (3 comp, 3 dir, 2)

        verts = self.vmesh.tri.vertices
        n_v = len(verts)
        values = np.empty((n_v, 3))
        values[: n_pts] = u_grid
        values[n_pts:] = u_pole
        values = tangential_part(values, verts)

        grads = np.empty((n_v, 3, 3))  # vertex, component, xyz
        pts_grid = self.grid.points
        for c in range(3):
            w = w_grid[c].T  # (n_pts, 3)
            grads[:n_pts, c] = np.cross(pts_grid, w)
            grads[n_pts:, c] = np.cross(poles, w_pole[c].T)
        e1, e2 = self.vmesh.tri.frames
        d1 = np.einsum("vci,vi->vc", grads, e1)
        d2 = np.einsum("vci,vi->vc", grads, e2)
        splines = hermite_fit(self.vmesh.ps, values, d1, d2)
        coeffs = np.stack([s.coeffs for s in splines])
        return VelocitySpline(self.vmesh, coeffs, self.t), zh

    # -- GALS submap step ----------------------------------------------------

    def _hermite_from_foot(self, foot):
        """Map values at integrated foot points -> renormalized Hermite data."""
        if self.inprog.is_identity():
            q = foot
        else:
            q, found = self.inprog.eval(
                foot, hints=self.stencil_hints, return_hints=True
            )
            self.stencil_hints = found
        q = q.reshape(-1, 4, 3)
        eps = self.config.epsilon
        vals = q.mean(axis=1)
        d1 = (q[:, 1] - q[:, 0] + q[:, 3] - q[:, 2]) / (4.0 * eps)
        d2 = (q[:, 2] - q[:, 0] + q[:, 3] - q[:, 1]) / (4.0 * eps)
        # the average sits off the sphere by O(eps^2) with a shared radial
        # factor; normalizing the whole triple removes it without touching
        # the tangential truncation error
        nv = np.linalg.norm(vals, axis=1, keepdims=True)
        return vals / nv, d1 / nv, d2 / nv

    def gals_step(self, velocity_model, t_new, t_from=None, n_sub=1):
        """Advance the in-progress submap from t_from (default: now) to t_new."""
        dt = t_new - (self.t if t_from is None else t_from)
        foot = rk4_backward_n(velocity_model, self.stencil, t_new, dt, n_sub)
        if foot is self.stencil or np.array_equal(foot, self.stencil):
            # exactly zero displacement: composing with the identity is a
            # no-op, and skipping the refit avoids injecting O(eps^-1)
            # rounding noise through the difference quotients
            from cmsphere.spheremap import SphereMap

            return SphereMap(
                self.map_ps, self.inprog.splines, self.inprog.t_start, t_new
            )
        vals, d1, d2 = self._hermite_from_foot(foot)
        return project_fit(
            self.map_ps, vals, d1, d2, self.inprog.t_start, t_new
        )

    # -- diagnostics ----------------------------------------------------------

    def _energy_enstrophy(self, zh):
        energy = hm.kinetic_energy(zh)
        omega_hat = hm.SpectralField(zh.L, zh.coeffs + self._f_hat.coeffs)
        return energy, hm.enstrophy(omega_hat)

    def _record(self, zh):
        e, z = self._energy_enstrophy(zh)
        if self._e0 is None:
            self._e0, self._z0 = e, z
        e_err = (e - self._e0) / max(abs(self._e0), 1e-300)
        z_err = (z - self._z0) / max(abs(self._z0), 1e-300)
        self.diagnostics.append(
            {"t": self.t, "energy": e, "enstrophy": z,
             "energy_error": e_err, "enstrophy_error": z_err}
        )

    # -- remapping -------------------------------------------------------------

    def _remap_check(self):
        m = self.config.remap_stride
        if m is None or self.step_count == 0 or self.step_count % m:
            return
        if self.inprog.is_identity():
            return
        self.stack.push(self.inprog)
        self.inprog = identity_map(self.map_ps, self.t, self.t)
        self.grid_hints = [self._grid_self_loc.copy()] + self.grid_hints

    # -- bootstrap ---------------------------------------------------------------

    def bootstrap(self, n_sub=20, correctors=2):
        """Initialize U = [u^0, u^dt, u^2dt] and the submap X_[2dt,0].

        Each startup step integrates trajectories with n_sub RK4 substeps and
        iterates velocity/map self-consistency: predict with the best
        available Lagrange model, reconstruct, correct.
        """
        if self._bootstrapped:
            raise RuntimeError("bootstrap ran already")
        dt = self.config.dt
        u0, zh0 = self.reconstruct_velocity()
        self._record(zh0)
        self.buffer = [(0.0, u0)]
        for s in (1, 2):
            t_old, t_new = (s - 1) * dt, s * dt
            prev_inprog = self.inprog
            nodes = list(self.buffer)
            u_new = None
            for _ in range(1 + correctors):
                model = ExtrapolatedVelocity(
                    nodes + ([(t_new, u_new)] if u_new is not None else [])
                )
                self.inprog = prev_inprog
                new_map = self.gals_step(model, t_new, t_from=t_old, n_sub=n_sub)
                self.inprog = new_map
                self.t = t_new
                u_new, zh = self.reconstruct_velocity()
            self.buffer.append((t_new, u_new))
            self.step_count = s
            self._record(zh)
            self._remap_check()
        self._bootstrapped = True

    # -- main loop ------------------------------------------------------------------

    def advance(self):
        """One full iteration: extrapolate, transport, reconstruct, rotate, remap."""
        dt = self.config.dt
        t_new = self.t + dt
        model = ExtrapolatedVelocity(self.buffer)
        try:
            self.inprog = self.gals_step(model, t_new)
            self.t = t_new
            self.step_count += 1
            u_new, zh = self.reconstruct_velocity()
        except NormTooSmall as exc:
            raise SolverAbort(self.step_count, str(exc)) from exc
        self.buffer = self.buffer[1:] + [(t_new, u_new)]
        if self.step_count % max(self.config.diag_stride, 1) == 0:
            self._record(zh)
        self._remap_check()
        return zh

    def run(self):
        """Bootstrap and iterate to the final time.  Returns self."""
        if not self._bootstrapped:
            self.bootstrap()
        n_total = self.config.n_steps()
        while self.step_count < n_total:
            self.advance()
        return self

    # -- error norms -----------------------------------------------------------------

    def vorticity_sup_error(self, L_err=256):
        """Relative sup-norm vorticity error on the L_err sampling grid.

        Needs an analytic solution; the planetary part cancels so relative
        vorticity is compared directly.
        """
        if self.case.solution is None:
            raise ValueError(f"case {self.case.name} has no analytic solution")
        grid = hm.DynamicsGrid(L_err)
        pts = grid.points
        loc, _ = locate_walk(self.map_tri, pts)
        hints = [loc.copy() for _ in range(len(self.stack) + 1)]
        labels = self.stack.eval(pts, extra_last=self.inprog, hints=hints)
        num = self.case.zeta0(labels) + self.planetary_vorticity(labels) - self.planetary_vorticity(pts)
        exact = self.case.solution(pts, self.t)
        scale = np.abs(exact).max()
        if scale == 0.0:  # identically zero solution: absolute error
            return float(np.abs(num).max())
        return float(np.abs(num - exact).max() / scale)

    def lipschitz_estimate(self):
        """max |grad_tan(zeta_0 + f)| over the run grid (spectral estimate)."""
        total = self.case.zeta0(self.grid.points) + self.planetary_vorticity(self.grid.points)
        g = hm.tangential_gradient(self.transform, self.transform.analysis(total))
        return float(np.linalg.norm(g, axis=1).max())


def run_simulation(config: SimConfig, case=None, velocity_mesh=None) -> Simulation:
    sim = Simulation(config, case=case, velocity_mesh=velocity_mesh)
    return sim.run()
