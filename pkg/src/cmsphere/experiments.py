"""Reusable experiment drivers: convergence sweeps and sub-grid upsampling.

These back both the CLI subcommands and the acceptance suite.  Meshes and
transforms are cached per band limit so a sweep pays construction costs once.
"""

from __future__ import annotations

import time

import numpy as np

from cmsphere import harmonics as hm
from cmsphere.cases import make_case
from cmsphere.dynamics import SimConfig, Simulation, VelocityMesh

ICO_H = {k: 1.10715 * 2.0 ** (-k) for k in range(9)}  # nominal mesh sizes for fits


class MeshCache:
    def __init__(self):
        self._meshes = {}

    def velocity_mesh(self, L):
        if L not in self._meshes:
            self._meshes[L] = VelocityMesh(hm.DynamicsGrid(L))
        return self._meshes[L]


def fit_order(hs, errs):
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.maximum(np.asarray(errs, dtype=float), 1e-300)
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def run_convergence_case(case_name, k, remap_stride, T, L_err=256,
                         cache=None, case_params=None, omega=None):
    """One convergence run with the refinement coupling N_t=2^(k+2), L=2^(k+3).

    Returns a result row with the standard error norms: relative sup
    vorticity error (when an analytic solution exists) and the relative
    energy/enstrophy drifts at the final time.
    """
    kwargs = dict(case_params or {})
    if omega is not None:
        kwargs["omega"] = tuple(omega)
    case = make_case(case_name, **kwargs)
    cfg = SimConfig(
        case=case_name, k=k, L=2 ** (k + 3), T=T,
        remap_stride=remap_stride, omega=case.omega,
        case_params=kwargs,
    )
    vmesh = cache.velocity_mesh(cfg.L) if cache is not None else None
    t0 = time.time()
    sim = Simulation(cfg, case=case, velocity_mesh=vmesh)
    sim.run()
    row = {
        "case": case_name,
        "k": k,
        "h": sim.map_tri.h_max,
        "L": cfg.L,
        "n_steps": cfg.n_steps(),
        "remap_stride": remap_stride,
        "T": T,
        "energy_error": abs(sim.diagnostics[-1]["energy_error"]),
        "enstrophy_error": abs(sim.diagnostics[-1]["enstrophy_error"]),
        "runtime_s": time.time() - t0,
        "vorticity_error": np.nan,
        "lipschitz": sim.lipschitz_estimate(),
        "sup_zeta0": float(np.abs(case.zeta0(sim.grid.points)).max()),
    }
    if case.solution is not None:
        row["vorticity_error"] = sim.vorticity_sup_error(L_err=L_err)
    return row, sim


def convergence_sweep(case_name, ks=(1, 2, 3, 4), strides=(10, None), T=0.5,
                      L_err=256, cache=None, case_params=None, verbose=False):
    """Sweep refinement levels for both remapping modes; returns rows + slopes.

    Slopes are least-squares fits of log error against log mesh size, one per
    (stride, error norm).
    """
    cache = cache if cache is not None else MeshCache()
    rows = []
    slopes = {}
    for stride in strides:
        sub = []
        for k in ks:
            row, _ = run_convergence_case(
                case_name, k, stride, T, L_err=L_err, cache=cache,
                case_params=case_params,
            )
            sub.append(row)
            rows.append(row)
            if verbose:
                print(
                    f"{case_name} m={stride} k={k}: vort={row['vorticity_error']:.3e} "
                    f"energy={row['energy_error']:.3e} enstrophy={row['enstrophy_error']:.3e} "
                    f"({row['runtime_s']:.0f}s)",
                    flush=True,
                )
        hs = [r["h"] for r in sub]
        key = "m%s" % ("inf" if stride is None else stride)
        if not np.isnan(sub[0]["vorticity_error"]):
            slopes[key, "vorticity"] = fit_order(hs, [r["vorticity_error"] for r in sub])
        slopes[key, "energy"] = fit_order(hs, [r["energy_error"] for r in sub])
        slopes[key, "enstrophy"] = fit_order(hs, [r["enstrophy_error"] for r in sub])
    return rows, slopes


# ---------------------------------------------------------------------------
# sub-grid upsampling
# ---------------------------------------------------------------------------

def upsample_vorticity(sim: Simulation, L_target):
    """Sample the advected absolute vorticity on the band-limit-L_target grid.

    The target may exceed the run's band limit; the composed map carries the
    sub-grid content.  Returns (grid, samples (n_lat, n_lon)).
    """
    grid = hm.DynamicsGrid(L_target)
    from cmsphere.triangulation import locate_walk

    loc, _ = locate_walk(sim.map_tri, grid.points)
    hints = [loc.copy() for _ in range(len(sim.stack) + 1)]
    labels = sim.stack.eval(grid.points, extra_last=sim.inprog, hints=hints)
    omega0 = sim.case.zeta0(labels) + sim.planetary_vorticity(labels)
    return grid, omega0.reshape(grid.n_lat, grid.n_lon)


def spectrum_of_samples(grid, samples):
    tf = hm.SphericalTransform(grid)
    field = tf.analysis(samples)
    return hm.energy_spectrum(field)


def spectral_slope(l, e, l_lo, l_hi):
    """Log-log least-squares slope of the energy spectrum over [l_lo, l_hi]."""
    sel = (l >= l_lo) & (l <= l_hi) & (e > 0)
    return float(np.polyfit(np.log(l[sel]), np.log(e[sel]), 1)[0])


def upsampling_experiment(seed, k=4, L=128, T=1.5, remap_stride=20, dt=None,
                          L_target=512, band=(30, 200), cache=None):
    """Random-vorticity run upsampled beyond the run band limit.

    Returns a result dict with the spectrum slope over ``band`` at L_target,
    and the max-amplitude growth between run-grid and upsampled sampling
    (a smoothness check: pointwise sampling of the composed pullback must not
    ring).
    """
    case = make_case("random_vorticity", seed=seed)
    cfg = SimConfig(
        case="random_vorticity", k=k, L=L, T=T, dt=dt,
        remap_stride=remap_stride, omega=case.omega,
        case_params={"seed": seed},
    )
    vmesh = cache.velocity_mesh(L) if cache is not None else None
    sim = Simulation(cfg, case=case, velocity_mesh=vmesh)
    sim.run()
    grid_run, samples_run = upsample_vorticity(sim, L)
    grid_up, samples_up = upsample_vorticity(sim, L_target)
    l_up, e_up = spectrum_of_samples(grid_up, samples_up)
    return {
        "seed": seed,
        "slope": spectral_slope(l_up, e_up, *band),
        "max_run": float(np.abs(samples_run).max()),
        "max_up": float(np.abs(samples_up).max()),
        "spectrum": (l_up, e_up),
        "sim": sim,
    }
