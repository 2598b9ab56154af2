"""Command-line driver: batch runs, convergence sweeps, upsampling, spectra.

Subcommands: run, converge, upsample, spectrum, mesh-dump.
Exit codes: 0 ok, 2 configuration error, 3 solver abort.

The run configuration is a flat ``key = value`` text file ('#' comments).
Case-specific parameters use the ``case.<name>`` prefix and are forwarded to
the case constructor.  Unknown top-level keys are rejected.  Example::

    case = rh_wave
    k = 3
    L = 64
    T = 1.0
    dt = auto
    remap_stride = 10
    omega = 0.0 0.0 6.283185307179586
    epsilon = 1e-5
    L_err = 256
    diag_stride = 1
    output_dir = out
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from cmsphere import harmonics as hm
from cmsphere.cases import make_case
from cmsphere.dynamics import SimConfig, Simulation, SolverAbort
from cmsphere.geometry import NormTooSmall
from cmsphere.spheremap import deserialize_map_stack, serialize_map_stack
from cmsphere.triangulation import PowellSabinSplit, build_icosahedral, build_latlon_triangulation


class ConfigError(ValueError):
    pass


_DEFAULT_OMEGA = (0.0, 0.0, 2.0 * np.pi)


@dataclass
class RunConfig:
    case: str = "rh_wave"
    k: int = 3
    L: int = 64
    T: float = 1.0
    dt: float | None = None
    remap_stride: int | None = 10
    omega: tuple = _DEFAULT_OMEGA
    epsilon: float = 1e-5
    L_err: int = 256
    diag_stride: int = 1
    output_dir: str = "."
    case_params: dict = dataclass_field(default_factory=dict)


def _parse_value(key, text):
    text = text.strip()
    if key in ("k", "L", "L_err", "diag_stride"):
        return int(text)
    if key in ("T", "epsilon"):
        return float(text)
    if key == "dt":
        return None if text.lower() in ("auto", "none") else float(text)
    if key == "remap_stride":
        return None if text.lower() in ("none", "inf") else int(text)
    if key == "omega":
        parts = [float(p) for p in text.replace(",", " ").split()]
        if len(parts) != 3:
            raise ConfigError("omega needs three components")
        return tuple(parts)
    if key in ("case", "output_dir"):
        return text
    raise ConfigError(f"unknown key '{key}'")


def _parse_case_param(text):
    text = text.strip()
    try:
        as_int = int(text)
        return as_int
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config(text):
    cfg = RunConfig()
    seen = set()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {ln}: duplicate key '{key}'")
        seen.add(key)
        if key.startswith("case."):
            cfg.case_params[key[5:]] = _parse_case_param(val)
            continue
        if not hasattr(cfg, key) or key == "case_params":
            raise ConfigError(f"line {ln}: unknown key '{key}'")
        try:
            setattr(cfg, key, _parse_value(key, val))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {ln}: bad value for '{key}': {exc}") from exc
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = [
        f"case = {cfg.case}",
        f"k = {cfg.k}",
        f"L = {cfg.L}",
        f"T = {cfg.T!r}",
        "dt = auto" if cfg.dt is None else f"dt = {cfg.dt!r}",
        "remap_stride = none" if cfg.remap_stride is None else f"remap_stride = {cfg.remap_stride}",
        "omega = " + " ".join(repr(float(c)) for c in cfg.omega),
        f"epsilon = {cfg.epsilon!r}",
        f"L_err = {cfg.L_err}",
        f"diag_stride = {cfg.diag_stride}",
        f"output_dir = {cfg.output_dir}",
    ]
    for key in sorted(cfg.case_params):
        lines.append(f"case.{key} = {cfg.case_params[key]!r}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def build_simulation(cfg: RunConfig) -> Simulation:
    case = make_case(cfg.case, omega=cfg.omega, **cfg.case_params)
    sim_cfg = SimConfig(
        case=cfg.case, k=cfg.k, L=cfg.L, T=cfg.T, dt=cfg.dt,
        remap_stride=cfg.remap_stride, omega=case.omega,
        epsilon=cfg.epsilon, diag_stride=cfg.diag_stride,
        case_params=dict(cfg.case_params),
    )
    return Simulation(sim_cfg, case=case)


# ---------------------------------------------------------------------------
# file formats (all text output uses repr floats: shortest exact round-trip)
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_diagnostics_csv(path, diagnostics):
    cols = ["t", "energy", "enstrophy", "energy_error", "enstrophy_error"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in diagnostics:
            f.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def write_grid_dump(path, grid, samples, meta):
    samples = np.asarray(samples).reshape(grid.n_lat, grid.n_lon)
    with open(path, "w") as f:
        f.write("# cmsphere grid dump\n")
        f.write(f"# L = {grid.L}\n")
        for key in sorted(meta):
            f.write(f"# {key} = {meta[key]}\n")
        f.write("p,q,colatitude,longitude,value\n")
        for p in range(grid.n_lat):
            th = _fmt(grid.thetas[p])
            for q in range(grid.n_lon):
                f.write(f"{p},{q},{th},{_fmt(grid.lambdas[q])},{_fmt(samples[p, q])}\n")


def read_grid_dump(path):
    L = None
    meta = {}
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = (s.strip() for s in body.split("=", 1))
                    meta[key] = val
                    if key == "L":
                        L = int(val)
                continue
            if line.strip() and not line.startswith("p,"):
                rows.append(line.strip().split(","))
    if L is None:
        raise ConfigError("grid dump lacks an '# L = ...' header")
    grid = hm.DynamicsGrid(L)
    samples = np.zeros((grid.n_lat, grid.n_lon))
    for p, q, _th, _lam, val in rows:
        samples[int(p), int(q)] = float(val)
    return grid, samples, meta


def write_spectrum_csv(path, l, e):
    with open(path, "w") as f:
        f.write("l,energy\n")
        for li, ei in zip(l, e):
            f.write(f"{int(li)},{_fmt(ei)}\n")


def write_checkpoint(path, sim: Simulation, cfg: RunConfig):
    # the embedded config rebuilds the case and meshes on reload; the output
    # path is irrelevant to that and would break byte-reproducibility
    from dataclasses import replace

    meta = {
        "config": format_config(replace(cfg, output_dir=".")),
        "t": sim.t,
        "k": sim.config.k,
        "L": sim.config.L,
        "case": sim.case.name,
    }
    blob = serialize_map_stack(sim.stack, extra_last=sim.inprog, meta=meta)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Rebuild (map stack incl. in-progress, case, config, t) from a checkpoint."""
    from cmsphere.spheremap import MapStack

    data = Path(path).read_bytes()
    cfg = parse_config(_checkpoint_meta(data)["config"])
    tri = build_icosahedral(cfg.k)
    ps = PowellSabinSplit(tri)
    stack, meta = deserialize_map_stack(data, ps)
    case = make_case(cfg.case, omega=cfg.omega, **cfg.case_params)
    return stack, case, cfg, float(meta["t"]), tri


def _checkpoint_meta(data):
    from cmsphere.binio import unpack_arrays

    _, meta = unpack_arrays(data)
    return meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args):
    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = build_simulation(cfg)
    sim.run()
    write_diagnostics_csv(out / "diagnostics.csv", sim.diagnostics)
    zeta = sim.sample_vorticity(sim.grid.points)
    write_grid_dump(
        out / "vorticity_final.csv", sim.grid, zeta,
        {"case": cfg.case, "t": _fmt(sim.t), "field": "relative_vorticity"},
    )
    write_checkpoint(out / "checkpoint.bin", sim, cfg)
    d = sim.diagnostics[-1]
    err_lines = [
        "metric,value",
        f"energy_error,{_fmt(d['energy_error'])}",
        f"enstrophy_error,{_fmt(d['enstrophy_error'])}",
    ]
    if sim.case.solution is not None:
        err_lines.append(
            f"vorticity_sup_error,{_fmt(sim.vorticity_sup_error(L_err=cfg.L_err))}"
        )
    (out / "errors.csv").write_text("\n".join(err_lines) + "\n")
    print(f"run complete: t={sim.t}, outputs in {out}")
    return 0


def cmd_converge(args):
    from cmsphere.experiments import convergence_sweep

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    strides = []
    if args.modes in ("remap", "both"):
        strides.append(args.stride)
    if args.modes in ("single", "both"):
        strides.append(None)
    rows, slopes = convergence_sweep(
        args.case, ks=range(args.k_min, args.k_max + 1), strides=strides,
        T=args.T, L_err=args.L_err, verbose=True,
    )
    cols = ["case", "k", "h", "L", "n_steps", "remap_stride", "T",
            "vorticity_error", "energy_error", "enstrophy_error", "runtime_s"]
    with open(out / "convergence.csv", "w") as f:
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(str(r[c]) for c in cols) + "\n")
    with open(out / "orders.csv", "w") as f:
        f.write("mode,norm,order\n")
        for (mode, norm), val in sorted(slopes.items()):
            f.write(f"{mode},{norm},{_fmt(val)}\n")
    for (mode, norm), val in sorted(slopes.items()):
        print(f"{args.case} {mode} {norm}: order {val:.2f}")
    return 0


def cmd_upsample(args):
    from cmsphere.experiments import spectrum_of_samples

    stack, case, cfg, t, tri = load_checkpoint(args.checkpoint)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = hm.DynamicsGrid(args.L_target)
    from cmsphere.triangulation import locate_walk

    loc, _ = locate_walk(tri, grid.points)
    hints = [loc.copy() for _ in range(len(stack))]
    labels = stack.eval(grid.points, hints=hints)
    omega_vec = np.asarray(case.omega)
    omega0 = case.zeta0(labels) + 2.0 * (labels @ omega_vec)
    samples = omega0.reshape(grid.n_lat, grid.n_lon)
    write_grid_dump(
        out / f"upsample_L{args.L_target}.csv", grid, samples,
        {"case": case.name, "t": _fmt(t), "field": "absolute_vorticity"},
    )
    l, e = spectrum_of_samples(grid, samples)
    write_spectrum_csv(out / f"spectrum_L{args.L_target}.csv", l, e)
    if args.zoom:
        lam0, th0, width, n = args.zoom
        n = int(n)
        lam = lam0 + width * (np.arange(n) / (n - 1) - 0.5)
        th = th0 + width * (np.arange(n) / (n - 1) - 0.5)
        th = np.clip(th, 1e-9, np.pi - 1e-9)
        LA, TH = np.meshgrid(lam, th)
        pts = np.stack(
            [np.sin(TH) * np.cos(LA), np.sin(TH) * np.sin(LA), np.cos(TH)], axis=-1
        ).reshape(-1, 3)
        zoom_labels = stack.eval(pts)
        vals = case.zeta0(zoom_labels) + 2.0 * (zoom_labels @ omega_vec)
        with open(out / "zoom.csv", "w") as f:
            f.write(f"# center = {lam0} {th0}\n# width = {width}\n")
            f.write("colatitude,longitude,value\n")
            for (thi, lai), v in zip(
                np.stack([TH.ravel(), LA.ravel()], axis=1), vals
            ):
                f.write(f"{_fmt(thi)},{_fmt(lai)},{_fmt(v)}\n")
    print(f"upsampled to L={args.L_target}, outputs in {out}")
    return 0


def cmd_spectrum(args):
    from cmsphere.experiments import spectrum_of_samples

    grid, samples, _meta = read_grid_dump(args.grid_dump)
    l, e = spectrum_of_samples(grid, samples)
    write_spectrum_csv(args.output, l, e)
    print(f"wrote spectrum of {args.grid_dump} to {args.output}")
    return 0


def cmd_mesh_dump(args):
    if args.latlon_L:
        grid = hm.DynamicsGrid(args.latlon_L)
        tri, _ = build_latlon_triangulation(grid.L, grid.thetas, grid.lambdas)
    else:
        tri = build_icosahedral(args.k)
    Path(args.output).write_text(tri.to_json())
    print(f"wrote mesh ({tri.n_vertices} vertices, {tri.n_triangles} triangles)")
    return 0


def make_parser():
    p = argparse.ArgumentParser(prog="cmsphere", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("run", help="run a simulation from a config file")
    q.add_argument("config")
    q.add_argument("--output-dir", default=None)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("converge", help="refinement sweep with the N_t=2^(k+2), L=2^(k+3) coupling")
    q.add_argument("case")
    q.add_argument("--k-min", type=int, default=1)
    q.add_argument("--k-max", type=int, default=4)
    q.add_argument("--modes", choices=["remap", "single", "both"], default="both")
    q.add_argument("--stride", type=int, default=10)
    q.add_argument("--T", type=float, default=0.5)
    q.add_argument("--L-err", type=int, default=256)
    q.add_argument("--output-dir", default="converge_out")
    q.set_defaults(func=cmd_converge)

    q = sub.add_parser("upsample", help="sample a checkpointed map beyond its run band limit")
    q.add_argument("checkpoint")
    q.add_argument("--L-target", type=int, required=True)
    q.add_argument("--output-dir", default="upsample_out")
    q.add_argument("--zoom", nargs=4, type=float, metavar=("LON", "COLAT", "WIDTH", "N"),
                   default=None, help="also dump an N x N window around (LON, COLAT)")
    q.set_defaults(func=cmd_upsample)

    q = sub.add_parser("spectrum", help="energy spectrum of a vorticity grid dump")
    q.add_argument("grid_dump")
    q.add_argument("--output", default="spectrum.csv")
    q.set_defaults(func=cmd_spectrum)

    q = sub.add_parser("mesh-dump", help="JSON dump of a triangulation")
    g = q.add_mutually_exclusive_group()
    g.add_argument("--k", type=int, default=2, help="icosahedral refinement level")
    g.add_argument("--latlon-L", type=int, default=None, help="dynamics-grid mesh instead")
    q.add_argument("--output", default="mesh.json")
    q.set_defaults(func=cmd_mesh_dump)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverAbort, NormTooSmall) as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
