"""Command-line entry point: ks {pde, particles, experiment, kernel-check}.

Exit codes: 0 success; 2 configuration error; 3 model blow-up detected by the
monitor (a reported scientific result, not a crash); 4 numerical failure.
Every run writes a resolved-config copy and a manifest into the output
directory before heavy computation starts.  KS_SEED overrides seed keys.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, config as cfgmod, grid as gridmod, harness, particles, pde
from .config import ConfigError
from .errors import KsError, NumericalBlowup
from .grid import GridField
from .kernel import (CoulombKernel, Cutoff, Mollifier, build_kernel_table,
                     coulomb_eval, cutoff_apply)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_NUMERICAL = 4


def _initial_field(cfg: cfgmod.PdeRunConfig) -> GridField:
    if cfg.init == "gaussian":
        return gridmod.gaussian_field(cfg.m_grid, cfg.half_width, cfg.init_sigma,
                                      mass=cfg.init_mass, d=cfg.d)
    if cfg.init == "constant":
        return gridmod.constant_field(cfg.m_grid, cfg.half_width, cfg.init_value,
                                      d=cfg.d)
    if cfg.init == "delta":
        return gridmod.delta_field(cfg.m_grid, cfg.half_width, mass=cfg.init_mass,
                                   d=cfg.d)
    raise ConfigError(f"unknown init kind: {cfg.init!r}")


def _write_resolved(sections: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.toml"), "w") as fh:
        fh.write(cfgmod.dump_config(sections))


def _write_manifest(out_dir: str, payload: dict):
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_pde(cfg: cfgmod.PdeRunConfig, out_dir: str) -> int:
    u0 = _initial_field(cfg)
    params = pde.PdeParams(chi=cfg.chi, nu=cfg.nu, mu=cfg.mu, d=cfg.d)
    monitor = pde.BlowupMonitor.from_initial(u0, factor=cfg.blowup_factor)
    snaps = list(np.linspace(0.0, cfg.t_end, cfg.n_snapshots))
    try:
        traj = pde.solve(u0, params, cfg.t_end, cfg.dt, monitor=monitor,
                         snapshot_times=snaps, r_norm=cfg.r_norm)
    except NumericalBlowup as exc:
        _write_manifest(out_dir, {"version": __version__, "status": "numerical-failure",
                                  "error": str(exc)})
        print(f"ks pde: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    with open(os.path.join(out_dir, "norms.csv"), "w") as fh:
        fh.write("t,l1,lr,linf,kconv_linf,a_running\n")
        for rec in traj.norms:
            fh.write(",".join(format(rec[k], ".17g") for k in
                              ("t", "l1", "lr", "linf", "kconv_linf", "a_running"))
                     + "\n")
    for i, (t, f) in enumerate(zip(traj.times, traj.fields)):
        np.savez(os.path.join(out_dir, f"snapshot_{i:04d}.npz"),
                 values=f.values, t=t, m=f.m, half_width=f.half_width, d=f.d,
                 chi=cfg.chi, nu=cfg.nu, mu=cfg.mu)
    fired = traj.monitor.triggered_at is not None
    _write_manifest(out_dir, {
        "version": __version__,
        "status": "blow-up-detected" if fired else "completed",
        "monitor": {"threshold": traj.monitor.threshold,
                    "triggered_at": traj.monitor.triggered_at},
        "a_t": traj.a_threshold(),
        "sup_linf": traj.sup_linf,
        "clipped_mass": traj.clipped_mass,
        "n_steps": traj.n_steps,
        "snapshots": len(traj.times),
    })
    if fired:
        print(f"ks pde: blow-up detected at t={traj.monitor.triggered_at:.6g}")
        return EXIT_BLOWUP
    return EXIT_OK


def _run_particles(cfg: cfgmod.ParticleRunConfig, out_dir: str) -> int:
    # snap the step count to the snapshot lattice so both align exactly
    blocks = max(cfg.n_snapshots - 1, 1)
    n_steps = max(blocks, int(round(cfg.t_end / cfg.dt)))
    n_steps = ((n_steps + blocks - 1) // blocks) * blocks
    dt_eff = cfg.t_end / n_steps
    params = particles.ParticleParams(
        chi=cfg.chi, nu=cfg.nu, mu=cfg.mu, alpha=cfg.alpha, a_cutoff=cfg.cutoff_a,
        dt=dt_eff, d=cfg.d, max_particles_factor=cfg.max_particles_factor,
    )
    init = particles.sample_gaussian_initial(cfg.n, cfg.init_sigma,
                                             seed=cfg.seed ^ 0x5EED, d=cfg.d)
    template = GridField(np.zeros((cfg.m_grid,) * cfg.d), cfg.half_width)
    snaps = [cfg.t_end * k / blocks for k in range(cfg.n_snapshots)]
    result = particles.simulate(init, params, cfg.t_end, snaps,
                                rng_seed=cfg.seed, grid_template=template)
    with open(os.path.join(out_dir, "positions.csv"), "w") as fh:
        fh.write("t,label," + ",".join(f"x_{j+1}" for j in range(cfg.d)) + "\n")
        for t, pop, _ in result.snapshots:
            for lab, x in zip(pop.labels(), pop.positions):
                fh.write(f"{t:.17g},{lab}," + ",".join(format(v, ".17g") for v in x) + "\n")
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write("t,m,births,deaths\n")
        s = result.summary
        for i in range(len(s["t"])):
            fh.write(f'{s["t"][i]:.17g},{s["mass"][i]:.17g},'
                     f'{int(s["births"][i])},{int(s["deaths"][i])}\n')
    last = result.snapshots[-1][1]
    _write_manifest(out_dir, {
        "version": __version__, "status": "completed", "seed": cfg.seed,
        "n_initial": cfg.n, "dt_effective": dt_eff, "final_mass": last.mass,
        "births": last.births, "deaths": last.deaths, "divisions": last.divisions,
        "boundary_crossings": last.boundary_crossings,
    })
    return EXIT_OK


def _run_experiment(cfg: cfgmod.ExperimentRunConfig, out_dir: str) -> int:
    plan = harness.ExperimentPlan.from_config(cfg)
    report = harness.run_experiment(plan, threads=cfg.threads,
                                    resolution_check=cfg.resolution_check)
    harness.write_report(report, out_dir, threads=cfg.threads)
    slope = report.sup_slope[0] if report.sup_slope else float("nan")
    print(f"ks experiment: sup-error slope {slope:.4f} "
          f"(theory rho={report.rho:.4f}, {report.rho_branch} branch)")
    return EXIT_OK


def kernel_check(d: int = 2, m_grid: int = 256, corrupt_table: bool = False) -> list:
    """Kernel invariant suite; returns [(name, passed, detail), ...]."""
    tol = 1e-6 if d == 2 else 1e-4
    checks = []
    kern = CoulombKernel(d)

    vol = {2: np.pi, 3: 4.0 * np.pi / 3.0}.get(d)
    if vol is not None:
        checks.append(("normalization c_d = d*vol(B1)",
                       abs(kern.c_d - d * vol) < 1e-12, f"c_d={kern.c_d:.12g}"))

    x = np.zeros(d)
    x[0] = 1.0
    val = coulomb_eval(kern, x)
    expect = -1.0 / kern.c_d
    checks.append(("point value K(e_1) = -e_1/c_d",
                   abs(val[0] - expect) < 1e-14 and np.allclose(val[1:], 0.0),
                   f"{val[0]:.8g} vs {expect:.8g}"))

    sigma = 0.5
    g = gridmod.gaussian_field(m_grid, 4.0, sigma, d=d)
    gz = g.with_values(g.values - g.values.mean())
    kc = gridmod.kernel_convolve(gz)
    from scipy import fft as sfft
    ops = gridmod._ops(gz)
    div = sum(sfft.irfftn(1j * ops.kvec[j] * sfft.rfftn(kc[j]), s=gz.values.shape)
              for j in range(d))
    rel = float(np.linalg.norm(-div - gz.values) / np.linalg.norm(gz.values))
    checks.append((f"divergence identity at {m_grid}^{d}", rel <= tol, f"rel={rel:.3e}"))

    moll = Mollifier(1 / 6, 1024, d)
    h_t = moll.radius / (8 if d == 2 else 8)
    table = build_kernel_table(kern, moll, 1.5, h_t)
    if corrupt_table:
        samples = table.samples.copy()
        samples[(1,) * d + (0,)] += 0.5  # deliberate fault for the test hook
        object.__setattr__(table, "samples", samples)
    c = table.n_side // 2
    anti = float(np.abs(table.samples + table.samples[(slice(None, None, -1),) * d]).max())
    scale = float(np.abs(table.samples).max())
    checks.append(("table antisymmetry about the origin",
                   anti <= 1e-12 * max(scale, 1.0), f"max |T(x)+T(-x)|={anti:.3e}"))
    origin = float(np.abs(table.samples[(c,) * d]).max())
    checks.append(("table vanishes at the origin", origin == 0.0, f"|T(0)|={origin:.3e}"))

    far = np.zeros(d)
    far[0] = 3.0 * moll.radius
    tv = table.lookup(far)
    av = coulomb_eval(kern, far)
    rel_far = float(np.linalg.norm(tv - av) / np.linalg.norm(av))
    checks.append(("far field matches the bare kernel (3 mollifier radii)",
                   rel_far <= 1e-3, f"rel={rel_far:.3e}"))

    total = moll.mass_within(moll.radius)
    checks.append(("mollifier unit mass", abs(total - 1.0) <= 1e-10,
                   f"mass={total:.12g}"))

    cut = Cutoff(5.0)
    pts = np.array([3.0, 7.0, -6.5])
    out = cutoff_apply(cut, pts)
    checks.append(("cutoff point values (3 -> 3, 7 -> 5, -6.5 -> -5)",
                   np.allclose(out, [3.0, 5.0, -5.0]), f"{out}"))
    rng = np.random.default_rng(0)
    u, v = rng.normal(0, 4, (2, 10_000, d))
    lip = np.abs(cut.apply(u) - cut.apply(v)).max(axis=-1) <= \
        np.abs(u - v).max(axis=-1) + 1e-15
    checks.append(("cutoff is 1-Lipschitz on 10^4 random pairs", bool(lip.all()),
                   f"{int(lip.sum())}/10000"))
    return checks


def _run_kernel_check(args) -> int:
    checks = kernel_check(d=args.d, m_grid=args.m_grid,
                          corrupt_table=args.corrupt_table)
    width = max(len(name) for name, _, _ in checks)
    failed = 0
    for name, ok, detail in checks:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
        if not ok:
            failed += 1
    print(f"{len(checks) - failed}/{len(checks)} kernel checks passed")
    return EXIT_OK if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ks", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True)

    def add_run(name, helptext):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="path to the config file")
        p.add_argument("--out", "-o", required=True, help="output directory")
        p.add_argument("--override", action="append", default=[],
                       help="section.key=value (repeatable)")
        return p

    add_run("pde", "solve the PDE and write snapshots + norms")
    add_run("particles", "simulate the branching particle system")
    add_run("experiment", "paired PDE/particle convergence experiment")

    pk = sub.add_parser("kernel-check", help="run the kernel invariant suite")
    pk.add_argument("--d", type=int, default=2, choices=(2, 3))
    pk.add_argument("--m-grid", type=int, default=None)
    pk.add_argument("--corrupt-table", action="store_true",
                    help=argparse.SUPPRESS)  # fault-injection hook for tests
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.mode == "kernel-check":
        if args.m_grid is None:
            args.m_grid = 256 if args.d == 2 else 64
        return _run_kernel_check(args)
    try:
        sections = cfgmod.load_config(args.config)
        sections = cfgmod.apply_overrides(sections, args.override)
        if args.mode not in sections:
            raise ConfigError(f"config has no [{args.mode}] section")
        cfg = cfgmod.typed_section(sections, args.mode)
        seed_env = os.environ.get("KS_SEED")
        if seed_env is not None:
            key = {"pde": None, "particles": "seed", "experiment": "seed_root"}[args.mode]
            if key is not None:
                sections[args.mode][key] = int(seed_env)
                cfg = cfgmod.typed_section(sections, args.mode)
    except (ConfigError, ValueError) as exc:
        print(f"ks: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    _write_resolved(cfgmod.sections_from(cfg), args.out)
    try:
        if args.mode == "pde":
            return _run_pde(cfg, args.out)
        if args.mode == "particles":
            return _run_particles(cfg, args.out)
        return _run_experiment(cfg, args.out)
    except (ConfigError, ValueError) as exc:
        print(f"ks: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"ks: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KsError as exc:
        print(f"ks: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
