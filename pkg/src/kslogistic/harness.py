"""Paired PDE/particle experiments: error curves over N and empirical rates.

For each (N, replica) cell the particle system is simulated with a seed
derived from (seed_root, N, replica); the mollified empirical measure is
compared to the PDE reference at every checkpoint in the L1-plus-Lr norm,
together with two bounded-Lipschitz distances (raw empirical measure against
the PDE solution, and against its own mollification).  Cells run in a process
pool (fork start method: workers inherit the reference solution and kernel
tables read-only) and are reduced in deterministic (N, replica, t) order, so
a rerun with the same plan is byte-identical.

The theoretical rate is

    rho = min( alpha*(gamma - d/r), (1 - 2*alpha*d*(1 - 1/r)) / 2 ),

valid under r > d, gamma in [d/r, 1) and 0 < alpha < 1/(2(d + gamma - d/r)).
Desk-scale N cannot resolve rho sharply; the headline empirical quantity is
the slope of log median sup-over-checkpoints error against log N.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from . import __version__, grid as gridmod, measure, particles, pde
from .config import ExperimentRunConfig
from .errors import AssumptionViolated, ConfigError, DegenerateFit
from .grid import GridField
from .kernel import CoulombKernel, Mollifier, build_kernel_table
from .measure import EmpiricalMeasure, NormSpec

ERRORS_COLUMNS = ("N", "replica", "t", "err_l1", "err_lr", "err_l1lr",
                  "kr_mu_vs_u", "kr_gap_mollif")
RATES_COLUMNS = ("t", "slope", "ci_lo", "ci_hi", "rho_theory", "active_branch")
SUP_ROW_T = -1.0  # sentinel t for the sup-over-checkpoints row in rates.csv


def theoretical_rho(d: int, alpha: float, gamma: float, r: float):
    """Theoretical convergence rate and which branch attains the minimum.

    Raises AssumptionViolated naming the failed inequality.
    """
    if not r > d:
        raise AssumptionViolated(f"r > d violated: r={r}, d={d}")
    if not gamma >= d / r:
        raise AssumptionViolated(f"gamma >= d/r violated: gamma={gamma}, d/r={d / r}")
    if not gamma < 1.0:
        raise AssumptionViolated(f"gamma < 1 violated: gamma={gamma}")
    limit = 1.0 / (2.0 * (d + gamma - d / r))
    if not 0.0 < alpha < limit:
        raise AssumptionViolated(
            f"0 < alpha < 1/(2(d+gamma-d/r)) violated: alpha={alpha}, limit={limit:.6g}"
        )
    holder_branch = alpha * (gamma - d / r)
    noise_branch = 0.5 * (1.0 - 2.0 * alpha * d * (1.0 - 1.0 / r))
    if holder_branch <= noise_branch:
        return holder_branch, "holder"
    return noise_branch, "noise"


def fit_slope(n_values, errors):
    """OLS slope of log(error) on log(N) with a 95% CI from residual variance."""
    n_values = np.asarray(n_values, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if len(n_values) < 3:
        raise DegenerateFit(f"need >= 3 N values, got {len(n_values)}")
    if np.any(errors <= 0):
        raise DegenerateFit("errors must be positive for a log-log fit")
    x = np.log(n_values)
    y = np.log(errors)
    xbar = x.mean()
    sxx = ((x - xbar) ** 2).sum()
    slope = ((x - xbar) * (y - y.mean())).sum() / sxx
    intercept = y.mean() - slope * xbar
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    se = np.sqrt((resid**2).sum() / dof / sxx) if dof > 0 else 0.0
    tq = stats.t.ppf(0.975, dof) if dof > 0 else 0.0
    return float(slope), float(slope - tq * se), float(slope + tq * se)


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything a convergence experiment depends on (results-wise)."""

    n_values: tuple
    replicas: int
    t_end: float
    n_checkpoints: int
    spec: NormSpec
    alpha: float
    chi: float
    nu: float
    mu: float
    cutoff_a: float
    particle_dt: float
    pde_dt: float
    pde_m_grid: int
    m_grid: int
    half_width: float
    init_sigma: float
    seed_root: int
    m_moment: int = 2
    kr_max_side: int = 64
    max_particles_factor: int = 64
    d: int = 2

    @classmethod
    def from_config(cls, cfg: ExperimentRunConfig) -> "ExperimentPlan":
        return cls(
            n_values=tuple(cfg.n_values), replicas=cfg.replicas, t_end=cfg.t_end,
            n_checkpoints=cfg.n_checkpoints, spec=NormSpec(r=cfg.r, gamma=cfg.gamma),
            alpha=cfg.alpha, chi=cfg.chi, nu=cfg.nu, mu=cfg.mu,
            cutoff_a=cfg.cutoff_a, particle_dt=cfg.particle_dt, pde_dt=cfg.pde_dt,
            pde_m_grid=cfg.pde_m_grid, m_grid=cfg.m_grid,
            half_width=cfg.half_width, init_sigma=cfg.init_sigma,
            seed_root=cfg.seed_root, m_moment=cfg.m_moment,
            kr_max_side=cfg.kr_max_side,
            max_particles_factor=cfg.max_particles_factor,
        )

    def validate(self):
        self.spec.validate(self.d)
        theoretical_rho(self.d, self.alpha, self.spec.gamma, self.spec.r)
        if self.replicas < 1:
            raise ConfigError("need at least one replica")
        dt_ck = self.t_end / self.n_checkpoints
        for dt in (self.particle_dt, self.pde_dt):
            ratio = dt_ck / dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(
                    f"dt={dt} does not divide the checkpoint spacing {dt_ck}"
                )

    def checkpoints(self) -> list[float]:
        return [k * self.t_end / self.n_checkpoints
                for k in range(self.n_checkpoints + 1)]


@dataclass
class RateReport:
    plan: ExperimentPlan
    rows: list            # per (N, replica, t) dicts with ERRORS_COLUMNS keys
    diagnostics: list     # per (N, replica, t) extras: mass, lp gaps, bounds
    medians: dict         # (N, t) -> median err_l1lr
    sup_medians: dict     # N -> median over replicas of sup-over-checkpoints error
    lm_moments: dict      # (N, t) -> empirical m-th moment of err_l1lr
    slopes_per_t: dict    # t -> (slope, ci_lo, ci_hi) or None if degenerate
    sup_slope: tuple | None
    rho: float
    rho_branch: str
    a_t_reference: float
    init_bessel: dict     # N -> mean Bessel norm of u^N_0 (diagnostic only)
    resolution_check: float | None = None
    flags: list = field(default_factory=list)


_MASK64 = (1 << 64) - 1


def _derive_seed(seed_root: int, n: int, replica: int) -> int:
    x = (seed_root * 0x9E3779B97F4A7C15
         + n * 0xBF58476D1CE4E5B9
         + (replica + 1) * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 29
    return x & 0x7FFFFFFFFFFFFFFF


# Worker state inherited through fork (read-only after setup).
_WORKER: dict = {}


def _limit_numba_threads(n: int):
    import numba
    numba.set_num_threads(max(1, n))


def _setup_worker_state(plan: ExperimentPlan, refs: dict, tables: dict):
    _WORKER["plan"] = plan
    _WORKER["refs"] = refs
    _WORKER["tables"] = tables


def _run_cell(args):
    """One (N, replica) simulation plus per-checkpoint error records."""
    n, replica = args
    plan: ExperimentPlan = _WORKER["plan"]
    refs = _WORKER["refs"]
    table = _WORKER["tables"][n]
    seed = _derive_seed(plan.seed_root, n, replica)
    pp = particles.ParticleParams(
        chi=plan.chi, nu=plan.nu, mu=plan.mu, alpha=plan.alpha,
        a_cutoff=plan.cutoff_a, dt=plan.particle_dt, d=plan.d,
        max_particles_factor=plan.max_particles_factor,
    )
    init = particles.sample_gaussian_initial(n, plan.init_sigma,
                                             seed=seed ^ 0x5EED, d=plan.d)
    template = GridField(np.zeros((plan.m_grid,) * plan.d), plan.half_width)
    try:
        sim = particles.simulate(init, pp, plan.t_end, plan.checkpoints(),
                                 rng_seed=seed, grid_template=template, table=table)
    except Exception as exc:
        raise type(exc)(f"(N={n}, replica={replica}, seed={seed}): {exc}") from exc
    moll = Mollifier(plan.alpha, n, plan.d)
    rows, diags = [], []
    for k, (t, pop, u_n) in enumerate(sim.snapshots):
        ref = refs[k]
        mu_emp = EmpiricalMeasure(pop.positions, n)
        l1, lr, tot = measure.error_l1lr(u_n, ref, plan.spec)
        kr_u = measure.kr_distance(mu_emp, ref, max_side=plan.kr_max_side)
        kr_gap = measure.kr_distance(mu_emp, u_n, max_side=plan.kr_max_side)
        rows.append({
            "N": n, "replica": replica, "t": t,
            "err_l1": l1, "err_lr": lr, "err_l1lr": tot,
            "kr_mu_vs_u": kr_u.value, "kr_gap_mollif": kr_gap.value,
        })
        diag = {
            "N": n, "replica": replica, "t": t, "mass": pop.mass,
            "second_moment": float((pop.positions**2).sum(axis=1).mean() * pop.mass)
            if pop.n_alive else 0.0,
            "kr_gap_bound": moll.radius * pop.mass,
            "kr_lp_gap": max(kr_u.lp_gap, kr_gap.lp_gap),
            "kr_cell": kr_gap.cell,
            "triangle_slack": kr_u.value - (kr_gap.value + l1),
            "boundary_crossings": pop.boundary_crossings,
        }
        if k == 0:
            diag["bessel_init"] = measure.bessel_norm(u_n, plan.spec.gamma,
                                                      plan.spec.r)
        diags.append(diag)
    return rows, diags


def _reference_solution(plan: ExperimentPlan, m_grid: int, dt: float):
    u0 = gridmod.gaussian_field(m_grid, plan.half_width, plan.init_sigma,
                                d=plan.d)
    params = pde.PdeParams(chi=plan.chi, nu=plan.nu, mu=plan.mu, d=plan.d)
    traj = pde.solve(u0, params, plan.t_end, dt,
                     snapshot_times=plan.checkpoints(), r_norm=plan.spec.r)
    if traj.monitor.triggered_at is not None:
        raise ConfigError(
            f"reference PDE blew up at t={traj.monitor.triggered_at}: "
            "the experiment requires the suppression regime"
        )
    return traj


def run_experiment(plan: ExperimentPlan, threads: int = 0,
                   resolution_check: bool = True) -> RateReport:
    """Execute the full error-vs-N protocol and aggregate a RateReport.

    ``threads`` and ``resolution_check`` steer execution only; the report's
    error records depend solely on the plan (bitwise, given one platform).
    """
    plan.validate()
    rho, branch = theoretical_rho(plan.d, plan.alpha, plan.spec.gamma, plan.spec.r)

    traj = _reference_solution(plan, plan.pde_m_grid, plan.pde_dt)
    a_t = traj.a_threshold()
    if plan.cutoff_a < a_t:
        raise ConfigError(
            f"cutoff_a={plan.cutoff_a} is below the reference A_T={a_t:.4f}; "
            "the drift saturation would bite where the limit requires transparency"
        )
    stride = plan.pde_m_grid // plan.m_grid
    refs = [GridField(f.values[(slice(None, None, stride),) * plan.d],
                      plan.half_width) for f in traj.fields]

    res_check = None
    if resolution_check:
        fine = _reference_solution(plan, 2 * plan.pde_m_grid, plan.pde_dt / 2.0)
        diffs = []
        for a, b in zip(traj.fields, fine.fields):
            bb = b.values[(slice(None, None, 2),) * plan.d]
            diffs.append(float(np.abs(a.values - bb).max() / max(np.abs(bb).max(), 1e-300)))
        res_check = max(diffs)

    # particle-side warmup before forking so workers inherit compiled kernels
    kern = CoulombKernel(plan.d)
    tables = {}
    for n in plan.n_values:
        moll = Mollifier(plan.alpha, n, plan.d)
        tables[n] = build_kernel_table(kern, moll, 2.0 * plan.half_width,
                                       moll.radius / 8.0)
    _setup_worker_state(plan, refs, tables)
    particles._warmup(plan.d)

    cells = [(n, rep) for n in plan.n_values for rep in range(plan.replicas)]
    n_workers = threads if threads > 0 else (os.cpu_count() or 1)
    n_workers = min(n_workers, len(cells))
    all_rows, all_diags = [], []
    if n_workers > 1:
        per_worker = max(1, (os.cpu_count() or 1) // n_workers)
        with ProcessPoolExecutor(
            max_workers=n_workers,
            initializer=_limit_numba_threads, initargs=(per_worker,),
        ) as pool:
            for rows, diags in pool.map(_run_cell, cells, chunksize=1):
                all_rows.extend(rows)
                all_diags.extend(diags)
    else:
        for cell in cells:
            rows, diags = _run_cell(cell)
            all_rows.extend(rows)
            all_diags.extend(diags)
    key = lambda r: (r["N"], r["replica"], r["t"])  # noqa: E731
    all_rows.sort(key=key)
    all_diags.sort(key=key)

    report = RateReport(
        plan=plan, rows=all_rows, diagnostics=all_diags, medians={},
        sup_medians={}, lm_moments={}, slopes_per_t={}, sup_slope=None,
        rho=rho, rho_branch=branch, a_t_reference=a_t, init_bessel={},
        resolution_check=res_check,
    )
    _aggregate(report)
    return report


def _aggregate(report: RateReport):
    plan = report.plan
    ckpts = plan.checkpoints()
    by_nt = {}
    sup_by_n = {n: [] for n in plan.n_values}
    for n in plan.n_values:
        for rep in range(plan.replicas):
            sub = [r for r in report.rows if r["N"] == n and r["replica"] == rep]
            sup_by_n[n].append(max(r["err_l1lr"] for r in sub))
            for r in sub:
                by_nt.setdefault((n, r["t"]), []).append(r["err_l1lr"])
    for (n, t), vals in by_nt.items():
        arr = np.asarray(vals)
        report.medians[(n, t)] = float(np.median(arr))
        report.lm_moments[(n, t)] = float((arr**plan.m_moment).mean()
                                          ** (1.0 / plan.m_moment))
    report.sup_medians = {n: float(np.median(sup_by_n[n])) for n in plan.n_values}
    for diag in report.diagnostics:
        if "bessel_init" in diag:
            report.init_bessel.setdefault(diag["N"], []).append(diag["bessel_init"])
    report.init_bessel = {n: float(np.mean(v)) for n, v in report.init_bessel.items()}

    def try_fit(values):
        try:
            return fit_slope(plan.n_values, values)
        except DegenerateFit as exc:
            report.flags.append(str(exc))
            return None

    if len(plan.n_values) >= 3:
        for t in ckpts:
            meds = [report.medians[(n, t)] for n in plan.n_values]
            report.slopes_per_t[t] = try_fit(meds)
        report.sup_slope = try_fit([report.sup_medians[n] for n in plan.n_values])
    else:
        report.flags.append(
            f"slope undefined: only {len(plan.n_values)} N value(s)"
        )


# -- serialization -------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_errors_csv(report: RateReport, path):
    with open(path, "w") as fh:
        fh.write(",".join(ERRORS_COLUMNS) + "\n")
        for row in report.rows:
            fh.write(",".join(_fmt(row[c]) for c in ERRORS_COLUMNS) + "\n")


def write_diagnostics_csv(report: RateReport, path):
    cols = ("N", "replica", "t", "mass", "second_moment", "kr_gap_bound",
            "kr_lp_gap", "kr_cell", "triangle_slack", "boundary_crossings")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.diagnostics:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def write_rates_csv(report: RateReport, path):
    with open(path, "w") as fh:
        fh.write(",".join(RATES_COLUMNS) + "\n")
        def put(t, fit):
            if fit is None:
                return
            slope, lo, hi = fit
            fh.write(",".join(_fmt(v) for v in
                              (t, slope, lo, hi, report.rho, report.rho_branch))
                     + "\n")
        for t, fit in report.slopes_per_t.items():
            put(t, fit)
        # sup-over-checkpoints headline row, flagged by the sentinel t
        put(SUP_ROW_T, report.sup_slope)


def _library_versions() -> dict:
    import numba
    import scipy
    return {"numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def manifest_dict(report: RateReport, threads: int) -> dict:
    plan = asdict(report.plan)
    plan["spec"] = {"r": report.plan.spec.r, "gamma": report.plan.spec.gamma}
    return {
        "version": __version__,
        "libraries": _library_versions(),
        "plan": plan,
        "rho_theory": report.rho,
        "rho_branch": report.rho_branch,
        "a_t_reference": report.a_t_reference,
        "sup_slope": report.sup_slope,
        "sup_medians": {str(k): v for k, v in report.sup_medians.items()},
        "init_bessel_by_n": {str(k): v for k, v in report.init_bessel.items()},
        "resolution_check_rel_linf": report.resolution_check,
        "threads": threads,
        "flags": report.flags,
    }


def write_report(report: RateReport, out_dir, threads: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    write_errors_csv(report, os.path.join(out_dir, "errors.csv"))
    write_rates_csv(report, os.path.join(out_dir, "rates.csv"))
    write_diagnostics_csv(report, os.path.join(out_dir, "diagnostics.csv"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest_dict(report, threads), fh, indent=2, sort_keys=True)
        fh.write("\n")
