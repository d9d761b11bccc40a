"""Mild solution of the chemotaxis PDE with logistic damping on the periodic grid.

One step of the first-order exponential (Duhamel) integrator freezes the
nonlinear terms over the step and applies the heat semigroup exactly in
Fourier space:

    u_{t+dt} = e^{dt*Lap} u_t - chi*dt * div e^{dt*Lap}( u_t (K*u_t) )
               + dt * e^{dt*Lap}( nu*u_t - mu*u_t^2 )

Quadratic products are dealiased with the 2/3 rule; small negative lobes are
clipped to zero and the clipped mass is accounted for.  Blow-up detection is
a finite proxy: the monitor fires once ||u||_L1 + ||u||_Linf exceeds a
configurable ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from . import grid as gridmod
from .errors import BlowupTrajectory, NumericalBlowup, TimeStepTooLarge
from .grid import GridField


@dataclass(frozen=True)
class PdeParams:
    chi: float
    nu: float
    mu: float
    d: int = 2

    def __post_init__(self):
        if self.chi < 0 or self.nu < 0 or self.mu < 0:
            raise ValueError("chi, nu, mu must be nonnegative")

    @property
    def global_regime(self) -> bool:
        """Damping strong enough for global existence: mu > (d-2)/d * chi."""
        return self.mu > (self.d - 2) / self.d * self.chi


@dataclass
class BlowupMonitor:
    """Fires once ||u||_L1 + ||u||_Linf exceeds the threshold."""

    threshold: float
    triggered_at: float | None = None

    @classmethod
    def from_initial(cls, u0: GridField, factor: float = 1e4) -> "BlowupMonitor":
        return cls(threshold=factor * (u0.norm_l1() + u0.norm_linf()))

    def check(self, u: GridField, t: float) -> bool:
        if self.triggered_at is None and u.norm_l1() + u.norm_linf() > self.threshold:
            self.triggered_at = t
        return self.triggered_at is not None


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    fields: list[GridField] = field(default_factory=list)
    norms: list[dict] = field(default_factory=list)  # per-snapshot norm record
    sup_linf: float = 0.0        # running sup over *all* steps of ||u||_Linf
    sup_kconv_linf: float = 0.0  # running sup over all steps of ||K*u||_Linf
    clipped_mass: float = 0.0    # cumulative mass added by negativity clipping
    n_steps: int = 0
    monitor: BlowupMonitor | None = None

    def a_threshold(self) -> float:
        """Fine-grained cutoff threshold sup_t ||u||_inf + sup_t ||K*u||_inf."""
        return self.sup_linf + self.sup_kconv_linf


def dt_stability(u: GridField, p: PdeParams, kconv_linf: float | None = None) -> float:
    """Per-step ceiling: min(h^2/4, 0.1/(nu + mu*||u||_inf + chi*||K*u||_inf*pi/h)).

    With all rates zero the step is the exact heat flow and no ceiling applies.
    """
    if p.chi == 0.0 and p.nu == 0.0 and p.mu == 0.0:
        return np.inf
    h = u.h
    if kconv_linf is None:
        kconv_linf = float(np.abs(gridmod.kernel_convolve(u)).max()) if p.chi > 0 else 0.0
    rate = p.nu + p.mu * u.norm_linf() + p.chi * kconv_linf * (np.pi / h)
    reactive = 0.1 / rate if rate > 0 else np.inf
    return min(h * h / 4.0, reactive)


def _advance(u: GridField, p: PdeParams, dt: float):
    """One Duhamel step; returns (new field, clipped mass, ||K*u||_inf)."""
    vals = u.values
    spec = sfft.rfftn(vals)
    ops = gridmod._ops(u)
    heat_mult = np.exp(-ops.ksq * dt)

    new_spec = spec.copy()
    kconv_linf = 0.0
    if p.chi > 0.0:
        kconv = np.empty((u.d,) + vals.shape)
        for j in range(u.d):
            kconv[j] = sfft.irfftn(ops.coulomb_mult[j] * spec, s=vals.shape)
        kconv_linf = float(np.abs(kconv).max())
        div_spec = 0.0
        for j in range(u.d):
            prod = sfft.rfftn(vals * kconv[j]) * ops.dealias_mask
            div_spec = div_spec + 1j * ops.kvec[j] * prod
        new_spec = new_spec - p.chi * dt * div_spec
    if p.nu > 0.0 or p.mu > 0.0:
        react = p.nu * spec
        if p.mu > 0.0:
            react = react - p.mu * (sfft.rfftn(vals * vals) * ops.dealias_mask)
        new_spec = new_spec + dt * react
    new_vals = sfft.irfftn(heat_mult * new_spec, s=vals.shape)
    if not np.isfinite(new_vals).all():
        raise NumericalBlowup(f"non-finite field values after step dt={dt:.3e}")
    neg = new_vals < 0.0
    clipped = float(-new_vals[neg].sum()) * u.h**u.d if neg.any() else 0.0
    if neg.any():
        new_vals[neg] = 0.0
    return u.with_values(new_vals), clipped, kconv_linf


def heat_step(f: GridField, t: float) -> GridField:
    """Pure heat semigroup step (spectral, exact; preserves the grid integral)."""
    return gridmod.heat(f, t)


def step_mild(u: GridField, p: PdeParams, dt: float) -> GridField:
    """Single Duhamel step.  Raises TimeStepTooLarge past the stability ceiling."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return u
    ceiling = dt_stability(u, p)
    if dt > ceiling * (1.0 + 1e-12):
        raise TimeStepTooLarge(f"dt={dt:.3e} exceeds stability ceiling {ceiling:.3e}")
    new, _, _ = _advance(u, p, dt)
    return new


def solve(
    u0: GridField,
    p: PdeParams,
    t_end: float,
    dt: float,
    monitor: BlowupMonitor | None = None,
    snapshot_times=None,
    r_norm: float = 8.0,
) -> Trajectory:
    """Integrate to t_end with per-step stability control and blow-up monitoring.

    The requested dt is an upper bound; each step shrinks to the current
    stability ceiling when needed (and to land exactly on snapshot times).
    Snapshots are recorded at the requested times (always including t=0 and
    t_end).  When the monitor fires the run stops early with triggered_at set;
    a NumericalBlowup (non-finite values, or the adaptive step collapsing by
    more than a factor 1e6) is a solver failure, reported separately.
    """
    if u0.values.min() < 0:
        raise ValueError("initial condition must be nonnegative")
    if monitor is None:
        monitor = BlowupMonitor.from_initial(u0)
    if snapshot_times is None:
        snapshot_times = [t_end]
    snaps = sorted(set(float(t) for t in snapshot_times) | {0.0, float(t_end)})

    traj = Trajectory(monitor=monitor)
    u, t = u0, 0.0

    def record(u, t):
        kinf = float(np.abs(gridmod.kernel_convolve(u)).max())
        traj.times.append(t)
        traj.fields.append(u)
        traj.norms.append({
            "t": t,
            "l1": u.norm_l1(),
            "lr": u.norm_lp(r_norm),
            "linf": u.norm_linf(),
            "kconv_linf": kinf,
            "a_running": traj.sup_linf + traj.sup_kconv_linf,
        })

    traj.sup_linf = u0.norm_linf()
    kinf = 0.0
    if p.chi > 0:
        kinf = float(np.abs(gridmod.kernel_convolve(u0)).max())
        traj.sup_kconv_linf = kinf
    record(u, 0.0)
    if monitor.check(u, 0.0):
        return traj

    next_snaps = [s for s in snaps if s > 0.0]
    for target in next_snaps:
        while t < target - 1e-12:
            # stability estimate reuses ||K*u||_inf from the previous step
            ceiling = dt_stability(u, p, kconv_linf=kinf)
            step = min(dt, ceiling, target - t)
            if step < dt * 1e-6:
                raise NumericalBlowup(
                    f"stability ceiling collapsed to {step:.3e} at t={t:.6f}"
                )
            u, clipped, kinf = _advance(u, p, step)
            t += step
            traj.n_steps += 1
            traj.clipped_mass += clipped
            traj.sup_linf = max(traj.sup_linf, u.norm_linf())
            traj.sup_kconv_linf = max(traj.sup_kconv_linf, kinf)
            if monitor.check(u, t):
                record(u, t)
                return traj
        record(u, t)
    return traj


def compute_a_t(trajectory: Trajectory) -> float:
    """Cutoff threshold from snapshots: sup_t ||u_t||_inf + sup_t ||K*u_t||_inf."""
    if trajectory.monitor is not None and trajectory.monitor.triggered_at is not None:
        raise BlowupTrajectory(
            f"monitor fired at t={trajectory.monitor.triggered_at:.6f}"
        )
    sup_u = max(n["linf"] for n in trajectory.norms)
    sup_k = max(n["kconv_linf"] for n in trajectory.norms)
    return sup_u + sup_k
