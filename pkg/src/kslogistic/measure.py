"""Mollified empirical measure, error functionals, and measure-distance diagnostics.

The Kantorovich-Rubinstein (bounded-Lipschitz) distance

    ||mu - nu||_0 = sup { integral of phi d(mu - nu) : ||phi||_inf <= 1, Lip(phi) <= 1 }

is estimated by snapping both measures onto a coarse sub-grid (at most 64
cells per dimension, block-aligned with the fine grid) and solving the flat-
metric transport program exactly on that support: move mass at cost equal to
Euclidean distance, or create/destroy it at unit cost.  Arcs longer than 2
are dropped, which never changes the optimum (creation plus destruction costs
2).  The reported value carries the discretization scale and the LP
primal/dual gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from . import grid as gridmod
from .errors import GridMismatch, ResolutionTooCoarse, UnboundedSupport
from .grid import GridField, same_grid
from .kernel import Mollifier, _bump_normalization


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atoms with uniform weight 1/n_initial; total mass is the renormalized count."""

    atoms: np.ndarray  # (n, d)
    n_initial: int

    def __post_init__(self):
        object.__setattr__(self, "atoms",
                           np.atleast_2d(np.asarray(self.atoms, dtype=np.float64)))

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def mass(self) -> float:
        return self.atoms.shape[0] / self.n_initial


@dataclass(frozen=True)
class NormSpec:
    """Integrability exponent r > d and Holder/Bessel diagnostic order gamma."""

    r: float
    gamma: float

    def validate(self, d: int):
        from .errors import AssumptionViolated
        if not self.r > d:
            raise AssumptionViolated(f"need r > d: r={self.r}, d={d}")
        if not (d / self.r <= self.gamma < 1.0):
            raise AssumptionViolated(
                f"need gamma in [d/r, 1): gamma={self.gamma}, d/r={d / self.r}"
            )


# -- mollification -------------------------------------------------------------


@numba.njit(cache=True)
def _deposit_2d(atoms, vals, half_width, h, radius, cnorm, mass_per_atom):
    """Renormalized bump deposition.  Interior atoms contribute exactly
    mass_per_atom to the grid integral; atoms whose support leaves the window
    deposit only the visible part of their weighted bump.  Returns the
    boundary-straddler count."""
    m = vals.shape[0]
    inv_r2 = 1.0 / (radius * radius)
    scale = cnorm / (radius * radius)
    cell = h * h
    n_boundary = 0
    for a in range(atoms.shape[0]):
        x = atoms[a, 0]
        y = atoms[a, 1]
        i0 = int(np.ceil((x - radius + half_width) / h))
        i1 = int(np.floor((x + radius + half_width) / h))
        j0 = int(np.ceil((y - radius + half_width) / h))
        j1 = int(np.floor((y + radius + half_width) / h))
        interior = i0 >= 0 and j0 >= 0 and i1 < m and j1 < m
        if not interior:
            n_boundary += 1
            i0 = max(i0, 0)
            j0 = max(j0, 0)
            i1 = min(i1, m - 1)
            j1 = min(j1, m - 1)
            if i0 > i1 or j0 > j1:
                continue
        ni = i1 - i0 + 1
        nj = j1 - j0 + 1
        buf = np.zeros((ni, nj))
        total = 0.0
        for ii in range(ni):
            gx = -half_width + (i0 + ii) * h - x
            for jj in range(nj):
                gy = -half_width + (j0 + jj) * h - y
                s2 = (gx * gx + gy * gy) * inv_r2
                if s2 < 1.0:
                    v = scale * np.exp(-1.0 / (1.0 - s2))
                    buf[ii, jj] = v
                    total += v
        if total <= 0.0:
            continue
        factor = mass_per_atom / (total * cell) if interior else mass_per_atom
        for ii in range(ni):
            for jj in range(nj):
                vals[i0 + ii, j0 + jj] += buf[ii, jj] * factor
    return n_boundary


@numba.njit(cache=True)
def _deposit_3d(atoms, vals, half_width, h, radius, cnorm, mass_per_atom):
    m = vals.shape[0]
    inv_r2 = 1.0 / (radius * radius)
    scale = cnorm / (radius * radius * radius)
    cell = h * h * h
    n_boundary = 0
    for a in range(atoms.shape[0]):
        lo = np.empty(3, dtype=np.int64)
        hi = np.empty(3, dtype=np.int64)
        interior = True
        for ax in range(3):
            lo[ax] = int(np.ceil((atoms[a, ax] - radius + half_width) / h))
            hi[ax] = int(np.floor((atoms[a, ax] + radius + half_width) / h))
            if lo[ax] < 0 or hi[ax] > m - 1:
                interior = False
            lo[ax] = max(lo[ax], 0)
            hi[ax] = min(hi[ax], m - 1)
        if not interior:
            n_boundary += 1
        if lo[0] > hi[0] or lo[1] > hi[1] or lo[2] > hi[2]:
            continue
        buf = np.zeros((hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1))
        total = 0.0
        for ii in range(buf.shape[0]):
            gx = -half_width + (lo[0] + ii) * h - atoms[a, 0]
            for jj in range(buf.shape[1]):
                gy = -half_width + (lo[1] + jj) * h - atoms[a, 1]
                for kk in range(buf.shape[2]):
                    gz = -half_width + (lo[2] + kk) * h - atoms[a, 2]
                    s2 = (gx * gx + gy * gy + gz * gz) * inv_r2
                    if s2 < 1.0:
                        v = scale * np.exp(-1.0 / (1.0 - s2))
                        buf[ii, jj, kk] = v
                        total += v
        if total <= 0.0:
            continue
        factor = mass_per_atom / (total * cell) if interior else mass_per_atom
        for ii in range(buf.shape[0]):
            for jj in range(buf.shape[1]):
                for kk in range(buf.shape[2]):
                    vals[lo[0] + ii, lo[1] + jj, lo[2] + kk] += buf[ii, jj, kk] * factor
    return n_boundary


def mollify(mu: EmpiricalMeasure, moll: Mollifier, grid: GridField) -> GridField:
    """u^N = theta_N * mu^N sampled on the grid of the given template.

    Each atom deposits the exactly evaluated bump on the cells within the
    mollifier radius, rescaled so its grid integral is exactly 1/N (mass
    conservation under the midpoint rule).  Requires h <= radius/4.
    """
    if grid.h > moll.radius / 4.0:
        raise ResolutionTooCoarse(
            f"grid spacing {grid.h:.4g} exceeds mollifier radius / 4 = "
            f"{moll.radius / 4.0:.4g}"
        )
    if mu.d != grid.d:
        raise GridMismatch(f"measure dimension {mu.d} != grid dimension {grid.d}")
    vals = np.zeros(grid.values.shape)
    if mu.atoms.shape[0]:
        cnorm = _bump_normalization(moll.d)
        dep = _deposit_2d if grid.d == 2 else _deposit_3d
        dep(mu.atoms, vals, grid.half_width, grid.h, moll.radius, cnorm,
            1.0 / mu.n_initial)
    return grid.with_values(vals)


# -- error functionals -----------------------------------------------------------


def error_l1lr(a: GridField, b: GridField, spec: NormSpec):
    """||a - b||_L1 + ||a - b||_Lr by grid quadrature; returns (l1, lr, sum)."""
    same_grid(a, b)
    diff = a.with_values(a.values - b.values)
    l1 = diff.norm_l1()
    lr = diff.norm_lp(spec.r)
    return l1, lr, l1 + lr


def holder_seminorm(f: GridField, delta: float) -> float:
    """Grid Holder quotient over dyadic axis separations {h, 2h, ..., L}.

    A lower bound of the continuum seminorm: only axis-aligned sampled pairs
    at dyadic separations enter, and pairs wrapping around the torus seam are
    excluded.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    best = 0.0
    shift = 1
    while shift <= f.m // 2:
        s = shift * f.h
        for ax in range(f.d):
            lead = np.take(f.values, np.arange(shift, f.m), axis=ax)
            lag = np.take(f.values, np.arange(0, f.m - shift), axis=ax)
            gap = float(np.abs(lead - lag).max())
            best = max(best, gap / s**delta)
        shift *= 2
    return best


def bessel_norm(f: GridField, beta: float, p: float) -> float:
    """Bessel-potential norm || (I-Lap)^{beta/2} f ||_Lp via the spectral multiplier."""
    return gridmod.bessel_apply(f, beta).norm_lp(p)


# -- Kantorovich-Rubinstein (flat-metric) distance --------------------------------


@dataclass(frozen=True)
class KrResult:
    value: float
    cell: float      # coarse cell side used for the discretization
    grid_side: int
    lp_gap: float

    def __float__(self):
        return self.value


def _flat_metric_lp(points_p, mass_p, points_q, mass_q):
    """Exact flat-metric LP between two discrete positive measures.

    Primal: transport at Euclidean cost with unit-cost creation/destruction
    slack; arcs with cost > 2 are pruned (never optimal).  Returns
    (value, primal/dual gap).
    """
    npos, nneg = len(mass_p), len(mass_q)
    if npos == 0 and nneg == 0:
        return 0.0, 0.0
    if npos == 0 or nneg == 0:
        return float(np.sum(mass_p) + np.sum(mass_q)), 0.0
    dist = np.linalg.norm(points_p[:, None, :] - points_q[None, :, :], axis=-1)
    ii, jj = np.nonzero(dist <= 2.0)
    narc = len(ii)
    cost = np.concatenate([dist[ii, jj], np.ones(npos + nneg)])
    rows = np.concatenate([ii, npos + jj, np.arange(npos + nneg)])
    cols = np.concatenate([np.arange(narc), np.arange(narc),
                           narc + np.arange(npos + nneg)])
    mat = coo_matrix(
        (np.ones(rows.size), (rows, cols)),
        shape=(npos + nneg, narc + npos + nneg),
    ).tocsr()
    rhs = np.concatenate([mass_p, mass_q])
    res = linprog(cost, A_eq=mat, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"flat-metric LP failed: {res.message}")
    dual = float(res.eqlin.marginals @ rhs)
    return float(res.fun), abs(float(res.fun) - dual)


def _coarse_cells(field_mass: np.ndarray, atom_idx: np.ndarray, m: int,
                  max_side: int):
    """Common block-aligned bounding box and block factor for both supports."""
    occ = np.argwhere(field_mass != 0.0)
    pieces = [p for p in (occ, atom_idx) if p.size]
    if not pieces:
        return None
    allidx = np.concatenate(pieces, axis=0)
    lo = np.maximum(allidx.min(axis=0) - 1, 0)
    hi = np.minimum(allidx.max(axis=0) + 1, m - 1)
    extent = int((hi - lo + 1).max())
    block = 1
    while (extent + block - 1) // block > max_side:
        block *= 2
    lo = (lo // block) * block
    side = (np.maximum(hi - lo + 1, 1) + block - 1) // block
    return lo, side.astype(int), block


def kr_distance(mu: EmpiricalMeasure, v: GridField, max_side: int = 64) -> KrResult:
    """Bounded-Lipschitz distance between an atomic measure and a grid density.

    Both measures are discretized to a common coarse grid (cell masses for the
    field, nearest-cell snapping for the atoms) and the flat-metric LP is
    solved exactly on that support.
    """
    if mu.d != v.d:
        raise GridMismatch(f"measure dimension {mu.d} != grid dimension {v.d}")
    m, h, L = v.m, v.h, v.half_width
    outside = np.any((mu.atoms < -L) | (mu.atoms >= L), axis=1)
    if outside.sum() / mu.n_initial > 1e-6:
        raise UnboundedSupport(
            f"{int(outside.sum())} atoms outside the box carry mass "
            f"{outside.sum() / mu.n_initial:.3e}"
        )
    atoms = mu.atoms[~outside]
    # grid nodes are midpoint-cell centers: atom -> nearest node index
    atom_idx = np.clip(
        np.floor((atoms + L) / h + 0.5).astype(np.int64), 0, m - 1
    ) if atoms.size else np.zeros((0, v.d), dtype=np.int64)
    field_mass = v.values * h**v.d
    layout = _coarse_cells(field_mass, atom_idx, m, max_side)
    if layout is None:
        return KrResult(0.0, h, 0, 0.0)
    lo, side, block = layout
    cell = h * block

    coarse_field = np.zeros(tuple(side))
    occ = np.argwhere(field_mass != 0.0)
    if occ.size:
        rel = (occ - lo) // block
        np.add.at(coarse_field, tuple(rel.T), field_mass[tuple(occ.T)])
    coarse_atoms = np.zeros(tuple(side))
    if atom_idx.size:
        rel = np.clip((atom_idx - lo) // block, 0, np.asarray(side) - 1)
        np.add.at(coarse_atoms, tuple(rel.T), 1.0 / mu.n_initial)

    delta = coarse_atoms - coarse_field
    pos = np.argwhere(delta > 0.0)
    neg = np.argwhere(delta < 0.0)
    # block of fine cells [lo, lo+block) is centered at node lo + (block-1)/2
    centers = lambda idx: -L + (lo + idx * block + 0.5 * (block - 1)) * h  # noqa: E731
    value, gap = _flat_metric_lp(
        centers(pos), delta[tuple(pos.T)],
        centers(neg), -delta[tuple(neg.T)],
    )
    return KrResult(value, cell, int(max(side)), gap)


def kr_distance_atoms(a: EmpiricalMeasure, b: EmpiricalMeasure,
                      scale_hint: float | None = None) -> KrResult:
    """Flat-metric distance between two atomic measures, solved exactly (no grid)."""
    if a.atoms.shape[0] == 0 and b.atoms.shape[0] == 0:
        return KrResult(0.0, 0.0, 0, 0.0)
    wa = np.full(a.atoms.shape[0], 1.0 / a.n_initial)
    wb = np.full(b.atoms.shape[0], 1.0 / b.n_initial)
    value, gap = _flat_metric_lp(a.atoms, wa, b.atoms, wb)
    return KrResult(value, 0.0, 0, gap)
