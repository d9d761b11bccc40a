"""Coulomb interaction kernel, mollifier family, cutoff, and the mollified-kernel table.

The attractive Coulomb kernel is K(x) = -x / (c_d |x|^d) with
c_d = d * vol(B_1).  The mollifier family rescales a fixed smooth bump
supported in the unit ball; mollifying K against a *radial* profile makes
the convolution available in closed form through the shell property of
Newtonian fields: K * theta_N(x) = K(x) * (theta_N-mass inside radius |x|).
The table builder samples that formula on a uniform grid; an independent
quadrature oracle lives in the test suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import gamma as _gamma_fn

from .errors import ResolutionTooCoarse, SingularOrigin

_ORIGIN_TOL = 1e-14


def unit_ball_volume(d: int) -> float:
    return float(np.pi ** (d / 2.0) / _gamma_fn(d / 2.0 + 1.0))


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return float(2.0 * np.pi ** (d / 2.0) / _gamma_fn(d / 2.0))


@dataclass(frozen=True)
class CoulombKernel:
    """K(x) = -x / (c_d |x|^d), the gradient of the Newtonian potential."""

    d: int
    c_d: float = field(init=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("spatial dimension must be >= 2")
        object.__setattr__(self, "c_d", self.d * unit_ball_volume(self.d))

    def eval(self, x: np.ndarray) -> np.ndarray:
        return coulomb_eval(self, x)

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on an (n, d) array; rows at the origin map to 0."""
        xs = np.asarray(xs, dtype=np.float64)
        r2 = (xs**2).sum(axis=-1, keepdims=True)
        safe = np.where(r2 > _ORIGIN_TOL**2, r2, 1.0)
        out = -xs / (self.c_d * safe ** (self.d / 2.0))
        return np.where(r2 > _ORIGIN_TOL**2, out, 0.0)


def coulomb_eval(kernel: CoulombKernel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    r = float(np.linalg.norm(x))
    if r < _ORIGIN_TOL:
        raise SingularOrigin(f"kernel is singular at |x|={r:.3e}")
    return -x / (kernel.c_d * r**kernel.d)


# -- mollifier ----------------------------------------------------------------


@lru_cache(maxsize=8)
def _bump_normalization(d: int) -> float:
    """c such that c * exp(-1/(1-|x|^2)) integrates to one over the unit ball."""
    val, _ = integrate.quad(
        lambda r: np.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0,
        epsabs=1e-15, epsrel=1e-13,
    )
    return 1.0 / (sphere_area(d) * val)


@lru_cache(maxsize=8)
def _radial_mass_table(d: int, nodes: int = 1 << 16) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative mass of the unit bump inside radius r, tabulated on [0, 1]."""
    r = np.linspace(0.0, 1.0, nodes)
    integrand = np.zeros_like(r)
    interior = r < 1.0
    integrand[interior] = np.exp(-1.0 / (1.0 - r[interior] ** 2)) * r[interior] ** (d - 1)
    mass = integrate.cumulative_trapezoid(integrand, r, initial=0.0)
    mass *= _bump_normalization(d) * sphere_area(d)
    mass[-1] = 1.0  # pin the full mass exactly
    return r, mass


@dataclass(frozen=True)
class Mollifier:
    """Rescaled bump theta_N(x) = N^{alpha*d} theta(N^alpha x), support radius N^{-alpha}.

    The base profile is the standard normalized bump c*exp(-1/(1-|x|^2)) on |x|<1:
    smooth, nonnegative, compactly supported, unit mass.
    """

    alpha: float
    n_particles: int
    d: int = 2

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")

    @property
    def radius(self) -> float:
        return float(self.n_particles) ** (-self.alpha)

    @property
    def peak(self) -> float:
        """theta_N(0)."""
        return _bump_normalization(self.d) * np.exp(-1.0) * self.radius ** (-self.d)

    def eval(self, x: np.ndarray) -> np.ndarray:
        """theta_N at points of shape (..., d); zero outside the support ball."""
        x = np.asarray(x, dtype=np.float64)
        s2 = (x**2).sum(axis=-1) / self.radius**2
        out = np.zeros(s2.shape)
        inside = s2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
        out *= _bump_normalization(self.d) * self.radius ** (-self.d)
        return out

    def mass_within(self, r) -> np.ndarray:
        """Total theta_N mass inside radius r (saturates at 1 for r >= support radius)."""
        grid, mass = _radial_mass_table(self.d)
        t = np.clip(np.asarray(r, dtype=np.float64) / self.radius, 0.0, 1.0)
        return np.interp(t, grid, mass)


def mollifier_eval(moll: Mollifier, x) -> float:
    return float(moll.eval(np.asarray(x, dtype=np.float64)))


# -- cutoff -------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Component-wise saturation of the drift at level a.

    Acts as the identity on [-a, a] and returns +/-a beyond; monotone
    nondecreasing and 1-Lipschitz with |output| <= a.  Saturating exactly at
    the plateau value a is the only choice compatible with monotonicity once
    the identity region ends at a, so the transition band is degenerate.
    """

    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("cutoff level must be positive")

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(v, dtype=np.float64), -self.a, self.a)


def cutoff_apply(c: Cutoff, v) -> np.ndarray:
    return c.apply(v)


# -- mollified-kernel table ----------------------------------------------------


@dataclass(frozen=True)
class KernelTable:
    """K * theta_N sampled on a uniform grid, with multilinear interpolation.

    Nodes sit at integer multiples of the spacing so the origin is a node;
    sample count per axis is odd and the samples are antisymmetric about the
    origin by construction.  Outside the tabulated box the mollified kernel
    coincides with K itself (the support of theta_N is far smaller than the
    table), so lookups fall back to the analytic formula there.
    """

    samples: np.ndarray  # shape (n_side,)*d + (d,)
    half_width: float
    spacing: float
    d: int
    n_particles: int
    alpha: float

    @property
    def n_side(self) -> int:
        return self.samples.shape[0]

    @property
    def moll_radius(self) -> float:
        return float(self.n_particles) ** (-self.alpha)

    def lookup(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at points of shape (n, d) (or a single point)."""
        single = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        out = np.zeros((n, self.d))
        inside = np.all(np.abs(x) <= self.half_width - self.spacing, axis=1)
        if inside.any():
            pts = x[inside]
            f = (pts + self.half_width) / self.spacing
            i0 = np.floor(f).astype(np.int64)
            w = f - i0
            acc = np.zeros((pts.shape[0], self.d))
            for corner in range(1 << self.d):
                cw = np.ones(pts.shape[0])
                idx = []
                for ax in range(self.d):
                    bit = (corner >> ax) & 1
                    cw = cw * (w[:, ax] if bit else 1.0 - w[:, ax])
                    idx.append(i0[:, ax] + bit)
                acc += cw[:, None] * self.samples[tuple(idx)]
            out[inside] = acc
        if (~inside).any():
            kern = CoulombKernel(self.d)
            out[~inside] = kern.eval_many(x[~inside])
        return out[0] if single else out

    def cache_key(self) -> str:
        raw = f"{self.d}|{self.n_particles}|{self.alpha!r}|{self.spacing!r}|{self.half_width!r}"
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


def build_kernel_table(
    kernel: CoulombKernel,
    moll: Mollifier,
    l_table: float,
    h_table: float,
) -> KernelTable:
    """Tabulate K * theta_N on [-l_table, l_table]^d at spacing h_table.

    Requires at least 8 cells across the mollifier radius.  Uses the exact
    radial-shell identity K*theta_N(x) = K(x) * mass_within(|x|); beyond the
    support this reduces to K(x) itself.
    """
    if kernel.d != moll.d:
        raise ValueError("kernel and mollifier dimensions differ")
    if h_table > moll.radius / 8.0:
        raise ResolutionTooCoarse(
            f"table spacing {h_table:.4g} exceeds {moll.radius / 8.0:.4g} "
            f"(mollifier radius {moll.radius:.4g} needs >= 8 cells)"
        )
    d = kernel.d
    half = int(np.ceil(l_table / h_table))
    ax = h_table * np.arange(-half, half + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    r = np.linalg.norm(pts, axis=-1)
    mass = moll.mass_within(r)
    r2 = r**2
    safe = np.where(r2 > 0, r2, 1.0)
    vals = -pts / (kernel.c_d * safe[:, None] ** (d / 2.0)) * mass[:, None]
    vals[r2 == 0.0] = 0.0
    samples = vals.reshape(grids[0].shape + (d,))
    return KernelTable(
        samples=samples,
        half_width=half * h_table,
        spacing=h_table,
        d=d,
        n_particles=moll.n_particles,
        alpha=moll.alpha,
    )


def save_table(table: KernelTable, directory) -> Path:
    """Cache a table as a flat .npz keyed by (d, N, alpha, spacing, half-width)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"ktable_{table.cache_key()}.npz"
    np.savez(
        path,
        samples=table.samples,
        meta=np.array([table.half_width, table.spacing, table.d,
                       table.n_particles, table.alpha]),
    )
    return path


def load_table(kernel: CoulombKernel, moll: Mollifier, l_table: float,
               h_table: float, directory) -> KernelTable:
    """Load a cached table if present, else build and cache it."""
    probe = KernelTable(
        samples=np.zeros((1,) * kernel.d + (kernel.d,)),
        half_width=float(np.ceil(l_table / h_table)) * h_table,
        spacing=h_table, d=kernel.d,
        n_particles=moll.n_particles, alpha=moll.alpha,
    )
    path = Path(directory) / f"ktable_{probe.cache_key()}.npz"
    if path.exists():
        data = np.load(path)
        meta = data["meta"]
        return KernelTable(
            samples=data["samples"], half_width=float(meta[0]), spacing=float(meta[1]),
            d=int(meta[2]), n_particles=int(meta[3]), alpha=float(meta[4]),
        )
    table = build_kernel_table(kernel, moll, l_table, h_table)
    save_table(table, directory)
    return table
