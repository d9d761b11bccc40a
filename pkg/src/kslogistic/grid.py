"""Periodic uniform grid fields and the spectral operators acting on them.

The computational domain is the box [-L, L]^d with M grid points per side
(M a power of two), sampled at x_i = -L + i*h, h = 2L/M.  All integrals and
norms use the midpoint rule on this lattice.

Convolution with the Coulomb kernel K is realized as the Fourier multiplier
i*xi/|xi|^2 with the zero mode set to zero.  On the torus the Poisson
equation is solvable only for mean-zero data, so the constant mode of the
source is projected out; this is a deliberate deviation from the whole-space
operator and is what makes K*c = 0 for constant fields c.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import GridMismatch


@dataclass(frozen=True)
class GridField:
    """Real field sampled on the periodic grid over [-L, L]^d."""

    values: np.ndarray
    half_width: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = v.shape[0]
        if any(s != m for s in v.shape):
            raise GridMismatch(f"grid must be square, got shape {v.shape}")
        if m & (m - 1) != 0 or m == 0:
            raise GridMismatch(f"grid side must be a power of two, got {m}")
        if self.half_width <= 0:
            raise GridMismatch("half_width must be positive")
        v.flags.writeable = False  # fields are immutable once built
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.m

    def axis_coords(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.m)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.half_width)

    # -- midpoint-rule norms ------------------------------------------------

    def integral(self) -> float:
        return float(self.values.sum()) * self.h**self.d

    def norm_l1(self) -> float:
        return float(np.abs(self.values).sum()) * self.h**self.d

    def norm_lp(self, p: float) -> float:
        if p == np.inf:
            return self.norm_linf()
        return float((np.abs(self.values) ** p).sum() * self.h**self.d) ** (1.0 / p)

    def norm_linf(self) -> float:
        return float(np.abs(self.values).max())

    def norm_l1lr(self, r: float) -> float:
        """Intersection norm: sum of the L^1 and L^r norms."""
        return self.norm_l1() + self.norm_lp(r)


def same_grid(a: GridField, b: GridField) -> None:
    if a.values.shape != b.values.shape or a.half_width != b.half_width:
        raise GridMismatch(
            f"incompatible grids: {a.values.shape}@L={a.half_width} vs "
            f"{b.values.shape}@L={b.half_width}"
        )


# -- spectral machinery ------------------------------------------------------


@lru_cache(maxsize=32)
class _SpectralOps:
    """Cached wavenumber arrays for a given (d, m, L) in rfftn layout."""

    def __init__(self, d: int, m: int, half_width: float):
        self.d, self.m, self.half_width = d, m, half_width
        scale = np.pi / half_width  # xi = pi*k/L for integer k
        freqs = [sfft.fftfreq(m, 1.0 / m) * scale for _ in range(d - 1)]
        freqs.append(sfft.rfftfreq(m, 1.0 / m) * scale)
        shape = [1] * d
        self.kvec = []
        for ax, f in enumerate(freqs):
            s = shape.copy()
            s[ax] = len(f)
            self.kvec.append(f.reshape(s))
        self.ksq = sum(k**2 for k in self.kvec)
        # 2/3-rule mask for quadratic products (integer index units)
        cut = m // 3
        masks = []
        for ax, f in enumerate(freqs):
            idx = np.rint(f / scale)
            s = shape.copy()
            s[ax] = len(f)
            masks.append((np.abs(idx) <= cut).reshape(s))
        self.dealias_mask = np.ones([len(f) for f in freqs], dtype=bool)
        for mk in masks:
            self.dealias_mask &= mk
        # Coulomb multiplier i*k_j/|k|^2, zero mode zeroed
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_ksq = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
        self.coulomb_mult = [1j * k * inv_ksq for k in self.kvec]


def _ops(f: GridField) -> _SpectralOps:
    return _SpectralOps(f.d, f.m, f.half_width)


def rfft(f: GridField) -> np.ndarray:
    return sfft.rfftn(f.values)


def irfft(spec: np.ndarray, f: GridField) -> np.ndarray:
    return sfft.irfftn(spec, s=f.values.shape)


def heat(f: GridField, t: float) -> GridField:
    """Exact heat semigroup e^{t*Laplacian} via the multiplier exp(-|xi|^2 t)."""
    if t < 0:
        raise ValueError("heat flow time must be nonnegative")
    ops = _ops(f)
    spec = sfft.rfftn(f.values) * np.exp(-ops.ksq * t)
    return f.with_values(sfft.irfftn(spec, s=f.values.shape))


def kernel_convolve(f: GridField) -> np.ndarray:
    """K * f on the periodic grid; returns array of shape (d,) + grid shape.

    Zero mode is projected out, so constants are annihilated.
    """
    ops = _ops(f)
    spec = sfft.rfftn(f.values)
    out = np.empty((f.d,) + f.values.shape)
    for j in range(f.d):
        out[j] = sfft.irfftn(ops.coulomb_mult[j] * spec, s=f.values.shape)
    return out


def bessel_apply(f: GridField, beta: float) -> GridField:
    """Bessel potential (I - Laplacian)^{beta/2} as the multiplier (1+|xi|^2)^{beta/2}."""
    ops = _ops(f)
    spec = sfft.rfftn(f.values) * (1.0 + ops.ksq) ** (beta / 2.0)
    return f.with_values(sfft.irfftn(spec, s=f.values.shape))


# -- field constructors ------------------------------------------------------


def coordinate_grids(m: int, half_width: float, d: int) -> list[np.ndarray]:
    ax = -half_width + (2.0 * half_width / m) * np.arange(m)
    return list(np.meshgrid(*([ax] * d), indexing="ij"))


def gaussian_field(
    m: int,
    half_width: float,
    sigma: float,
    mass: float = 1.0,
    center=None,
    d: int = 2,
) -> GridField:
    """Isotropic Gaussian with per-coordinate variance sigma^2 and given total mass."""
    if center is None:
        center = (0.0,) * d
    grids = coordinate_grids(m, half_width, d)
    r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    vals = mass / (2.0 * np.pi * sigma**2) ** (d / 2.0) * np.exp(-r2 / (2.0 * sigma**2))
    return GridField(vals, half_width)


def constant_field(m: int, half_width: float, value: float, d: int = 2) -> GridField:
    return GridField(np.full((m,) * d, float(value)), half_width)


def delta_field(m: int, half_width: float, mass: float = 1.0, d: int = 2) -> GridField:
    """One grid cell carrying the whole mass (discrete Dirac at the origin node)."""
    vals = np.zeros((m,) * d)
    h = 2.0 * half_width / m
    vals[(m // 2,) * d] = mass / h**d
    return GridField(vals, half_width)
