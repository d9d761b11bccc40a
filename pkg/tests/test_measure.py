"""Mollification, error norms, Holder diagnostics, and the flat-metric LP."""

import numpy as np
import pytest
from scipy.optimize import linprog

from oracles_util import smooth_random_field
from kslogistic.errors import GridMismatch, ResolutionTooCoarse, UnboundedSupport
from kslogistic.grid import GridField, constant_field, gaussian_field
from kslogistic.kernel import Mollifier
from kslogistic.measure import (
    EmpiricalMeasure, NormSpec, bessel_norm, error_l1lr, holder_seminorm,
    kr_distance, mollify,
)


def brute_flat_metric(points, masses):
    """Dual LP for the flat metric of a small signed measure: maximize
    sum phi_i m_i with |phi_i| <= 1 and |phi_i - phi_j| <= |x_i - x_j|."""
    n = len(masses)
    rows, rhs = [], []
    for i in range(n):
        for j in range(n):
            if i != j:
                row = np.zeros(n)
                row[i], row[j] = 1.0, -1.0
                rows.append(row)
                rhs.append(np.linalg.norm(points[i] - points[j]))
    res = linprog(-np.asarray(masses), A_ub=np.asarray(rows) if rows else None,
                  b_ub=np.asarray(rhs) if rhs else None, bounds=(-1, 1),
                  method="highs")
    assert res.status == 0
    return -res.fun


@pytest.fixture
def grid128():
    return GridField(np.zeros((128, 128)), 4.0)


class TestMollify:
    def test_empty_population(self, grid128):
        mu = EmpiricalMeasure(np.zeros((0, 2)), 10)
        out = mollify(mu, Mollifier(1 / 6, 10), grid128)
        assert np.all(out.values == 0.0)

    def test_single_atom_at_node(self, grid128):
        n = 100
        moll = Mollifier(1 / 6, n)
        x = np.array([[0.0, 0.0]])  # a grid node
        out = mollify(EmpiricalMeasure(x, n), moll, grid128)
        assert out.integral() == pytest.approx(1.0 / n, rel=1e-12)
        # sampled values match theta_N up to the deposition renormalization
        peak = out.values.max() * n
        assert peak == pytest.approx(moll.peak, rel=5e-3)

    def test_two_distant_atoms_disjoint_sum(self, grid128):
        n = 400
        moll = Mollifier(1 / 6, n)
        s = 3 * moll.radius
        atoms = np.array([[-s, 0.0], [s, 0.0]])
        out = mollify(EmpiricalMeasure(atoms, n), moll, grid128)
        assert out.integral() == pytest.approx(2.0 / n, rel=1e-12)
        assert out.norm_linf() * n == pytest.approx(moll.peak, rel=5e-3)

    def test_mass_identity(self, grid128):
        n = 500
        moll = Mollifier(1 / 6, n)
        atoms = np.random.default_rng(0).normal(0, 0.6, (n, 2))
        out = mollify(EmpiricalMeasure(atoms, n), moll, grid128)
        assert abs(out.integral() - 1.0) <= 1e-6

    def test_resolution_guard(self):
        coarse = GridField(np.zeros((32, 32)), 4.0)
        with pytest.raises(ResolutionTooCoarse):
            mollify(EmpiricalMeasure(np.zeros((1, 2)), 1), Mollifier(1 / 6, 4096),
                    coarse)

    def test_boundary_atom_deposits_at_most_its_weight(self, grid128):
        # support straddling the window edge: only the visible part lands,
        # scaled by the atom weight 1/N (regression: it once dropped the 1/N)
        n = 500
        moll = Mollifier(1 / 6, n)
        L = grid128.half_width
        for y in (-L - 0.1, -L + 0.1, L - 0.1):
            out = mollify(EmpiricalMeasure(np.array([[0.0, y]]), n), moll,
                          grid128)
            assert out.integral() <= (1.0 / n) * 1.01
            assert out.values.min() >= 0.0
        far = mollify(EmpiricalMeasure(np.array([[0.0, L + 2.0]]), n), moll,
                      grid128)
        assert far.integral() == 0.0


class TestErrorNorm:
    def test_zero_for_equal_fields(self, grid128):
        f = gaussian_field(128, 4.0, 0.5)
        assert error_l1lr(f, f, NormSpec(8.0, 0.5))[2] == 0.0

    def test_unit_block_closed_form(self):
        m, L, c = 128, 4.0, 0.7
        h = 2 * L / m
        base = gaussian_field(m, L, 0.5)
        vals = base.values.copy()
        k = int(round(1.0 / h))
        vals[:k, :k] += c
        for r in (2.0, 8.0):
            l1, lr, tot = error_l1lr(GridField(vals, L), base, NormSpec(r, 0.5))
            assert l1 == pytest.approx(c, rel=1e-12)
            assert lr == pytest.approx(c, rel=1e-12)  # unit volume: c * 1^(1/r)
            assert tot == pytest.approx(2 * c, rel=1e-12)

    def test_grid_mismatch(self):
        a = constant_field(64, 4.0, 1.0)
        b = constant_field(128, 4.0, 1.0)
        with pytest.raises(GridMismatch):
            error_l1lr(a, b, NormSpec(8.0, 0.5))

    def test_against_refined_quadrature(self):
        # band-limited integrand evaluated on a 4x finer grid as the oracle
        spec = NormSpec(8.0, 0.5)
        coarse = GridField(smooth_random_field(128, 4.0, seed=5), 4.0)
        zero_c = constant_field(128, 4.0, 0.0)
        fine = GridField(smooth_random_field(512, 4.0, seed=5), 4.0)
        zero_f = constant_field(512, 4.0, 0.0)
        got = error_l1lr(coarse, zero_c, spec)[2]
        oracle = error_l1lr(fine, zero_f, spec)[2]
        assert abs(got - oracle) / oracle <= 0.005


class TestHolder:
    def test_constant_is_zero(self):
        assert holder_seminorm(constant_field(64, 2.0, 3.3), 0.5) == 0.0

    def test_linear_function_slope_one(self):
        m, L = 128, 2.0
        ax = -L + (2 * L / m) * np.arange(m)
        f = GridField(np.broadcast_to(ax[:, None], (m, m)).copy(), L)
        assert holder_seminorm(f, 1.0) == pytest.approx(1.0, rel=1e-9)

    def test_sqrt_cusp_refinement(self):
        # |x|^(1/2) cusp: delta=1/2 quotient stable, delta=1 quotient ~ h^(-1/2)
        def cusp(m):
            ax = -2.0 + (4.0 / m) * np.arange(m)
            r = np.abs(ax)
            vals = np.sqrt(np.maximum(1.0 - r, 0.0))[:, None] * np.ones((1, m))
            return GridField(vals, 2.0)

        half_coarse = holder_seminorm(cusp(128), 0.5)
        half_fine = holder_seminorm(cusp(256), 0.5)
        assert abs(half_fine - half_coarse) / half_coarse <= 0.1
        lip_coarse = holder_seminorm(cusp(128), 1.0)
        lip_fine = holder_seminorm(cusp(256), 1.0)
        assert lip_fine / lip_coarse >= 1.3  # ~ sqrt(2) divergence


class TestBessel:
    def test_zero_order_is_lp_norm(self):
        f = gaussian_field(64, 2.0, 0.4)
        assert bessel_norm(f, 0.0, 2.0) == pytest.approx(f.norm_lp(2.0), rel=1e-12)

    def test_smoothing_reduces_norm(self):
        f = GridField(smooth_random_field(128, 4.0, seed=2), 4.0)
        assert bessel_norm(f, -1.0, 2.0) < f.norm_lp(2.0)
        assert bessel_norm(f, 1.0, 2.0) > f.norm_lp(2.0)


class TestKrDistance:
    def test_atoms_matching_field_give_zero(self, grid128):
        # field cells exactly carry the snapped atom masses
        h = grid128.h
        atoms = np.array([[0.0, 0.0], [1.0, 1.0], [-0.5, 0.25]])
        idx = np.floor((atoms + 4.0) / h + 0.5).astype(int)
        vals = np.zeros((128, 128))
        for i, j in idx:
            vals[i, j] += 1.0 / 3.0 / h**2
        res = kr_distance(EmpiricalMeasure(atoms, 3), GridField(vals, 4.0))
        assert res.value <= 1e-9
        assert res.lp_gap <= 1e-9

    @pytest.mark.parametrize("s", [0.5, 1.0, 1.75])
    def test_two_point_masses(self, s, grid128):
        # one atom vs one far cell of equal mass: cost = min(s, 2) = s here,
        # verified against the brute-force dual LP
        h = grid128.h
        cells = int(round(s / h))
        atoms = np.array([[0.0, 0.0]])
        vals = np.zeros((128, 128))
        i0 = 64 + cells  # node at distance cells*h from the origin node
        vals[i0, 64] = 1.0 / h**2
        res = kr_distance(EmpiricalMeasure(atoms, 1), GridField(vals, 4.0))
        assert res.value == pytest.approx(cells * h, rel=1e-9)
        pts = np.array([[0.0, 0.0], [cells * h, 0.0]])
        oracle = brute_flat_metric(pts, np.array([1.0, -1.0]))
        assert res.value == pytest.approx(oracle, rel=1e-9)

    def test_creation_cost_caps_at_one(self, grid128):
        # empty atom set vs unit mass field: pure creation, value 1
        vals = np.zeros((128, 128))
        vals[64, 64] = 1.0 / grid128.h**2
        res = kr_distance(EmpiricalMeasure(np.zeros((0, 2)), 1),
                          GridField(vals, 4.0))
        assert res.value == pytest.approx(1.0, abs=1e-12)

    def test_far_transport_prefers_creation(self, grid128):
        # distance > 2: create/destroy (cost 2) beats moving the mass
        h = grid128.h
        atoms = np.array([[-3.0, 0.0]])
        vals = np.zeros((128, 128))
        vals[120, 64] = 1.0 / h**2  # ~6 units away
        res = kr_distance(EmpiricalMeasure(atoms, 1), GridField(vals, 4.0))
        assert res.value == pytest.approx(2.0, rel=1e-9)

    def test_unbounded_support_rejected(self, grid128):
        atoms = np.array([[10.0, 0.0]])
        with pytest.raises(UnboundedSupport):
            kr_distance(EmpiricalMeasure(atoms, 1), grid128)

    def test_mollification_gap_bound(self, grid128):
        # KR(mu_N, theta_N * mu_N) <= N^(-alpha) * m within LP tolerance
        rng = np.random.default_rng(7)
        for n in (200, 800):
            moll = Mollifier(1 / 6, n)
            atoms = rng.normal(0, 0.5, (n, 2))
            mu = EmpiricalMeasure(atoms, n)
            u_n = mollify(mu, moll, grid128)
            res = kr_distance(mu, u_n, max_side=48)
            assert res.value <= moll.radius * mu.mass * (1 + 1e-6)
            assert res.lp_gap <= 1e-9

    def test_triangle_chain(self, grid128):
        # KR(mu, u) <= KR(mu, u_N) + ||u_N - u||_L1 (dual pairing bound)
        rng = np.random.default_rng(9)
        n = 300
        moll = Mollifier(1 / 6, n)
        atoms = rng.normal(0, 0.5, (n, 2))
        mu = EmpiricalMeasure(atoms, n)
        u_n = mollify(mu, moll, grid128)
        u = gaussian_field(128, 4.0, 0.5)
        lhs = kr_distance(mu, u, max_side=48).value
        gap = kr_distance(mu, u_n, max_side=48).value
        l1 = error_l1lr(u_n, u, NormSpec(8.0, 0.5))[0]
        assert lhs <= gap + l1 * (1 + 1e-6) + 1e-9
