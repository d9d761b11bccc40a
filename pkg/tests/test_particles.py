"""Branching particle system: labels, drift, diffusion, demography, reproducibility."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from kslogistic import particles as P
from kslogistic.errors import PopulationExplosion
from kslogistic.grid import GridField, constant_field
from kslogistic.kernel import CoulombKernel, Cutoff, Mollifier, build_kernel_table

paths = st.lists(st.integers(1, 2), min_size=0, max_size=12).map(tuple)


class TestLabels:
    @given(st.integers(1, 1000), paths)
    def test_encode_decode_roundtrip(self, root, path):
        lab = P.UhnLabel(root, path)
        assert P.UhnLabel.decode(*lab.encode()) == lab
        assert P.UhnLabel.from_string(str(lab)) == lab

    @given(st.integers(1, 100), paths.filter(lambda p: len(p) > 0))
    def test_mother_drops_last_entry(self, root, path):
        lab = P.UhnLabel(root, path)
        assert lab.mother() == P.UhnLabel(root, path[:-1])
        assert lab.mother().is_ancestor_of(lab)

    def test_children(self):
        lab = P.UhnLabel(5, (2, 1))
        c1, c2 = lab.children()
        assert (c1.path, c2.path) == ((2, 1, 1), (2, 1, 2))
        assert c1.mother() == lab and c2.mother() == lab

    def test_initial_particles_have_no_mother(self):
        with pytest.raises(ValueError):
            P.UhnLabel(3).mother()


@pytest.fixture(scope="module")
def two_body():
    n, alpha = 1024, 1 / 6
    moll = Mollifier(alpha=alpha, n_particles=n)
    table = build_kernel_table(CoulombKernel(2), moll, 4.0, moll.radius / 8)
    return n, moll, table


class TestDrift:
    def test_self_interaction_vanishes(self, two_body):
        n, moll, table = two_body
        pop = P.Population.initial(np.array([[0.3, -0.2]]), seed=1)
        d = P.drift_at(pop, table, Cutoff(10.0), np.array([0.3, -0.2]), chi=2.0)
        assert np.all(d == 0.0)

    def test_empty_population(self, two_body):
        _, _, table = two_body
        pop = P.Population.initial(np.zeros((1, 2)), seed=1)
        pop.positions = np.zeros((0, 2))
        pop.root = pop.root[:0]
        d = P.drift_at(pop, table, Cutoff(10.0), np.zeros(2), chi=2.0)
        assert np.all(d == 0.0)

    def test_two_body_closed_form(self, two_body):
        n, moll, table = two_body
        s = 3 * moll.radius
        pop = P.Population.initial(np.array([[0.0, 0.0], [s, 0.0]]), seed=1)
        pop.n_initial = n  # weights 1/N with only two alive particles
        chi = 1.7
        d0 = P.drift_at(pop, table, Cutoff(10.0), np.array([0.0, 0.0]), chi)
        expect = chi / (n * 2 * np.pi * s)
        assert d0[0] == pytest.approx(expect, rel=1e-3)  # attraction toward +x
        assert abs(d0[1]) <= 1e-12
        d1 = P.drift_at(pop, table, Cutoff(10.0), np.array([s, 0.0]), chi)
        np.testing.assert_allclose(d1, -d0, atol=1e-15)

    def test_saturation_bound(self, two_body):
        n, _, table = two_body
        pop = P.Population.initial(np.zeros((1, 2)), seed=1)
        chi, a = 5.0, 2.0
        fake = np.array([100.0, -50.0])
        clamped = chi * Cutoff(a).apply(fake)
        assert np.abs(clamped).max() <= chi * (a + 1)
        assert np.abs(clamped).max() == chi * a

    def test_numba_and_lookup_paths_agree(self, two_body):
        n, moll, table = two_body
        rng = np.random.default_rng(3)
        pos = rng.normal(0, 0.3, (200, 2))
        pop = P.Population.initial(pos, seed=1)
        pop.n_initial = n
        raw = P.interaction_sum(pop, table)
        for i in (0, 57, 199):
            via = table.lookup(pos[i] - pos).sum(axis=0) / n
            np.testing.assert_allclose(raw[i], via, atol=1e-6)


class TestEmStep:
    def test_zero_dt_identity(self):
        pp = P.ParticleParams(0.0, 0.0, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=0.0)
        pop = P.Population.initial(np.ones((5, 2)), seed=2)
        out = P.em_step(pop, None, Cutoff(1.0), pp)
        np.testing.assert_array_equal(out.positions, pop.positions)

    def test_diffusion_variance(self):
        # chi = 0: per-coordinate increment variance must be 2 dt
        dt = 1e-3
        pp = P.ParticleParams(0.0, 0.0, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=dt)
        pop = P.Population.initial(np.zeros((2000, 2)), seed=3)
        incs = []
        for _ in range(50):
            new = P.em_step(pop, None, Cutoff(1.0), pp)
            incs.append(new.positions - pop.positions)
            pop = new
        incs = np.concatenate(incs, axis=0)
        n = incs.shape[0]
        se = 2 * dt * np.sqrt(2.0 / n)  # SE of a variance estimate
        for j in range(2):
            assert abs(incs[:, j].var() - 2 * dt) <= 3 * se
        assert abs(incs.mean()) <= 4 * np.sqrt(2 * dt / n)

    def test_frozen_noise_attractive_pair_contracts(self, two_body):
        n, moll, table = two_body
        s0 = 4 * moll.radius
        pp = P.ParticleParams(chi=50.0, nu=0.0, mu=0.0, alpha=1 / 6,
                              a_cutoff=5.0, dt=1e-2)
        pop = P.Population.initial(np.array([[0.0, 0.0], [s0, 0.0]]), seed=4)
        pop.n_initial = n
        dist = s0
        for _ in range(10):
            pop = P.em_step(pop, table, Cutoff(5.0), pp, noise=0.0)
            new_dist = np.linalg.norm(pop.positions[0] - pop.positions[1])
            assert new_dist < dist  # strictly decreasing outside the mollifier
            dist = new_dist


class TestDemography:
    def test_no_rates_no_change(self):
        pp = P.ParticleParams(0.0, 0.0, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=1e-2)
        pop = P.Population.initial(np.ones((7, 2)), seed=5)
        out = P.demographic_step(pop, None, pp)
        assert out.n_alive == 7 and out.births == 0 and out.deaths == 0

    def test_yule_growth(self):
        # division-only: E[m_T] = e^(nu T); 50 replicas of N=500
        nu, t_end = 0.5, 1.0
        pp = P.ParticleParams(0.0, nu, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=1e-3)
        masses = []
        for rep in range(50):
            res = P.simulate(np.zeros((500, 2)), pp, t_end, [t_end],
                             rng_seed=1000 + rep)
            masses.append(res.snapshots[0][1].mass)
        expect = np.exp(nu * t_end)
        var = expect * (expect - 1.0) / 500
        se = np.sqrt(var / len(masses))
        assert abs(np.mean(masses) - expect) <= 4 * se

    def test_death_only_monotone(self):
        pp = P.ParticleParams(0.0, 0.0, 3.0, alpha=1 / 6, a_cutoff=5.0, dt=1e-2)
        field = constant_field(64, 4.0, 1.0)
        pop = P.Population.initial(np.random.default_rng(0).normal(0, 1, (500, 2)),
                                   seed=6)
        sizes = [pop.n_alive]
        for _ in range(30):
            pop = P.demographic_step(pop, field, pp)
            sizes.append(pop.n_alive)
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))
        assert pop.births == 0

    def test_thinning_against_frozen_density(self):
        # frozen u = c: per-step death probability is 1 - exp(-mu (c^A) dt)
        mu, dt, c, a = 2.0, 1e-3, 3.0, 5.0
        pp = P.ParticleParams(0.0, 0.0, mu, alpha=1 / 6, a_cutoff=a, dt=dt)
        field = constant_field(64, 4.0, c)
        pop = P.Population.initial(
            np.random.default_rng(1).normal(0, 0.5, (100_000, 2)), seed=7)
        out = P.demographic_step(pop, field, pp)
        p_obs = (pop.n_alive - out.n_alive) / pop.n_alive
        p_exp = -np.expm1(-mu * min(c, a) * dt)
        se = np.sqrt(p_exp * (1 - p_exp) / pop.n_alive)
        assert abs(p_obs - p_exp) <= 3 * se

    def test_thinning_saturates_at_cutoff(self):
        # u above the cap: the rate must use c ^ A, not c
        mu, dt, c, a = 2.0, 1e-3, 50.0, 5.0
        pp = P.ParticleParams(0.0, 0.0, mu, alpha=1 / 6, a_cutoff=a, dt=dt)
        field = constant_field(64, 4.0, c)
        pop = P.Population.initial(
            np.random.default_rng(2).normal(0, 0.5, (100_000, 2)), seed=8)
        out = P.demographic_step(pop, field, pp)
        p_obs = (pop.n_alive - out.n_alive) / pop.n_alive
        p_exp = -np.expm1(-mu * a * dt)
        se = np.sqrt(p_exp * (1 - p_exp) / pop.n_alive)
        assert abs(p_obs - p_exp) <= 3 * se

    def test_division_conserves_position_and_labels(self):
        pp = P.ParticleParams(0.0, 200.0, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=0.05)
        pos = np.arange(10, dtype=float).reshape(5, 2)
        pop = P.Population.initial(pos, seed=9)
        out = P.demographic_step(pop, None, pp)
        assert out.divisions > 0
        labels = out.labels()
        for lab, x in zip(labels, out.positions):
            if lab.path:  # a child sits exactly at its mother's position
                np.testing.assert_array_equal(x, pos[lab.root - 1])
        # no alive particle is an ancestor of another alive particle
        for a in labels:
            for b in labels:
                assert not a.is_ancestor_of(b)

    def test_population_explosion_guard(self):
        pp = P.ParticleParams(0.0, 5000.0, 0.0, alpha=1 / 6, a_cutoff=1.0,
                              dt=0.05, max_particles_factor=2)
        pop = P.Population.initial(np.zeros((50, 2)), seed=10)
        with pytest.raises(PopulationExplosion):
            for _ in range(50):
                pop = P.demographic_step(pop, None, pp)


class TestSimulate:
    def test_free_particles_match_gaussian_law(self):
        # chi = 0: N independent Brownian paths; terminal law N(x0, 2T Id)
        t_end = 0.3
        pp = P.ParticleParams(0.0, 0.0, 0.0, alpha=1 / 6, a_cutoff=1.0, dt=1e-3)
        res = P.simulate(np.zeros((2000, 2)), pp, t_end, [t_end], rng_seed=11)
        term = res.snapshots[0][1].positions
        for j in range(2):
            stat = stats.kstest(term[:, j], "norm", args=(0.0, np.sqrt(2 * t_end)))
            assert stat.pvalue > 0.01

    def test_seed_reproducibility(self):
        pp = P.ParticleParams(0.5, 0.3, 0.5, alpha=1 / 6, a_cutoff=3.0, dt=1e-2)
        tmpl = GridField(np.zeros((128, 128)), 4.0)
        init = P.sample_gaussian_initial(200, 0.4, seed=42)
        a = P.simulate(init, pp, 0.2, [0.1, 0.2], rng_seed=77, grid_template=tmpl)
        b = P.simulate(init, pp, 0.2, [0.1, 0.2], rng_seed=77, grid_template=tmpl)
        for (ta, pa, fa), (tb, pb, fb) in zip(a.snapshots, b.snapshots):
            assert ta == tb
            np.testing.assert_array_equal(pa.positions, pb.positions)
            np.testing.assert_array_equal(pa.path_bits, pb.path_bits)
            np.testing.assert_array_equal(fa.values, fb.values)

    def test_mass_moment_uniform_in_n(self):
        # E[m^q] stays flat across N (desk-scale check of moment uniformity)
        pp = P.ParticleParams(0.0, 0.4, 0.6, alpha=1 / 6, a_cutoff=3.0, dt=5e-3)
        tmpl = GridField(np.zeros((128, 128)), 4.0)
        by_n = {}
        for n in (100, 200, 400):
            moments = {1: [], 2: [], 4: []}
            for rep in range(8):
                init = P.sample_gaussian_initial(n, 0.4, seed=500 + rep)
                res = P.simulate(init, pp, 0.25, [0.25], rng_seed=900 + rep,
                                 grid_template=tmpl)
                m = res.snapshots[0][1].mass
                for q in moments:
                    moments[q].append(m**q)
            by_n[n] = {q: np.mean(v) for q, v in moments.items()}
        for q in (1, 2, 4):
            vals = [by_n[n][q] for n in by_n]
            assert max(vals) / min(vals) < 1.5

    def test_desk_scale_budget_n2000(self):
        # full interaction run at N=2000 must stay inside the 60 s budget
        import time
        pp = P.ParticleParams(1.0, 0.1, 1.0, alpha=1 / 6, a_cutoff=3.0,
                              dt=0.25 / 256)
        tmpl = GridField(np.zeros((128, 128)), 4.0)
        init = P.sample_gaussian_initial(2000, 0.4, seed=1)
        t0 = time.time()
        P.simulate(init, pp, 0.25, [0.25], rng_seed=5, grid_template=tmpl)
        assert time.time() - t0 < 60.0

    def test_spatial_second_moment_bounded(self):
        pp = P.ParticleParams(0.0, 0.2, 0.2, alpha=1 / 6, a_cutoff=3.0, dt=5e-3)
        tmpl = GridField(np.zeros((128, 128)), 4.0)
        sups = {}
        for n in (100, 200, 400):
            worst = 0.0
            for rep in range(4):
                init = P.sample_gaussian_initial(n, 0.4, seed=100 + rep)
                res = P.simulate(init, pp, 0.25, np.linspace(0, 0.25, 6),
                                 rng_seed=300 + rep, grid_template=tmpl)
                for _, pop, _ in res.snapshots:
                    if pop.n_alive:
                        mom = (pop.positions**2).sum(axis=1).mean() * pop.mass
                        worst = max(worst, mom)
            sups[n] = worst
        vals = list(sups.values())
        assert max(vals) / min(vals) < 2.0
