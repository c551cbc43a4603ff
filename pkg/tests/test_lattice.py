import math

import numpy as np
import pytest

from renormflow import (
    BlowUpError,
    CoefficientSequence,
    HierarchicalSite,
    LatticeConfig,
    RngStream,
    block_average,
    distance,
    make_fixed_point,
    mckean_vlasov_check,
    migration_rate,
    simulate_lattice,
    step_lattice,
    uniform_state,
)


def config(N=2, K=2, c=(1.0, 1.0), dt=1e-3, pair=None):
    return LatticeConfig(
        N=N,
        K=K,
        coeffs=CoefficientSequence(tuple(c)),
        g=pair or make_fixed_point(1, 1, 1, 1),
        dt=dt,
    )


class TestSites:
    def test_index_round_trip(self):
        for N, K in [(2, 3), (5, 2), (10, 2)]:
            for idx in range(N**K):
                s = HierarchicalSite.from_index(idx, N, K)
                assert s.index() == idx

    def test_digit_validation(self):
        with pytest.raises(ValueError):
            HierarchicalSite(digits=(0, 3), N=3)
        with pytest.raises(ValueError):
            HierarchicalSite(digits=(), N=3)


class TestDistance:
    def test_equal_sites(self):
        a = HierarchicalSite((1, 2, 0), N=3)
        assert distance(a, a) == 0

    def test_first_digit_differs(self):
        a = HierarchicalSite((0, 2, 1), N=3)
        b = HierarchicalSite((1, 2, 1), N=3)
        assert distance(a, b) == 1

    def test_last_digit_differs(self):
        a = HierarchicalSite((0, 2, 1), N=3)
        b = HierarchicalSite((0, 2, 2), N=3)
        assert distance(a, b) == 3

    def test_ultrametric_fuzz(self):
        gen = np.random.Generator(np.random.Philox(key=1))
        for _ in range(200):
            d1, d2, d3 = (tuple(gen.integers(0, 3, size=4)) for _ in range(3))
            a, b, c = (HierarchicalSite(d, N=3) for d in (d1, d2, d3))
            assert distance(a, b) <= max(distance(a, c), distance(b, c))


class TestMigrationRate:
    def test_hand_computed_values(self):
        cfg = config(N=2, K=2, c=(1.0, 1.0))
        assert migration_rate(cfg, 1) == pytest.approx(0.5 + 0.125)
        assert migration_rate(cfg, 2) == pytest.approx(0.125)

    def test_strictly_decreasing_and_positive(self):
        cfg = config(N=3, K=4, c=(1.0, 0.7, 2.0, 1.1))
        rates = [migration_rate(cfg, d) for d in range(1, 5)]
        assert all(r > 0 for r in rates)
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_vanishing_deepest_coefficient(self):
        cfg = LatticeConfig(
            N=2, K=2, coeffs=CoefficientSequence((1.0, 1e-12)),
            g=make_fixed_point(1, 1, 1, 1), dt=1e-3,
        )
        assert migration_rate(cfg, 2) == pytest.approx(1e-12 * 2 ** (1 - 4))

    def test_range_validation(self):
        cfg = config()
        with pytest.raises(ValueError):
            migration_rate(cfg, 0)
        with pytest.raises(ValueError):
            migration_rate(cfg, 3)


class TestBlockAverage:
    def test_level_zero_is_site_value(self):
        cfg = config(N=3, K=2)
        state = uniform_state(cfg, (1.0, 2.0))
        vals = state.values.copy()
        vals[4] = (7.0, 9.0)
        state = type(state)(values=vals, time=0.0, N=3, K=2)
        site = HierarchicalSite.from_index(4, 3, 2)
        assert block_average(state, 0, site) == (7.0, 9.0)

    def test_top_level_is_global_mean(self):
        cfg = config(N=3, K=2)
        gen = np.random.Generator(np.random.Philox(key=2))
        vals = gen.uniform(0, 5, size=(9, 2))
        state = uniform_state(cfg, (0.0, 0.0))
        state = type(state)(values=vals, time=0.0, N=3, K=2)
        site = HierarchicalSite.from_index(5, 3, 2)
        got = block_average(state, 2, site)
        assert got[0] == pytest.approx(vals[:, 0].mean())
        assert got[1] == pytest.approx(vals[:, 1].mean())

    def test_constant_configuration(self):
        cfg = config(N=2, K=3, c=(1.0, 1.0, 1.0))
        state = uniform_state(cfg, (1.5, 2.5))
        site = HierarchicalSite.from_index(3, 2, 3)
        for k in range(4):
            assert block_average(state, k, site) == (1.5, 2.5)

    def test_matches_brute_force_grouping(self):
        N, K = 3, 3
        cfg = config(N=N, K=K, c=(1, 1, 1))
        gen = np.random.Generator(np.random.Philox(key=3))
        vals = gen.uniform(0, 4, size=(N**K, 2))
        state = uniform_state(cfg, (0.0, 0.0))
        state = type(state)(values=vals, time=0.0, N=N, K=K)
        for idx in (0, 7, 13, 26):
            site = HierarchicalSite.from_index(idx, N, K)
            for k in range(K + 1):
                # brute force: average over sites whose digits agree above k
                members = [
                    j
                    for j in range(N**K)
                    if HierarchicalSite.from_index(j, N, K).digits[k:] == site.digits[k:]
                ]
                ref = vals[members].mean(axis=0)
                got = block_average(state, k, site)
                assert got[0] == pytest.approx(ref[0], rel=1e-12)
                assert got[1] == pytest.approx(ref[1], rel=1e-12)


class TestStepLattice:
    def test_uniform_configuration_is_drift_fixed_point(self):
        cfg = config(N=3, K=2)
        state = uniform_state(cfg, (1.2, 0.7))
        out = step_lattice(state, cfg, noise=None)
        assert np.array_equal(out.values, state.values)

    def test_drift_conserves_total_mass(self):
        cfg = config(N=3, K=2, c=(1.3, 0.7))
        gen = np.random.Generator(np.random.Philox(key=4))
        vals = gen.uniform(0.0, 5.0, size=(9, 2))
        state = uniform_state(cfg, (0.0, 0.0))
        state = type(state)(values=vals, time=0.0, N=3, K=2)
        for _ in range(50):
            state = step_lattice(state, cfg, noise=None)
        for comp in range(2):
            before = vals[:, comp].mean()
            after = state.values[:, comp].mean()
            assert abs(after - before) <= 1e-10 * max(before, 1.0)

    def test_mean_field_reduction_at_depth_one(self):
        # K = 1: drift is c0 * (global mean - site value)
        cfg = config(N=4, K=1, c=(2.0,), dt=1e-2)
        vals = np.array([[1.0, 0.0], [3.0, 1.0], [0.0, 2.0], [2.0, 5.0]])
        state = uniform_state(cfg, (0.0, 0.0))
        state = type(state)(values=vals, time=0.0, N=4, K=1)
        out = step_lattice(state, cfg, noise=None)
        mean = vals.mean(axis=0)
        expected = vals + 2.0 * (mean - vals) * 1e-2
        assert np.allclose(out.values, expected, rtol=0, atol=1e-15)

    def test_noise_path_deterministic(self):
        cfg = config(N=2, K=2, dt=5e-3)
        a = simulate_lattice(cfg, (1.0, 1.0), 0.5, RngStream(31, 0))
        b = simulate_lattice(cfg, (1.0, 1.0), 0.5, RngStream(31, 0))
        assert np.array_equal(a[-1].values, b[-1].values)
        assert np.all(a[-1].values >= 0.0)

    def test_blow_up_guard(self):
        cfg = config(N=2, K=1, c=(1.0,), dt=1e-3)
        huge = np.full((2, 2), 1e13)
        state = uniform_state(cfg, (0.0, 0.0))
        state = type(state)(values=huge, time=0.0, N=2, K=1)
        with pytest.raises(BlowUpError):
            step_lattice(state, cfg, noise=None)

    def test_dt_stability_precondition(self):
        with pytest.raises(ValueError):
            config(N=2, K=1, c=(2000.0,), dt=1e-3)


class TestMeanFieldCheck:
    def test_time_zero_is_exact(self):
        cfg = config(N=4, K=2)
        report = mckean_vlasov_check(cfg, (1.0, 1.0), 0.0, RngStream(5, 0), n_replicates=3)
        assert report.row("mean_1").estimate == 1.0
        assert report.row("var_1").estimate == 0.0
        assert report.row("mixed").estimate == 1.0

    def test_small_lattice_moments(self):
        # desk-scale: N=8, K=2, map-invariant pair, modest horizon
        cfg = config(N=8, K=2, dt=2e-3)
        report = mckean_vlasov_check(cfg, (1.0, 1.0), 6.0, RngStream(6, 0), n_replicates=4)
        m1 = report.row("mean_1")
        assert abs(m1.estimate - 1.0) <= 4 * m1.se + 0.05
        v1 = report.row("var_1")
        assert abs(v1.estimate - 2.0) / 2.0 <= 0.35
        mixed = report.row("mixed")
        assert abs(mixed.estimate - 1.0) <= 4 * mixed.se + 0.1
