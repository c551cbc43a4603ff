import math

import numpy as np
import pytest

from renormflow import (
    CoefficientSequence,
    DivergenceError,
    EffectiveBoundary,
    GridFunction,
    InfinityAnchorError,
    McParams,
    OperatorDomainError,
    PolynomialDiffusion,
    RngStream,
    SdeParams,
    blow_up_index,
    closed_form,
    compactify,
    expand,
    fixed_point_residual,
    grid_from_pair,
    iterate_closed_form,
    iterate_grid,
    make_fixed_point,
    make_perturbed_fixed_point,
    make_polynomial,
    mixture_limit,
    renormalize_at,
    renormalize_grid,
    sample_equilibrium,
    validate_moments,
)
from renormflow.diffusions import BoundaryProperty, DiffusionPair


class TestClosedForm:
    def test_mixture_family_invariant(self):
        p = PolynomialDiffusion(alpha=(0, 0), beta=(1, 2), gamma=(3, 4))
        out = closed_form(1.0, p)
        assert out.alpha == p.alpha and out.beta == p.beta and out.gamma == p.gamma

    def test_half_quadratic_doubles(self):
        p = PolynomialDiffusion(alpha=(0.5, 0.5), beta=(1, 1), gamma=(1, 1))
        out = closed_form(1.0, p)
        assert out.alpha == (1.0, 1.0)
        assert out.beta == (2.0, 2.0)
        assert out.gamma == (2.0, 2.0)

    def test_per_component_factors(self):
        p = PolynomialDiffusion(alpha=(0.5, 0.25), beta=(1, 1), gamma=(0, 0))
        out = closed_form(1.0, p)
        assert out.beta[0] == pytest.approx(2.0)
        assert out.beta[1] == pytest.approx(4.0 / 3.0)

    def test_divergence(self):
        with pytest.raises(DivergenceError):
            closed_form(1.0, PolynomialDiffusion(alpha=(1.0, 0.0), beta=(1, 1), gamma=(0, 0)))
        with pytest.raises(DivergenceError):
            closed_form(0.5, PolynomialDiffusion(alpha=(0.2, 0.7), beta=(1, 1), gamma=(0, 0)))


class TestIterateClosedForm:
    def test_blow_up_at_two(self):
        p = PolynomialDiffusion(alpha=(0.5, 0.5), beta=(1, 1), gamma=(1, 1))
        res = iterate_closed_form(CoefficientSequence.constant(1.0, 5), p, 5)
        assert res.blow_up_index == 2
        assert len(res.iterates) == 1
        assert res.iterates[0].beta == (2.0, 2.0)

    def test_mixture_never_blows_up(self):
        p = PolynomialDiffusion(alpha=(0, 0), beta=(1, 1), gamma=(1, 1))
        res = iterate_closed_form(CoefficientSequence.constant(1.0, 50), p, 50)
        assert res.blow_up_index is None
        for it in res.iterates:
            assert it.beta == (1.0, 1.0) and it.gamma == (1.0, 1.0)

    def test_quarter_quadratic_factors(self):
        p = PolynomialDiffusion(alpha=(0.25, 0.0), beta=(1, 1), gamma=(0, 0))
        res = iterate_closed_form(CoefficientSequence.constant(1.0, 3), p, 3)
        assert res.blow_up_index is None
        factors = [it.beta[0] for it in res.iterates]
        assert factors == pytest.approx([4.0 / 3.0, 2.0, 4.0])
        res4 = iterate_closed_form(CoefficientSequence.constant(1.0, 4), p, 4)
        assert res4.blow_up_index == 4

    def test_composition_equals_iteration(self):
        # the k-th iterate must be literally closed_form applied k times
        cs = CoefficientSequence((1.0, 0.7, 2.0, 1.3))
        p = PolynomialDiffusion(alpha=(0.3, 0.2), beta=(0.5, 1.5), gamma=(2, 1))
        res = iterate_closed_form(cs, p, 4)
        cur = p
        for k, it in enumerate(res.iterates):
            cur = closed_form(cs[k], cur)
            assert cur.alpha == it.alpha
            assert cur.beta == it.beta
            assert cur.gamma == it.gamma

    def test_blow_up_matches_direct_formula_on_random_cases(self):
        gen = np.random.Generator(np.random.Philox(key=42))
        for _ in range(20):
            alpha = (float(gen.uniform(0.05, 1.5)), float(gen.uniform(0.05, 1.5)))
            n = 12
            cs = CoefficientSequence(tuple(gen.uniform(0.2, 3.0, size=n)))
            p = PolynomialDiffusion(alpha=alpha, beta=(1, 1), gamma=(0, 0))
            res = iterate_closed_form(cs, p, n)
            # independent oracle: scan the partial sums directly
            a = max(alpha)
            expected = None
            s = 0.0
            for k in range(n):
                s += 1.0 / cs[k]
                if a * s >= 1.0:
                    expected = k + 1
                    break
            assert res.blow_up_index == expected
            assert blow_up_index(alpha, cs) == expected


class TestCompactification:
    def test_round_trip_exact(self):
        gen = np.random.Generator(np.random.Philox(key=11))
        pts = gen.uniform(0.0, 50.0, size=(1000, 2))
        for x1, x2 in pts:
            y = compactify((x1, x2))
            back = expand(y)
            assert back[0] == pytest.approx(x1, rel=1e-12, abs=1e-12)
            assert back[1] == pytest.approx(x2, rel=1e-12, abs=1e-12)

    def test_known_values(self):
        assert compactify((0.0, 0.0)) == (0.0, 0.0)
        assert compactify((1.0, 3.0)) == (0.5, 0.75)
        assert expand((0.5, 0.75)) == (1.0, 3.0)

    def test_anchor_rejected(self):
        with pytest.raises(InfinityAnchorError):
            expand((1.0, 0.5))


class TestGridFunction:
    def grid(self, m=9):
        return grid_from_pair(make_fixed_point(1, 1, 1, 1), m=m)

    def test_encode_mixture_exact_at_nodes(self):
        gf = self.grid()
        pair = make_fixed_point(1, 1, 1, 1)
        for i in range(gf.m):
            for j in range(gf.m):
                x = gf.node_point(i, j)
                assert gf.values[i, j, 0] == pytest.approx(pair.evaluate(x)[0], rel=1e-14)

    def test_axis_structure(self):
        gf = self.grid()
        assert np.all(gf.values[0, :, 0] == 0.0)
        assert np.all(gf.values[:, 0, 1] == 0.0)

    def test_mixture_exact_everywhere(self):
        # in the normalized chart the mixture family is bilinear cell by
        # cell, so the grid reproduces it to rounding at arbitrary points
        gf = grid_from_pair(make_fixed_point(1.5, 0.5, 2.0, 0.25), m=9)
        pair = make_fixed_point(1.5, 0.5, 2.0, 0.25)
        gen = np.random.Generator(np.random.Philox(key=3))
        pts = np.vstack(
            [gen.uniform(0.0, 40.0, size=(200, 2)), [[500.0, 0.5], [0.25, 300.0], [2e4, 3e4]]]
        )
        for x1, x2 in pts:
            got = gf.evaluate((x1, x2))
            ref = pair.evaluate((x1, x2))
            assert got[0] == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
            assert got[1] == pytest.approx(ref[1], rel=1e-12, abs=1e-12)

    def test_perturbed_pair_interpolates_closely(self):
        pert = make_perturbed_fixed_point(1, 1, 1, 1, weight=1.0)
        gf = grid_from_pair(pert, m=17)
        gen = np.random.Generator(np.random.Philox(key=4))
        for x1, x2 in gen.uniform(0.05, 6.0, size=(150, 2)):
            got = gf.evaluate((x1, x2))
            ref = pert.evaluate((x1, x2))
            assert got[0] == pytest.approx(ref[0], rel=0.01, abs=0.02)

    def test_serialization_round_trip_exact(self):
        gf = renormalize_grid(
            1.0, self.grid(5), McParams(n_samples=64, dt=5e-3, seed=9)
        )
        text = gf.dumps()
        back = GridFunction.loads(text)
        assert np.array_equal(back.values, gf.values)
        assert np.array_equal(back.se, gf.se)
        assert back.slopes == gf.slopes
        assert back.boundary == gf.boundary
        assert back.dumps() == text

    def test_to_pair_matches_grid_eval(self):
        gf = self.grid()
        pair = gf.to_pair()
        for x in [(0.3, 0.7), (2.0, 5.0), (40.0, 1.0)]:
            assert pair.evaluate(x) == gf.evaluate(x)


class TestRenormalizeAt:
    def test_fixed_point_maps_to_itself(self):
        pair = make_fixed_point(1, 1, 1, 1)
        (e1, e2), (s1, s2) = renormalize_at(
            1.0, pair, (1.0, 1.0), McParams(n_samples=50_000, seed=2)
        )
        assert abs(e1 - 2.0) < max(4 * s1, 0.1)
        assert abs(e2 - 2.0) < max(4 * s2, 0.1)

    def test_degenerate_center_maps_to_zero(self):
        pair = make_fixed_point(1, 1, 0, 0)
        (e1, e2), _ = renormalize_at(
            1.0, pair, (0.0, 0.0), McParams(n_samples=2_000, burn_in=25.0, seed=2)
        )
        assert e1 < 1e-6 and e2 < 1e-6

    def test_requires_certificate(self):
        bare = DiffusionPair(
            g1=lambda x1, x2: x1,
            g2=lambda x1, x2: x2,
            bp1=BoundaryProperty.D1,
            bp2=BoundaryProperty.D2,
        )
        with pytest.raises(OperatorDomainError):
            renormalize_at(1.0, bare, (1.0, 1.0), McParams(n_samples=10))

    def test_growth_class_outside_domain(self):
        quad = make_polynomial(PolynomialDiffusion(alpha=(1.0, 0), beta=(1, 1), gamma=(0, 0)))
        with pytest.raises(OperatorDomainError):
            renormalize_at(0.75, quad, (1.0, 1.0), McParams(n_samples=10))


class TestRenormalizeGrid:
    def small_mc(self):
        return McParams(n_samples=400, dt=2e-3, seed=4)

    def test_boundary_rows_columns(self):
        # joint zero set = both axes: all four axis lines vanish structurally
        gf = grid_from_pair(make_fixed_point(0, 0, 1, 1), m=6)
        out = renormalize_grid(1.0, gf, self.small_mc())
        assert np.all(out.values[0, :, :] == 0.0)
        assert np.all(out.values[:, 0, :] == 0.0)
        assert out.boundary is EffectiveBoundary.A1_UNION_A2
        # origin-only zero set: g2 alive on the x1=0 column
        gf2 = grid_from_pair(make_fixed_point(1, 1, 0, 0), m=6)
        out2 = renormalize_grid(1.0, gf2, self.small_mc())
        assert np.all(out2.values[0, :, 0] == 0.0)
        assert np.all(out2.values[:, 0, 1] == 0.0)
        assert np.all(out2.values[0, 1:, 1] > 0.0)
        assert np.all(out2.values[1:, 0, 0] > 0.0)

    def test_slopes_carried(self):
        gf = grid_from_pair(make_fixed_point(1, 1, 1, 1), m=5)
        out = renormalize_grid(1.0, gf, self.small_mc())
        assert out.slopes == gf.slopes

    def test_worker_count_invariance(self):
        gf = grid_from_pair(make_fixed_point(1, 1, 1, 1), m=5)
        a = renormalize_grid(1.0, gf, self.small_mc(), workers=1)
        b = renormalize_grid(1.0, gf, self.small_mc(), workers=2)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.se, b.se)

    def test_iterate_grid_length_and_first_step(self):
        gf = grid_from_pair(make_fixed_point(1, 1, 1, 1), m=5)
        mc = self.small_mc()
        outs = iterate_grid(CoefficientSequence.constant(1.0, 3), gf, 3, mc)
        assert len(outs) == 3
        single = renormalize_grid(1.0, gf, mc)
        assert np.array_equal(outs[0].values, single.values)

    def test_growth_envelope_scales_through_map(self):
        # image of a certified pair satisfies the envelope with scaled constants
        pair = make_polynomial(
            PolynomialDiffusion(alpha=(0.25, 0.25), beta=(1, 1), gamma=(0.5, 0.5))
        )
        gf = grid_from_pair(
            make_fixed_point(1, 1, 0.5, 0.5), m=7
        )  # same slopes shape, certified a=0
        out = renormalize_grid(1.0, gf, McParams(n_samples=2_000, dt=2e-3, seed=5))
        a, C = 0.0, 3.0
        c = 1.0
        a_out = c * a / (c - a)
        C_out = c * C / (c - a)
        for i in range(out.m):
            for j in range(out.m):
                x1, x2 = out.node_point(i, j)
                bound = C_out * (1 + x1) * (1 + x2) + a_out * (x1**2 + x2**2)
                total = out.values[i, j].sum()
                assert total <= bound * 1.05 + 4 * out.se[i, j].sum()


class TestMixtureLimit:
    def test_perturbed_pair_limit(self):
        pair = make_perturbed_fixed_point(1, 1, 1, 1, weight=1.0)
        lim = mixture_limit(pair.infinity_slopes, (1.0, 1.0))
        assert lim == (2.0, 2.0)
        lim2 = mixture_limit(pair.infinity_slopes, (2.0, 3.0))
        assert lim2 == (2.0 + 6.0, 3.0 + 6.0)


class TestValidateMoments:
    def test_self_consistent_second_moment(self):
        pair = make_fixed_point(1, 1, 1, 1)
        params = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-3, g=pair)
        m = sample_equilibrium(params, 20_000, rng=RngStream(6, 0))
        report = validate_moments(m)
        names = [r.name for r in report]
        assert names == ["mean_1", "mean_2", "mixed", "second_1", "second_2"]
        assert report.passes(z_max=4.0, rel_allowance=0.02)

    def test_scales(self):
        pair = make_fixed_point(1, 1, 1, 1)
        params = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-3, g=pair)
        m = sample_equilibrium(params, 1_000, rng=RngStream(6, 1))
        report = validate_moments(m)
        by_name = {r.name: r for r in report}
        assert by_name["mean_2"].scale == pytest.approx(3.0)
        assert by_name["mixed"].scale == pytest.approx(3.0)


class TestFixedPointResidual:
    def test_empty_probes_rejected(self):
        pair = make_fixed_point(1, 1, 1, 1)
        with pytest.raises(ValueError):
            fixed_point_residual(1.0, pair, [], McParams(n_samples=10))

    def test_non_fixed_point_detected(self):
        # quadratic first component doubles under the map at c=1, so the
        # residual is about g1/h at the probe: far above the invariance level
        pair = make_polynomial(
            PolynomialDiffusion(alpha=(0.5, 0.0), beta=(1, 1), gamma=(0, 0))
        )
        res = fixed_point_residual(
            1.0, pair, [(1.0, 1.0)], McParams(n_samples=40_000, seed=7)
        )
        assert res > 0.2  # exact drift would be g1(1,1)/h = 1.5/4 = 0.375

    def test_fixed_point_small_residual(self):
        pair = make_fixed_point(1, 1, 1, 1)
        res = fixed_point_residual(
            1.0, pair, [(0.5, 0.5), (1.0, 1.0)], McParams(n_samples=40_000, seed=8),
            workers=2,
        )
        assert res <= 0.05
