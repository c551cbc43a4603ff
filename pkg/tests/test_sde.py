import math

import numpy as np
import pytest

from renormflow import (
    ForbiddenStartError,
    RngStream,
    SdeParams,
    batch_means_se,
    default_burn_in,
    default_thin,
    make_fixed_point,
    make_perturbed_fixed_point,
    sample_equilibrium,
    simulate_path,
    step,
    validate_moments,
)
from renormflow._kernels import py_equilibrium_samples
from renormflow.diffusions import BoundaryProperty, DiffusionPair


def mixture(b1=1.0, b2=1.0, c1=1.0, c2=1.0):
    return make_fixed_point(b1, b2, c1, c2)


class TestStep:
    def test_zero_noise_zero_diffusion_keeps_state(self):
        # at x = theta the drift vanishes; on the axes so does the noise term
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=0.1, g=mixture())
        assert step((1.0, 1.0), p, (0.0, 0.0)) == (1.0, 1.0)

    def test_pure_drift_from_origin(self):
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=0.1, g=mixture())
        assert step((0.0, 0.0), p, (0.37, -1.4)) == (0.1, 0.1)

    def test_catalytic_hand_computed(self):
        g = make_fixed_point(1, 0, 0, 1)  # (x1, x1 x2)
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=0.01, g=g)
        for z in (-0.7, 0.0, 1.3):
            got = step((1.0, 0.0), p, (z, 0.0))
            assert got[0] == pytest.approx(max(0.0, 1.0 + z * math.sqrt(0.02)), abs=1e-15)
            assert got[1] == pytest.approx(0.01, abs=1e-15)

    def test_clamps_to_quadrant(self):
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=0.1, g=mixture())
        got = step((0.5, 0.5), p, (-50.0, -50.0))
        assert got == (0.0, 0.0)


class TestSimulatePath:
    def test_step_count_and_determinism(self):
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=0.01, g=mixture())
        a = simulate_path((2.0, 2.0), p, 0.01, RngStream(1, 0))
        assert a.shape == (2, 2)
        b = simulate_path((2.0, 2.0), p, 1.0, RngStream(5, 3))
        c = simulate_path((2.0, 2.0), p, 1.0, RngStream(5, 3))
        assert b.shape == (101, 2)
        assert np.array_equal(b, c)

    def test_axis_absorption_exact(self):
        # center on the vertical axis, start on it: first coordinate pinned
        g = mixture(1, 1, 0, 0)
        p = SdeParams(c=1.0, theta=(0.0, 1.0), dt=1e-3, g=g)
        path = simulate_path((0.0, 2.0), p, 3.0, RngStream(2, 0))
        assert np.all(path[:, 0] == 0.0)
        assert np.all(path[:, 1] >= 0.0)
        p2 = SdeParams(c=0.5, theta=(1.0, 0.0), dt=1e-3, g=g)
        path2 = simulate_path((3.0, 0.0), p2, 3.0, RngStream(2, 1))
        assert np.all(path2[:, 1] == 0.0)

    def test_forbidden_corner_start(self):
        g = make_fixed_point(0, 0, 1, 1)
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=1e-3, g=g)
        with pytest.raises(ForbiddenStartError):
            simulate_path((0.0, 0.0), p, 1.0, RngStream(0, 0))
        # fine when the center sits on the boundary
        p_edge = SdeParams(c=1.0, theta=(0.0, 1.0), dt=1e-3, g=g)
        simulate_path((0.0, 0.0), p_edge, 0.01, RngStream(0, 0))

    def test_nonnegativity_fuzz(self):
        gen = np.random.Generator(np.random.Philox(key=99))
        for trial in range(5):
            b1, b2, c1, c2 = gen.uniform(0.0, 2.0, size=4) + 0.05
            c = float(gen.uniform(0.3, 2.0))
            theta = tuple(gen.uniform(0.0, 3.0, size=2))
            p = SdeParams(c=c, theta=theta, dt=2e-3, g=mixture(b1, b2, c1, c2))
            path = simulate_path((1.0, 1.0), p, 2.0, RngStream(17, trial))
            assert np.all(path >= 0.0)
            assert np.all(np.isfinite(path))


class TestPythonKernelParity:
    def test_family_pair_matches_generic_path_bitwise(self):
        # the compiled kernel and the closure fallback must consume draws
        # identically, so a family pair gives bit-identical samples on both
        fam = make_fixed_point(1.0, 2.0, 0.5, 0.25)
        closure_pair = DiffusionPair(
            g1=fam.g1, g2=fam.g2, bp1=fam.bp1, bp2=fam.bp2,
            growth=fam.growth, infinity_slopes=fam.infinity_slopes, family=None,
        )
        p_fast = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-2, g=fam)
        p_slow = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-2, g=closure_pair)
        a = sample_equilibrium(p_fast, 200, burn_in=1.0, thin=0.1, rng=RngStream(3, 1))
        b = sample_equilibrium(p_slow, 200, burn_in=1.0, thin=0.1, rng=RngStream(3, 1))
        assert np.array_equal(a.points, b.points)


class TestSampleEquilibrium:
    def test_determinism(self):
        p = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-3, g=mixture())
        a = sample_equilibrium(p, 500, rng=RngStream(21, 4))
        b = sample_equilibrium(p, 500, rng=RngStream(21, 4))
        assert np.array_equal(a.points, b.points)
        assert a.n == 500

    def test_mean_matches_center(self):
        p = SdeParams(c=1.0, theta=(1.0, 2.0), dt=1e-3, g=mixture())
        m = sample_equilibrium(p, 30_000, rng=RngStream(8, 0))
        mean = m.mean()
        se1 = batch_means_se(m.points[:, 0])
        se2 = batch_means_se(m.points[:, 1])
        assert abs(mean[0] - 1.0) < 3 * se1 + 0.02 * 2.0
        assert abs(mean[1] - 2.0) < 3 * se2 + 0.02 * 3.0

    def test_axis_center_mean_decays(self):
        # center (0, 1): the first coordinate relaxes to zero in mean
        g = mixture(1, 1, 0, 0)
        p = SdeParams(c=1.0, theta=(0.0, 1.0), dt=1e-3, g=g)
        m = sample_equilibrium(p, 20_000, rng=RngStream(12, 0))
        assert m.points[:, 0].mean() < 0.05

    def test_moment_report_degenerate_center(self):
        g = mixture(1, 1, 0, 0)
        p = SdeParams(c=1.0, theta=(0.0, 0.0), dt=1e-3, g=g)
        m = sample_equilibrium(p, 2_000, burn_in=25.0, rng=RngStream(13, 0))
        report = validate_moments(m)
        for row in report:
            assert row.estimate == 0.0
            assert row.residual == 0.0
            assert row.z == 0.0

    def test_growth_class_must_fit_drift(self):
        from renormflow import PolynomialDiffusion, make_polynomial

        quad = make_polynomial(PolynomialDiffusion(alpha=(1.5, 0), beta=(1, 1), gamma=(0, 0)))
        with pytest.raises(ValueError):
            SdeParams(c=1.0, theta=(1.0, 1.0), dt=1e-3, g=quad)


class TestMeanReversion:
    def test_decay_envelope(self):
        # start offset from the center: the mean offset decays at least like
        # exp(-c t) (up to noise)
        p = SdeParams(c=1.0, theta=(1.0, 1.0), dt=1e-3, g=mixture())
        n_chains = 60
        horizon = 3.0
        n_steps = int(horizon / p.dt)
        snap = [0.5, 1.0, 2.0, 3.0]
        sums = {t: np.zeros(2) for t in snap}
        for j in range(n_chains):
            path = simulate_path((6.0, 6.0), p, horizon, RngStream(31, j))
            for t in snap:
                sums[t] += path[int(round(t / p.dt))]
        for t in snap:
            mean_offset = sums[t] / n_chains - np.array([1.0, 1.0])
            bound = 5.0 * math.exp(-p.c * t)
            # the scheme tracks the envelope exactly in mean, so allow ~3 SE
            # of cross-chain noise on top of it
            assert np.all(mean_offset < bound + 1.0), (t, mean_offset, bound)


class TestDefaults:
    def test_burn_in_values(self):
        assert default_burn_in(1.0, math.exp(-6)) == pytest.approx(6.0)
        assert default_burn_in(2.0, math.exp(-6)) == pytest.approx(3.0)
        assert default_burn_in(0.5, 0.01) == pytest.approx(math.log(100.0) / 0.5)
        assert default_thin(2.0) == 0.5

    def test_burn_in_validation(self):
        with pytest.raises(ValueError):
            default_burn_in(0.0)
        with pytest.raises(ValueError):
            default_burn_in(1.0, 1.5)


def test_batch_means_se_accounts_for_correlation():
    gen = np.random.Generator(np.random.Philox(key=5))
    # AR(1) series: naive iid SE underestimates; batch means should not
    rho = 0.9
    n = 20_000
    eps = gen.normal(size=n)
    x = np.empty(n)
    x[0] = eps[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    naive = x.std(ddof=1) / math.sqrt(n)
    bm = batch_means_se(x)
    assert bm > 2.0 * naive
