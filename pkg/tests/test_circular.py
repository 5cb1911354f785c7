import math

import numpy as np
import pytest
from scipy.stats import norm

from wgmrf.circular import (
    WnParams,
    atan2_star,
    circular_moment_estimates,
    truncation_bound,
    winding_weights,
    wn_log_density,
    wn_trig_moment,
    wrap_angle,
)
from wgmrf.errors import (
    DegenerateConcentrationError,
    DegenerateDirectionError,
    ValidationError,
)

TWO_PI = 2 * math.pi


def brute_force_log_density(y, mu, sigma2, m=100):
    """Independent oracle: direct scipy normal-pdf summation."""
    sd = math.sqrt(sigma2)
    ks = np.arange(-m, m + 1)
    return math.log(np.sum(norm.pdf(y + TWO_PI * ks, loc=mu, scale=sd)))


class TestWrapAngle:
    def test_identity(self):
        assert wrap_angle(0.0) == 0.0

    def test_odd_multiple(self):
        assert wrap_angle(7 * math.pi) == pytest.approx(math.pi, abs=1e-12)

    def test_negative(self):
        assert wrap_angle(-0.5) == pytest.approx(TWO_PI - 0.5, abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-50, 50, size=200)
        once = wrap_angle(x)
        assert np.array_equal(wrap_angle(once), once)
        assert np.all((once >= 0) & (once < TWO_PI))

    def test_period_invariance(self):
        y = 1.234
        for k in (-3, -1, 1, 5):
            assert wrap_angle(y + TWO_PI * k) == pytest.approx(y, abs=1e-9)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            wrap_angle(math.inf)


class TestAtan2Star:
    def test_east(self):
        assert atan2_star(0.0, 1.0) == 0.0

    def test_quarter_turn(self):
        assert atan2_star(1.0, 0.0) == pytest.approx(math.pi / 2)

    def test_third_quadrant(self):
        assert atan2_star(-1.0, -1.0) == pytest.approx(5 * math.pi / 4)

    def test_degenerate(self):
        with pytest.raises(DegenerateDirectionError):
            atan2_star(0.0, 0.0)

    def test_codomain(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            s, c = rng.standard_normal(2)
            theta = atan2_star(s, c)
            assert 0 <= theta < TWO_PI
            norm_sc = math.hypot(s, c)
            assert math.cos(theta) == pytest.approx(c / norm_sc, abs=1e-12)
            assert math.sin(theta) == pytest.approx(s / norm_sc, abs=1e-12)


class TestWnLogDensity:
    def test_peak_value(self):
        p = WnParams(mu=1.3, sigma2=0.01)
        got = wn_log_density(1.3, p, m=1)
        assert got == pytest.approx(math.log(1 / math.sqrt(TWO_PI * 0.01)), abs=1e-8)

    def test_uniform_limit(self):
        p = WnParams(mu=2.0, sigma2=40.0)
        m = truncation_bound(math.sqrt(40.0))
        for y in np.linspace(0, TWO_PI, 9, endpoint=False):
            assert math.exp(wn_log_density(y, p, m)) == pytest.approx(
                1 / TWO_PI, abs=1e-6
            )

    def test_symmetry_about_mean_direction(self):
        p = WnParams(mu=2.1, sigma2=0.8)
        for d in (0.3, 1.0, 2.5):
            left = wn_log_density(wrap_angle(2.1 - d), p, m=4)
            right = wn_log_density(wrap_angle(2.1 + d), p, m=4)
            assert left == pytest.approx(right, abs=1e-12)

    def test_against_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            y = rng.uniform(0, TWO_PI)
            mu = rng.uniform(-5, 10)
            s2 = rng.uniform(0.05, 9.0)
            got = wn_log_density(y, WnParams(mu, s2), m=100)
            assert got == pytest.approx(brute_force_log_density(y, mu, s2), abs=1e-10)

    def test_monotone_in_m(self):
        p = WnParams(mu=0.4, sigma2=4.0)
        vals = [wn_log_density(5.0, p, m) for m in range(1, 12)]
        assert np.all(np.diff(vals) >= 0)

    def test_m_validation(self):
        with pytest.raises(ValidationError):
            wn_log_density(1.0, WnParams(0.0, 1.0), m=0)

    def test_normalization_quadrature(self):
        for s2 in (0.09, 1.0, 4.0, 16.0):
            m = truncation_bound(math.sqrt(s2)) + 2
            p = WnParams(mu=1.0, sigma2=s2)
            ys = np.linspace(0, TWO_PI, 4001)
            dens = np.array([math.exp(wn_log_density(y, p, m)) for y in ys])
            total = np.trapezoid(dens, ys)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_truncation_adequacy(self):
        # the adaptive bound reproduces the m = 100 oracle to 1e-8 for the
        # sd range the samplers use
        for sd in (0.3, 1.0, 2.0, 3.0):
            m = truncation_bound(sd)
            p_grid = np.linspace(0, TWO_PI, 7, endpoint=False)
            for y in p_grid:
                for mu in p_grid:
                    p = WnParams(mu, sd * sd)
                    a = wn_log_density(y, p, m)
                    b = wn_log_density(y, p, 100)
                    assert abs(a - b) < 1e-8


class TestTrigMoment:
    def test_near_point_mass(self):
        re, im = wn_trig_moment(1, WnParams(0.0, 1e-12))
        assert re == pytest.approx(1.0, abs=1e-9)
        assert im == pytest.approx(0.0, abs=1e-12)

    def test_modulus_is_concentration(self):
        p = WnParams(mu=0.73, sigma2=2.0)
        re, im = wn_trig_moment(1, p)
        assert math.hypot(re, im) == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert math.hypot(re, im) == pytest.approx(p.concentration, rel=1e-12)

    def test_second_moment(self):
        re, im = wn_trig_moment(2, WnParams(math.pi / 4, 1.0))
        assert re == pytest.approx(0.0, abs=1e-12)
        assert im == pytest.approx(math.exp(-2.0), rel=1e-12)

    def test_bad_order(self):
        with pytest.raises(ValidationError):
            wn_trig_moment(0, WnParams(0.0, 1.0))


class TestMomentEstimates:
    def test_constant_sample(self):
        mean_dir, c_hat, s2_hat = circular_moment_estimates(np.full(50, 0.8))
        assert mean_dir == pytest.approx(0.8, abs=1e-12)
        assert c_hat == pytest.approx(1.0, abs=1e-12)
        assert s2_hat == pytest.approx(0.0, abs=1e-9)

    def test_balanced_degenerate(self):
        angles = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
        with pytest.raises(DegenerateConcentrationError):
            circular_moment_estimates(angles)

    def test_empty(self):
        with pytest.raises(ValidationError):
            circular_moment_estimates([])

    @pytest.mark.slow
    def test_moment_consistency_large_sample(self):
        # 1e6 wrapped draws recover mean direction and concentration
        # within 3 standard errors
        rng = np.random.default_rng(42)
        mu, s2 = 2.2, 1.21
        n = 1_000_000
        y = wrap_angle(rng.normal(mu, math.sqrt(s2), size=n))
        mean_dir, c_hat, _ = circular_moment_estimates(y)
        c = math.exp(-s2 / 2)
        c2 = math.exp(-2 * s2)
        # var(cos Y) = (1 + c2 cos 2mu)/2 - c^2 cos^2 mu, analogous for sin
        var_cos = (1 + c2 * math.cos(2 * mu)) / 2 - (c * math.cos(mu)) ** 2
        var_sin = (1 - c2 * math.cos(2 * mu)) / 2 - (c * math.sin(mu)) ** 2
        se_c = math.sqrt((var_cos + var_sin) / n)
        assert abs(c_hat - c) < 3 * se_c
        se_dir = math.sqrt((var_cos + var_sin) / n) / c
        d = (mean_dir - mu + math.pi) % TWO_PI - math.pi
        assert abs(d) < 3 * se_dir


class TestTruncationBound:
    def test_ceiling_rule(self):
        # ceil(1 + 3 sigma / (2 pi)), floored at 1
        for sd in (0.2, 0.5, 1.0, 1.9220, 3.0, 4.0):
            assert truncation_bound(sd) == max(1, math.ceil(1 + 3 * sd / TWO_PI))

    def test_monotone(self):
        sds = np.linspace(0.05, 8, 200)
        bounds = [truncation_bound(s) for s in sds]
        assert np.all(np.diff(bounds) >= 0)

    def test_positive_required(self):
        with pytest.raises(ValidationError):
            truncation_bound(0.0)
        with pytest.raises(ValidationError):
            truncation_bound(-1.0)


class TestWindingWeights:
    def test_central_dominance(self):
        w = winding_weights(1.0, 1.0, 0.1, 3)
        assert w[3] == pytest.approx(1.0, abs=1e-12)

    def test_shifted_dominance(self):
        w = winding_weights(0.5, 0.5 + TWO_PI, 0.1, 3)
        assert np.argmax(w) == 3 + 1
        assert w[4] == pytest.approx(1.0, abs=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = winding_weights(
                rng.uniform(0, TWO_PI), rng.uniform(-10, 10), rng.uniform(0.05, 6), 3
            )
            assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
            assert np.all(w >= 0)

    def test_underflow_handled(self):
        # every raw kernel value underflows in linear space
        w = winding_weights(0.0, 1000.0, 0.05, 3)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.isfinite(w))

    def test_against_high_precision_oracle(self):
        import mpmath

        mpmath.mp.dps = 50
        y, mean, sd, m = 0.0, math.pi, 4.0, 3
        raw = [
            mpmath.exp(-((y + TWO_PI * k - mean) ** 2) / (2 * sd * sd))
            for k in range(-m, m + 1)
        ]
        total = sum(raw)
        expected = np.array([float(r / total) for r in raw])
        got = winding_weights(y, mean, sd, m)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_reflection_symmetry(self):
        # y - mean = -pi makes the kernel arguments odd in 2k - 1, so
        # weights pair as k <-> 1 - k
        w = winding_weights(0.0, math.pi, 4.0, 3)
        for k in (-2, -1, 0):
            assert w[3 + k] == pytest.approx(w[3 + 1 - k], abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError):
            winding_weights(0.0, 0.0, -1.0, 3)
        with pytest.raises(ValidationError):
            winding_weights(0.0, 0.0, 1.0, 0)


class TestWnParams:
    def test_invariants(self):
        p = WnParams(mu=-2.0, sigma2=2.0)
        assert 0 < p.concentration < 1
        assert 0 <= p.mean_direction < TWO_PI

    def test_bad_sigma2(self):
        with pytest.raises(ValidationError):
            WnParams(mu=0.0, sigma2=0.0)
