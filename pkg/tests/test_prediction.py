import cmath
import math

import numpy as np
import pytest

from wgmrf.baselines import IidWnSamples, LowRankSamples, lowrank_basis
from wgmrf.errors import ValidationError
from wgmrf.mesh import Mesh, build_planar_mesh, fem_matrices, projection
from wgmrf.model import PosteriorSamples, WgmrfParams, simulate
from wgmrf.prediction import (
    circular_correlation_curve,
    circular_correlation_pair,
    effective_circular_range,
    predict_iid,
    predict_lowrank,
    predict_wgmrf,
)

TWO_PI = 2 * math.pi


def make_wgmrf_samples(mu, sigma2, psi, r, eps):
    eps = np.atleast_2d(eps)
    b = len(eps)

    def arr(v):
        return np.full(b, v, dtype=float) if np.isscalar(v) else np.asarray(v, float)

    return PosteriorSamples(
        iters=np.arange(b),
        mu=arr(mu),
        sigma2=arr(sigma2),
        psi=arr(psi),
        r=arr(r),
        eps=eps,
        seed=0,
        config={},
        data_hash="",
    )


@pytest.fixture
def square_mesh():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Mesh("planar", nodes, np.array([[0, 1, 2], [0, 2, 3]]))


class TestPredictWgmrf:
    def test_single_noiseless_draw(self, square_mesh):
        eps = np.array([0.1, 0.2, -0.3, 0.5])
        s = make_wgmrf_samples(1.0, 2.0, 1.0, 1.0, eps)  # (1-r) sigma2 = 0
        locs = np.array([[0.25, 0.25], [1.0, 1.0]])
        preds = predict_wgmrf(s, square_mesh, locs)
        a = projection(square_mesh, locs).toarray()
        for p, row in zip(preds, a):
            assert p.concentration == pytest.approx(1.0, abs=1e-12)
            assert p.mean_direction == pytest.approx((1.0 + row @ eps) % TWO_PI)

    def test_antipodal_cancellation(self, square_mesh):
        eps = np.zeros((2, 4))
        s = make_wgmrf_samples(np.array([0.25, 0.25 + math.pi]), 1e-12, 1.0,
                               np.array([1.0, 1.0]), eps)
        preds = predict_wgmrf(s, square_mesh, np.array([[0.5, 0.5]]))
        assert preds[0].concentration == 0.0
        assert not preds[0].direction_defined

    def test_three_draw_complex_oracle(self, square_mesh):
        rng = np.random.default_rng(0)
        eps = rng.standard_normal((3, 4))
        mu = np.array([0.5, 1.5, 2.5])
        s2 = np.array([0.5, 1.0, 2.0])
        r = np.array([0.9, 0.8, 0.7])
        s = make_wgmrf_samples(mu, s2, 1.0, r, eps)
        locs = np.array([[0.3, 0.6], [0.7, 0.2]])
        preds = predict_wgmrf(s, square_mesh, locs)
        a = projection(square_mesh, locs).toarray()
        for i, p in enumerate(preds):
            z = sum(
                math.exp(-(1 - r[b]) * s2[b] / 2)
                * cmath.exp(1j * (mu[b] + a[i] @ eps[b]))
                for b in range(3)
            ) / 3
            assert p.concentration == pytest.approx(abs(z), abs=1e-12)
            assert p.mean_direction == pytest.approx(cmath.phase(z) % TWO_PI, abs=1e-12)

    def test_concentration_bounded(self, square_mesh):
        rng = np.random.default_rng(1)
        s = make_wgmrf_samples(
            rng.uniform(0, TWO_PI, 50),
            rng.uniform(0.1, 5.0, 50),
            1.0,
            rng.uniform(0.1, 0.99, 50),
            rng.standard_normal((50, 4)),
        )
        preds = predict_wgmrf(s, square_mesh, np.array([[0.5, 0.5]]))
        assert 0 <= preds[0].concentration <= 1

    def test_empty_samples_rejected(self, square_mesh):
        s = make_wgmrf_samples(np.empty(0), np.empty(0), np.empty(0), np.empty(0),
                               np.empty((0, 4)))
        with pytest.raises(ValidationError):
            predict_wgmrf(s, square_mesh, np.array([[0.5, 0.5]]))

    def test_interpolates_observed_site(self):
        # near-interpolating posterior reproduces the observed angle
        rng = np.random.default_rng(2)
        mesh = build_planar_mesh((0, 0, 10, 10), 1.0, 2.0)
        fem = fem_matrices(mesh)
        locs = rng.uniform(0, 10, size=(30, 2))
        truth = WgmrfParams(mu=3.0, sigma2=1.0, psi=2.0, r=1 - 1e-9)
        y, eps, _ = simulate(mesh, fem, truth, locs, rng, return_latent=True)
        s = make_wgmrf_samples(3.0, 1.0, 2.0, 1 - 1e-9, eps)
        preds = predict_wgmrf(s, mesh, locs)
        for p, obs in zip(preds, y):
            d = abs(cmath.phase(cmath.exp(1j * (p.mean_direction - obs))))
            assert d < 0.05


class TestPredictLowrank:
    def _samples(self, mu, s2, tau2, phi, w, knots):
        w = np.atleast_2d(w)
        b = len(w)

        def arr(v):
            return np.full(b, v, float) if np.isscalar(v) else np.asarray(v, float)

        return LowRankSamples(
            iters=np.arange(b), mu=arr(mu), sigma2=arr(s2), tau2=arr(tau2),
            phi=arr(phi), w=w, knots=np.asarray(knots, float), seed=0, config={},
            data_hash="",
        )

    def test_single_draw_no_nugget(self):
        knots = np.array([[0.0, 0.0], [1.0, 1.0]])
        s = self._samples(0.7, 1.0, 0.0, 0.5, np.array([0.3, -0.2]), knots)
        locs = np.array([[0.2, 0.1]])
        p = predict_lowrank(s, locs)[0]
        assert p.concentration == pytest.approx(1.0, abs=1e-12)
        b = lowrank_basis(locs, knots, 0.5)
        assert p.mean_direction == pytest.approx(
            (0.7 + float((b @ np.array([0.3, -0.2]))[0])) % TWO_PI, abs=1e-12
        )

    def test_zero_weights_mean_only(self):
        knots = np.array([[0.0, 0.0]])
        s = self._samples(
            np.array([1.0, 1.2, 0.8]), 1.0, np.array([0.1, 0.2, 0.3]),
            0.5, np.zeros((3, 1)), knots,
        )
        locs = np.array([[5.0, 5.0]])
        p = predict_lowrank(s, locs)[0]
        z = np.mean(np.exp(-s.tau2 / 2) * np.exp(1j * s.mu))
        assert p.mean_direction == pytest.approx(cmath.phase(z) % TWO_PI, abs=1e-12)

    def test_three_draw_oracle(self):
        rng = np.random.default_rng(3)
        knots = rng.uniform(0, 2, size=(3, 2))
        w = rng.standard_normal((3, 3))
        mu = np.array([0.4, 2.2, 4.0])
        tau2 = np.array([0.3, 0.5, 0.8])
        phi = np.array([0.5, 0.5, 0.9])
        s = self._samples(mu, 1.0, tau2, phi, w, knots)
        locs = rng.uniform(0, 2, size=(2, 2))
        preds = predict_lowrank(s, locs)
        for i, p in enumerate(preds):
            z = sum(
                math.exp(-tau2[b] / 2)
                * cmath.exp(
                    1j * (mu[b] + float((lowrank_basis(locs[i:i+1], knots, phi[b]) @ w[b])[0]))
                )
                for b in range(3)
            ) / 3
            assert p.concentration == pytest.approx(abs(z), abs=1e-12)
            assert p.mean_direction == pytest.approx(cmath.phase(z) % TWO_PI, abs=1e-12)


class TestPredictIid:
    def _samples(self, mu, s2):
        mu = np.atleast_1d(np.asarray(mu, float))
        s2 = np.broadcast_to(np.asarray(s2, float), mu.shape).copy()
        return IidWnSamples(iters=np.arange(len(mu)), mu=mu, sigma2=s2, seed=0,
                            config={}, data_hash="")

    def test_point_mass(self):
        p = predict_iid(self._samples([1.3, 1.3], 1e-15))
        assert p.mean_direction == pytest.approx(1.3, abs=1e-9)
        assert p.concentration == pytest.approx(1.0, abs=1e-9)

    def test_uniform_limit(self):
        p = predict_iid(self._samples([1.0, 2.0], 50.0))
        assert p.concentration < 1e-6

    def test_oracle(self):
        mu = np.array([0.3, 1.3, 2.9])
        s2 = np.array([0.4, 0.9, 1.5])
        p = predict_iid(self._samples(mu, s2))
        z = np.mean(np.exp(-s2 / 2) * np.exp(1j * mu))
        assert p.concentration == pytest.approx(abs(z), abs=1e-12)
        assert p.mean_direction == pytest.approx(cmath.phase(z) % TWO_PI, abs=1e-12)


class TestCircularCorrelationPair:
    def test_identity(self):
        assert circular_correlation_pair(2.0, 1.0) == pytest.approx(1.0, rel=1e-12)

    def test_zero(self):
        assert circular_correlation_pair(2.0, 0.0) == 0.0

    def test_value_at_half(self):
        import mpmath

        mpmath.mp.dps = 30
        expected = float(mpmath.sinh(mpmath.mpf(10) / 3 * 0.5) / mpmath.sinh(mpmath.mpf(10) / 3))
        assert circular_correlation_pair(10 / 3, 0.5) == pytest.approx(expected, rel=1e-12)

    def test_odd(self):
        assert circular_correlation_pair(1.5, -0.4) == pytest.approx(
            -circular_correlation_pair(1.5, 0.4), rel=1e-12
        )

    def test_strictly_increasing(self):
        rho = np.linspace(-1, 1, 1000)
        vals = [circular_correlation_pair(10 / 3, r) for r in rho]
        assert np.all(np.diff(vals) > 0)

    def test_validation(self):
        with pytest.raises(ValidationError):
            circular_correlation_pair(0.0, 0.5)


class TestCorrelationCurve:
    def test_matches_dense_oracle(self):
        mesh = build_planar_mesh((0, 0, 6, 6), 0.75, 1.5)
        fem = fem_matrices(mesh)
        rng = np.random.default_rng(4)
        probes = rng.uniform(1.0, 5.0, size=(10, 2))
        sigma2, psi, r = 1.4, 1.2, 0.9
        s = make_wgmrf_samples(0.0, sigma2, psi, r, np.zeros((1, fem.n_nodes)))
        dists, mean, sd = circular_correlation_curve(s, fem, probes)
        a = projection(mesh, probes).toarray()
        qinv = np.linalg.inv(fem.precision(psi).to_dense())
        sig = r * a @ qinv @ a.T + (1 - r) * np.eye(10)
        iu, ju = np.triu_indices(10, k=1)
        expected = np.sinh(sigma2 * sig[iu, ju]) / math.sinh(sigma2)
        d_exp = np.linalg.norm(probes[iu] - probes[ju], axis=1)
        order = np.argsort(d_exp, kind="stable")
        np.testing.assert_allclose(mean, expected[order], atol=1e-10)
        np.testing.assert_allclose(dists, d_exp[order], atol=1e-12)
        assert np.all(sd == 0.0)

    def test_lag_zero_near_one(self):
        mesh = build_planar_mesh((0, 0, 6, 6), 0.5, 2.0)
        fem = fem_matrices(mesh)
        s = make_wgmrf_samples(0.0, 1.0, 1.0, 0.97, np.zeros((1, fem.n_nodes)))
        probes = np.array([[3.0, 3.0], [3.05, 3.0], [5.0, 3.0]])
        _, mean, _ = circular_correlation_curve(s, fem, probes)
        # nearest pair at the smallest distance
        assert mean[0] > 0.85


class TestEffectiveRange:
    def test_crossing_interpolation(self):
        d = np.linspace(0, 10, 200)
        rho = np.exp(-d / 2)  # crosses 0.05 at 2*ln(20) ~ 5.99
        rng_val = effective_circular_range(d, rho)
        assert rng_val == pytest.approx(2 * math.log(20), abs=0.2)

    def test_no_crossing(self):
        d = np.linspace(0, 3, 50)
        rho = 0.5 + 0.1 * np.exp(-d)
        assert effective_circular_range(d, rho) is None

    def test_noisy_scatter_smoothed(self):
        rng = np.random.default_rng(5)
        d = np.sort(rng.uniform(0, 12, 500))
        rho = np.exp(-d / 2) + rng.normal(0, 0.02, 500)
        val = effective_circular_range(d, rho)
        assert val == pytest.approx(2 * math.log(20), abs=0.75)
