"""Shared test machinery: successive-conditional (Geweke-style) checks.

One cycle regenerates data plus consistent latents from the current
parameters, then applies one full Gibbs sweep given that data. If every
update leaves the joint distribution invariant, the parameter marginals
across cycles equal their priors; the chains are thinned before the
two-sample tests because successive cycles are autocorrelated.
"""

import math

import numpy as np
from scipy.stats import ks_2samp

from wgmrf.circular import wrap_angle
from wgmrf.mesh import build_planar_mesh, fem_matrices, projection
from wgmrf.model import WgmrfConfig, WgmrfSampler
from wgmrf.sparse import sqrt_solve_transpose

TWO_PI = 2 * math.pi


def geweke_wgmrf(n_cycles=30_000, thin=30, seed=31, n_sites=20):
    """Chain and prior samples of (mu, sigma2, psi, r) for the WGMRF sampler."""
    rng = np.random.default_rng(seed)
    mesh = build_planar_mesh((0, 0, 1, 1), 1 / 3, 0.0)
    fem = fem_matrices(mesh)
    locs = np.random.default_rng(5).uniform(0, 1, size=(n_sites, 2))
    A = projection(mesh, locs)
    delta = 2.0
    cfg = WgmrfConfig(
        iterations=10, burn_in=5, thinning=1, mu_prior_scale=0.75,
        sigma2_shape=4.0, sigma2_rate=4.0, psi_upper=delta,
        step_psi=1.2, step_r=1.2,
    )
    sampler = WgmrfSampler(np.zeros(n_sites), A, fem.precision, cfg, delta)
    state = sampler.initial_state()

    def draw_prior(rng):
        s2 = cfg.sigma2_rate / rng.gamma(cfg.sigma2_shape)
        mu = cfg.mu_prior_scale * math.sqrt(s2) * rng.standard_normal()
        return mu, s2, rng.uniform(0, delta), rng.uniform(0, 1)

    state.mu, state.sigma2, state.psi, state.r = draw_prior(rng)
    sampler._set_psi(state.psi)
    rec = np.empty((n_cycles, 4))
    for t in range(n_cycles):
        raw = sqrt_solve_transpose(sampler._fq, rng.standard_normal(fem.n_nodes))
        eps = math.sqrt(state.r * state.sigma2) * raw
        x = (
            state.mu
            + A @ eps
            + math.sqrt((1 - state.r) * state.sigma2) * rng.standard_normal(n_sites)
        )
        y = wrap_angle(x)
        sampler.Y = y
        state.eps = eps
        state.K = np.clip(np.round((x - y) / TWO_PI), -3, 3).astype(np.int64)
        sampler.sweep(state, rng)
        rec[t] = (state.mu, state.sigma2, state.psi, state.r)
    prior = np.array([draw_prior(rng) for _ in range(n_cycles)])
    return rec[::thin], prior


def geweke_lowrank(n_cycles=30_000, thin=30, seed=17, n_sites=20, n_knots=3):
    """Chain and prior samples of (mu, sigma2, tau2, phi) for the low-rank sampler."""
    from wgmrf.baselines import LowRankConfig, LowRankSampler, lowrank_basis

    rng = np.random.default_rng(seed)
    locs = np.random.default_rng(7).uniform(0, 1, size=(n_sites, 2))
    knots = np.random.default_rng(8).uniform(0, 1, size=(n_knots, 2))
    phi_upper = 0.4
    cfg = LowRankConfig(
        n_knots=n_knots, iterations=10, burn_in=5, thinning=1,
        mu_prior_scale=0.75, sigma2_shape=4.0, sigma2_rate=4.0,
        tau2_shape=4.0, tau2_rate=4.0, phi_upper=phi_upper, step_phi=1.2,
    )
    sampler = LowRankSampler(np.zeros(n_sites), locs, knots, cfg, phi_upper)
    state = sampler.initial_state()

    def draw_prior(rng):
        s2 = cfg.sigma2_rate / rng.gamma(cfg.sigma2_shape)
        t2 = cfg.tau2_rate / rng.gamma(cfg.tau2_shape)
        mu = cfg.mu_prior_scale * rng.standard_normal()
        return mu, s2, t2, rng.uniform(0, phi_upper)

    state["mu"], state["sigma2"], state["tau2"], state["phi"] = draw_prior(rng)
    rec = np.empty((n_cycles, 4))
    for t in range(n_cycles):
        w = math.sqrt(state["sigma2"]) * rng.standard_normal(n_knots)
        b = lowrank_basis(locs, knots, state["phi"])
        x = state["mu"] + b @ w + math.sqrt(state["tau2"]) * rng.standard_normal(n_sites)
        y = wrap_angle(x)
        sampler.Y = y
        state["W"] = w
        state["K"] = np.clip(np.round((x - y) / TWO_PI), -3, 3).astype(np.int64)
        sampler.sweep(state, rng)
        rec[t] = (state["mu"], state["sigma2"], state["tau2"], state["phi"])
    prior = np.array([draw_prior(rng) for _ in range(n_cycles)])
    return rec[::thin], prior


def ks_pvalues(chain, prior, names):
    return {name: ks_2samp(chain[:, i], prior[:, i]).pvalue
            for i, name in enumerate(names)}
