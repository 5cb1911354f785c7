"""Circular kriging and the induced circular correlation surface.

Predictions summarize the posterior of e^{iY(s0)}: every retained draw
contributes a unit-modulus-bounded term

    exp(-v_b / 2) * exp(i * angle_b)

where v_b is the draw's conditional data-layer variance and angle_b its
conditional mean. The Monte Carlo average (g_c, g_s) yields the mean
direction atan2*(g_s, g_c) and the concentration hypot(g_c, g_s) <= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import IidWnSamples, LowRankSamples, lowrank_basis
from .circular import atan2_star
from .errors import ValidationError
from .mesh import FemTriple, Mesh, pairwise_geodesic, projection
from .model import PosteriorSamples
from .sparse import factorize, solve

#: below this resultant length the mean direction is reported as undefined
_DEGENERATE_CONCENTRATION = 1e-14


@dataclass(frozen=True)
class CircularPrediction:
    """Posterior predictive summary at one location."""

    location: tuple
    mean_direction: float
    concentration: float
    direction_defined: bool = True


def _summaries(g_c, g_s, locations):
    out = []
    for i in range(len(g_c)):
        conc = math.hypot(g_c[i], g_s[i])
        if conc < _DEGENERATE_CONCENTRATION:
            out.append(
                CircularPrediction(tuple(locations[i]), 0.0, 0.0, direction_defined=False)
            )
        else:
            out.append(
                CircularPrediction(
                    tuple(locations[i]), atan2_star(g_s[i], g_c[i]), min(conc, 1.0)
                )
            )
    return out


def predict_wgmrf(samples: PosteriorSamples, mesh: Mesh, new_locations,
                  chunk: int = 512) -> list[CircularPrediction]:
    """Kriging under the wrapped GMRF: factor exp(-(1-r) sigma^2 / 2)."""
    if samples.n_draws == 0:
        raise ValidationError("no posterior draws")
    new_locations = np.asarray(new_locations, dtype=float)
    A0 = projection(mesh, new_locations)
    n_loc = len(new_locations)
    g_c = np.zeros(n_loc)
    g_s = np.zeros(n_loc)
    B = samples.n_draws
    factors = np.exp(-0.5 * (1.0 - samples.r) * samples.sigma2)
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        angles = samples.mu[lo:hi][None, :] + A0 @ samples.eps[lo:hi].T
        g_c += (factors[lo:hi] * np.cos(angles)).sum(axis=1)
        g_s += (factors[lo:hi] * np.sin(angles)).sum(axis=1)
    return _summaries(g_c / B, g_s / B, new_locations)


def predict_lowrank(samples: LowRankSamples, new_locations,
                    chunk: int = 512) -> list[CircularPrediction]:
    """Kriging under the low-rank model: factor exp(-tau^2 / 2)."""
    if samples.n_draws == 0:
        raise ValidationError("no posterior draws")
    new_locations = np.asarray(new_locations, dtype=float)
    n_loc = len(new_locations)
    g_c = np.zeros(n_loc)
    g_s = np.zeros(n_loc)
    B = samples.n_draws
    factors = np.exp(-0.5 * samples.tau2)
    # the basis depends on each draw's phi; phi only moves on accepted
    # proposals, so consecutive draws usually share it
    lo = 0
    while lo < B:
        hi = lo + 1
        while hi < B and samples.phi[hi] == samples.phi[lo]:
            hi += 1
        B0 = lowrank_basis(new_locations, samples.knots, samples.phi[lo])
        angles = samples.mu[lo:hi][None, :] + B0 @ samples.w[lo:hi].T
        g_c += (factors[lo:hi] * np.cos(angles)).sum(axis=1)
        g_s += (factors[lo:hi] * np.sin(angles)).sum(axis=1)
        lo = hi
    return _summaries(g_c / B, g_s / B, new_locations)


def predict_iid(samples: IidWnSamples) -> CircularPrediction:
    """One prediction shared by all locations: factor exp(-sigma^2 / 2)."""
    if samples.n_draws == 0:
        raise ValidationError("no posterior draws")
    factors = np.exp(-0.5 * samples.sigma2)
    g_c = float(np.mean(factors * np.cos(samples.mu)))
    g_s = float(np.mean(factors * np.sin(samples.mu)))
    return _summaries(np.array([g_c]), np.array([g_s]), [(math.nan, math.nan)])[0]


def circular_correlation_pair(sigma2: float, rho_linear: float) -> float:
    """Induced circular correlation sinh(sigma^2 rho) / sinh(sigma^2).

    Odd and strictly increasing in rho; 1 at rho = 1, 0 at rho = 0.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be > 0, got {sigma2}")
    return math.sinh(sigma2 * rho_linear) / math.sinh(sigma2)


def circular_correlation_curve(samples: PosteriorSamples, fem: FemTriple,
                               probe_locations, max_draws: int = 200,
                               rng: np.random.Generator | None = None):
    """Posterior mean/sd of the pairwise circular correlation at probe pairs.

    For each retained draw, the linear covariance entries at probe pairs
    come from sparse solves restricted to the probe projection rows:
    Sigma = r A0 Q^{-1} A0^T + (1 - r) I, mapped through the sinh ratio.
    Raw values are reported unclamped (SPDE entries can slightly exceed 1
    near lag zero). Returns (distances, mean, sd) over the upper-triangle
    pairs, ordered by (i, j).
    """
    probe_locations = np.asarray(probe_locations, dtype=float)
    n_probe = len(probe_locations)
    if n_probe < 2:
        raise ValidationError("need at least two probe locations")
    mesh = fem.mesh
    A0 = projection(mesh, probe_locations).toarray()
    B = samples.n_draws
    if B > max_draws:
        if rng is None:
            rng = np.random.default_rng(0)
        take = np.sort(rng.choice(B, size=max_draws, replace=False))
    else:
        take = np.arange(B)
    iu, ju = np.triu_indices(n_probe, k=1)
    acc = np.zeros(len(iu))
    acc2 = np.zeros(len(iu))
    prev_psi = None
    fq = None
    template = None
    for b in take:
        psi = samples.psi[b]
        if psi != prev_psi:
            q = fem.precision(psi)
            if template is None:
                template = factorize(q)
                fq = template
            else:
                from .sparse import refactorize

                fq = refactorize(template, q)
            z = np.column_stack([solve(fq, A0[i]) for i in range(n_probe)])
            s_lin = A0 @ z
            prev_psi = psi
        sig = samples.r[b] * s_lin + (1.0 - samples.r[b]) * np.eye(n_probe)
        rho_c = np.sinh(samples.sigma2[b] * sig[iu, ju]) / math.sinh(samples.sigma2[b])
        acc += rho_c
        acc2 += rho_c * rho_c
    mean = acc / len(take)
    var = np.maximum(acc2 / len(take) - mean ** 2, 0.0)
    dists = pairwise_geodesic(probe_locations, probe_locations, mesh.mode)[iu, ju]
    order = np.argsort(dists, kind="stable")
    return dists[order], mean[order], np.sqrt(var)[order]


def _isotonic_decreasing(y, weights=None):
    """Pool-adjacent-violators fit of a non-increasing sequence."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    level = list(y)
    weight = list(w)
    count = [1] * len(y)
    i = 0
    while i < len(level) - 1:
        if level[i] < level[i + 1] - 1e-15:
            merged = (level[i] * weight[i] + level[i + 1] * weight[i + 1]) / (
                weight[i] + weight[i + 1]
            )
            level[i] = merged
            weight[i] += weight[i + 1]
            count[i] += count[i + 1]
            del level[i + 1], weight[i + 1], count[i + 1]
            if i > 0:
                i -= 1
        else:
            i += 1
    return np.repeat(level, count)


def effective_circular_range(distances, rho_mean, threshold: float = 0.05,
                             n_bins: int = 40):
    """Distance at which the monotone-smoothed correlation decays to 0.05.

    Bins the pairwise scatter by distance, fits a non-increasing curve by
    pooled adjacent violators, and linearly interpolates the first
    crossing. Returns None when the curve never crosses the threshold
    within the probed distances.
    """
    distances = np.asarray(distances, dtype=float)
    rho_mean = np.asarray(rho_mean, dtype=float)
    if len(distances) != len(rho_mean) or len(distances) == 0:
        raise ValidationError("distances and correlations must align")
    edges = np.linspace(distances.min(), distances.max(), n_bins + 1)
    idx = np.clip(np.digitize(distances, edges) - 1, 0, n_bins - 1)
    centers, means, counts = [], [], []
    for b in range(n_bins):
        sel = idx == b
        if np.any(sel):
            centers.append(0.5 * (edges[b] + edges[b + 1]))
            means.append(rho_mean[sel].mean())
            counts.append(sel.sum())
    centers = np.asarray(centers)
    smooth = _isotonic_decreasing(np.asarray(means), np.asarray(counts, dtype=float))
    below = smooth <= threshold
    if not np.any(below):
        return None
    k = int(np.argmax(below))
    if k == 0:
        return float(centers[0])
    x0, x1 = centers[k - 1], centers[k]
    y0, y1 = smooth[k - 1], smooth[k]
    if y0 == y1:
        return float(x1)
    return float(x0 + (y0 - threshold) * (x1 - x0) / (y0 - y1))
