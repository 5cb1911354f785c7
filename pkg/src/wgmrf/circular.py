"""Wrapped-normal primitives: angle arithmetic, densities, moments, winding weights.

Angles are plain floats / numpy arrays in radians, kept in [0, 2*pi) by
``wrap_angle``. The wrapped normal WN(mu, sigma2) is the distribution of
X mod 2*pi for X ~ N(mu, sigma2); its concentration is c = exp(-sigma2/2).
All density work runs in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConcentrationError,
    DegenerateDirectionError,
    ValidationError,
)

TWO_PI = 2.0 * math.pi

#: winding-number bound used throughout the samplers unless overridden
DEFAULT_K_BOUND = 3


@dataclass(frozen=True)
class WnParams:
    """Wrapped-normal parameters: unwrapped mean ``mu`` and variance ``sigma2``."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma2)):
            raise ValidationError("WnParams requires finite mu and sigma2")
        if self.sigma2 <= 0.0:
            raise ValidationError(f"sigma2 must be > 0, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def concentration(self) -> float:
        """c = exp(-sigma2/2), in (0, 1)."""
        return math.exp(-0.5 * self.sigma2)

    @property
    def mean_direction(self) -> float:
        """mu mod 2*pi."""
        return wrap_angle(self.mu)


def wrap_angle(x):
    """Wrap to [0, 2*pi). Accepts scalars or arrays; rejects non-finite input."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("cannot wrap non-finite angle")
    y = x - TWO_PI * np.floor(x / TWO_PI)
    # floor can land exactly on 2*pi for tiny negative inputs
    y = np.where(y >= TWO_PI, y - TWO_PI, y)
    if y.ndim == 0:
        return float(y)
    return y


def atan2_star(s, c):
    """Two-argument arctangent mapped into [0, 2*pi).

    Returns the unique angle theta in [0, 2*pi) with
    (cos theta, sin theta) proportional to (c, s).
    """
    if s == 0.0 and c == 0.0:
        raise DegenerateDirectionError("mean direction undefined for zero resultant")
    theta = math.atan2(s, c)
    if theta < 0.0:
        theta += TWO_PI
    return theta


def truncation_bound(sigma: float) -> int:
    """Number of winding terms m needed on each side for a given sd.

    Returns ceil(1 + 3*sigma / (2*pi)), at least 1; terms k in [-m, m]
    then carry all but a negligible tail of the wrapped mass.
    """
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    return max(1, math.ceil(1.0 + 3.0 * sigma / TWO_PI))


def wn_log_density(y, params: WnParams, m: int) -> float:
    """Log density of WN(mu, sigma2) at ``y``, truncated to k in [-m, m].

    Uses log-sum-exp over the 2m+1 shifted normal terms; monotone
    non-decreasing in m.
    """
    if m < 1:
        raise ValidationError(f"truncation order m must be >= 1, got {m}")
    y = float(y)
    sd = params.sigma
    k = np.arange(-m, m + 1, dtype=float)
    z = (y + TWO_PI * k - params.mu) / sd
    logs = -0.5 * z * z - 0.5 * math.log(TWO_PI) - math.log(sd)
    hi = np.max(logs)
    return float(hi + np.log(np.sum(np.exp(logs - hi))))


def wn_trig_moment(p: int, params: WnParams) -> tuple[float, float]:
    """p-th circular moment of WN(mu, sigma2): exp(-p^2 sigma2 / 2) * e^{i p mu}.

    Returns (real, imaginary) parts; the p = 1 modulus is the concentration.
    """
    if p < 1:
        raise ValidationError(f"moment order p must be >= 1, got {p}")
    mod = math.exp(-0.5 * p * p * params.sigma2)
    return mod * math.cos(p * params.mu), mod * math.sin(p * params.mu)


def circular_moment_estimates(angles) -> tuple[float, float, float]:
    """Moment estimators (mean direction, concentration, variance) from angles.

    mean_dir = atan2_star(S, C) with C, S the average cosine/sine;
    c_hat = hypot(C, S); sigma2_hat = -2 log c_hat.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise ValidationError("need at least one angle")
    c_bar = float(np.mean(np.cos(angles)))
    s_bar = float(np.mean(np.sin(angles)))
    c_hat = math.hypot(c_bar, s_bar)
    if c_hat < 1e-12:  # resultant at round-off scale
        raise DegenerateConcentrationError(
            "resultant length is zero; variance estimate undefined"
        )
    mean_dir = atan2_star(s_bar, c_bar)
    sigma2_hat = -2.0 * math.log(min(c_hat, 1.0))
    return mean_dir, c_hat, sigma2_hat


def winding_log_weights(y, mean, sd, m: int) -> np.ndarray:
    """Unnormalized log weights of the winding numbers k in [-m, m].

    log w_k = -((y + 2*pi*k - mean) / sd)^2 / 2, columns ordered k = -m..m.
    ``y`` and ``mean`` may be arrays of matching shape; result gains a
    trailing axis of length 2m+1.
    """
    if m < 1:
        raise ValidationError(f"winding bound m must be >= 1, got {m}")
    if sd <= 0.0:
        raise ValidationError(f"sd must be > 0, got {sd}")
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    k = np.arange(-m, m + 1, dtype=float)
    z = (y[..., None] + TWO_PI * k - mean[..., None]) / sd
    return -0.5 * z * z


def winding_weights(y, mean, sd, m: int) -> np.ndarray:
    """Normalized winding-number probabilities, length 2m+1 (k = -m..m).

    Normalization happens in log space, so extreme means/sds that underflow
    the raw normal kernel still yield a proper probability vector.
    """
    logw = winding_log_weights(float(y), float(mean), sd, m)
    logw = logw - np.max(logw)
    w = np.exp(logw)
    return w / np.sum(w)


def sample_windings(logw: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one winding number per row of log-weight matrix ``logw`` (.., 2m+1)."""
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    u = rng.random(w.shape[:-1])
    idx = (np.cumsum(w, axis=-1) < u[..., None]).sum(axis=-1)
    # round-off can push the last cumulative sum below 1
    return np.minimum(idx, 2 * m) - m
