"""Circular predictive metrics, spatial-block folds, and exploratory tools.

Metrics follow the usual circular conventions: differences are mapped to
(-pi, pi] by the two-argument arctangent, errors are summarized both on
the sine/cosine scale (SC-RMSE) and the angular scale (CRMSE, CMAE), and
agreement is measured by the resultant length of the errors and the
Jammalamadaka-Sarma circular correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circular import atan2_star
from .errors import ValidationError
from .mesh import pairwise_geodesic

TWO_PI = 2.0 * math.pi


def circular_difference(pred, obs):
    """Shortest signed angular distance pred - obs, in (-pi, pi].

    The antipodal boundary maps to +pi.
    """
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    raw = pred - obs
    d = np.arctan2(np.sin(raw), np.cos(raw))
    d = np.where(d <= -math.pi, math.pi, d)
    if d.ndim == 0:
        return float(d)
    return d


@dataclass(frozen=True)
class MetricsReport:
    """The six circular validation metrics for one prediction set."""

    sc_rmse: float
    crmse: float
    cmae: float
    resultant_length: float
    circular_correlation: float  # NaN when the sin-deviations degenerate
    avg_concentration: float

    def as_dict(self):
        return {
            "sc_rmse": self.sc_rmse,
            "crmse": self.crmse,
            "cmae": self.cmae,
            "resultant_length": self.resultant_length,
            "circular_correlation": self.circular_correlation,
            "avg_concentration": self.avg_concentration,
        }


def circular_mean(angles) -> float:
    angles = np.asarray(angles, dtype=float)
    return atan2_star(float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles))))


def metrics_suite(pred_angles, pred_concentrations, obs_angles) -> MetricsReport:
    """All six metrics; inputs must be equal-length with at least two pairs.

    The circular correlation needs nondegenerate sine deviations on both
    sides; a constant prediction yields NaN there (undefined), not an error.
    """
    pred = np.asarray(pred_angles, dtype=float)
    conc = np.asarray(pred_concentrations, dtype=float)
    obs = np.asarray(obs_angles, dtype=float)
    if pred.shape != obs.shape or pred.shape != conc.shape:
        raise ValidationError("prediction and observation lengths differ")
    if pred.size < 2:
        raise ValidationError("need at least two pairs")
    sc = (np.cos(obs) - np.cos(pred)) ** 2 + (np.sin(obs) - np.sin(pred)) ** 2
    sc_rmse = math.sqrt(float(np.mean(sc)))
    delta = circular_difference(pred, obs)
    crmse = math.sqrt(float(np.mean(delta ** 2)))
    cmae = float(np.mean(np.abs(delta)))
    resultant = float(
        math.hypot(float(np.mean(np.cos(delta))), float(np.mean(np.sin(delta))))
    )
    s_obs = np.sin(obs - circular_mean(obs))
    s_pred = np.sin(pred - circular_mean(pred))
    denom = math.sqrt(float(np.sum(s_obs ** 2)) * float(np.sum(s_pred ** 2)))
    rho_c = float(np.sum(s_obs * s_pred)) / denom if denom > 1e-12 else math.nan
    return MetricsReport(
        sc_rmse=sc_rmse,
        crmse=crmse,
        cmae=cmae,
        resultant_length=resultant,
        circular_correlation=rho_c,
        avg_concentration=float(np.mean(conc)),
    )


@dataclass
class FoldAssignment:
    """Spatial-block fold labels (1-based) for every location."""

    folds: np.ndarray
    n_folds: int
    block_rows: int
    block_cols: int
    block_of_location: np.ndarray
    fold_of_block: np.ndarray
    seed: int
    warnings: list

    def test_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.folds == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.folds != fold)[0]


def spatial_block_folds(locations, block_rows: int, block_cols: int,
                        n_folds: int, seed: int,
                        balance: str = "locations") -> FoldAssignment:
    """Partition the bounding box into a block grid and deal blocks to folds.

    All locations in a block share its fold. ``balance`` is "locations"
    (greedy: each shuffled block goes to the currently smallest fold) or
    "blocks" (round-robin over the shuffled blocks). A fold ending up
    empty is recorded as a warning, not an error.
    """
    locations = np.asarray(locations, dtype=float)
    if n_folds < 2:
        raise ValidationError("need at least two folds")
    if block_rows < 1 or block_cols < 1:
        raise ValidationError("block grid dimensions must be >= 1")
    if balance not in ("locations", "blocks"):
        raise ValidationError(f"unknown balance mode {balance!r}")
    x, y = locations[:, 0], locations[:, 1]
    ex = np.linspace(x.min(), x.max(), block_cols + 1)
    ey = np.linspace(y.min(), y.max(), block_rows + 1)
    cx = np.clip(np.digitize(x, ex) - 1, 0, block_cols - 1)
    cy = np.clip(np.digitize(y, ey) - 1, 0, block_rows - 1)
    block = cy * block_cols + cx
    n_blocks = block_rows * block_cols
    counts = np.bincount(block, minlength=n_blocks)

    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(n_blocks)
    fold_of_block = np.empty(n_blocks, dtype=np.int64)
    if balance == "blocks":
        for pos, b in enumerate(shuffled):
            fold_of_block[b] = pos % n_folds + 1
    else:
        load = np.zeros(n_folds, dtype=np.int64)
        # fill the biggest blocks first so the greedy balance is tight
        order = shuffled[np.argsort(-counts[shuffled], kind="stable")]
        for b in order:
            f = int(np.argmin(load))
            fold_of_block[b] = f + 1
            load[f] += counts[b]
    folds = fold_of_block[block]
    warnings = []
    for f in range(1, n_folds + 1):
        if not np.any(folds == f):
            warnings.append(f"fold {f} received no locations")
    return FoldAssignment(
        folds=folds,
        n_folds=n_folds,
        block_rows=block_rows,
        block_cols=block_cols,
        block_of_location=block,
        fold_of_block=fold_of_block,
        seed=seed,
        warnings=warnings,
    )


def empirical_semivariogram_sincos(angles, locations, n_bins: int,
                                   max_dist: float, mode: str = "planar",
                                   pair_cap: int = 2_000_000,
                                   seed: int = 0):
    """Matheron semivariances of sin(Y) and cos(Y) over distance bins.

    Returns (bin_center, gamma_sin, gamma_cos, pair_count) arrays; pairs
    are randomly subsampled (seeded) when their count exceeds ``pair_cap``.
    """
    angles = np.asarray(angles, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    if max_dist <= 0:
        raise ValidationError("max_dist must be > 0")
    n = len(angles)
    n_pairs = n * (n - 1) // 2
    rng = np.random.default_rng(seed)
    if n_pairs > pair_cap:
        i = rng.integers(0, n, size=int(pair_cap * 1.2))
        j = rng.integers(0, n, size=int(pair_cap * 1.2))
        keep = i < j
        i, j = i[keep][:pair_cap], j[keep][:pair_cap]
    else:
        i, j = np.triu_indices(n, k=1)
    if mode == "planar":
        d = np.linalg.norm(locations[i] - locations[j], axis=1)
    else:
        from .mesh import lonlat_to_xyz

        u = lonlat_to_xyz(locations)
        dots = np.clip(np.einsum("nd,nd->n", u[i], u[j]), -1.0, 1.0)
        crossn = np.linalg.norm(np.cross(u[i], u[j]), axis=1)
        d = 6371.0 * np.arctan2(crossn, dots)
    sel = d <= max_dist
    if not np.any(sel):
        raise ValidationError("no pairs within max_dist")
    i, j, d = i[sel], j[sel], d[sel]
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    idx = np.clip(np.digitize(d, edges) - 1, 0, n_bins - 1)
    ds = (np.sin(angles[i]) - np.sin(angles[j])) ** 2
    dc = (np.cos(angles[i]) - np.cos(angles[j])) ** 2
    counts = np.bincount(idx, minlength=n_bins)
    gam_s = np.full(n_bins, np.nan)
    gam_c = np.full(n_bins, np.nan)
    nz = counts > 0
    gam_s[nz] = 0.5 * np.bincount(idx, weights=ds, minlength=n_bins)[nz] / counts[nz]
    gam_c[nz] = 0.5 * np.bincount(idx, weights=dc, minlength=n_bins)[nz] / counts[nz]
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, gam_s, gam_c, counts


def circular_histogram(angles, n_bins: int):
    """Counts over equal-width bins partitioning [0, 2*pi).

    Returns (bin_start, bin_end, count) arrays; counts sum to len(angles).
    """
    if n_bins < 2:
        raise ValidationError("n_bins must be >= 2")
    angles = np.asarray(angles, dtype=float)
    if np.any(angles < 0) or np.any(angles >= TWO_PI):
        raise ValidationError("angles must lie in [0, 2*pi)")
    edges = np.linspace(0.0, TWO_PI, n_bins + 1)
    idx = np.minimum((angles / (TWO_PI / n_bins)).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return edges[:-1], edges[1:], counts
