"""Hierarchical wrapped-GMRF model and its Metropolis-within-Gibbs sampler.

Model layers, for angles Y at N sites and mesh weights eps at N* nodes:

    Y_i = X_i mod 2pi,  X_i = Y_i + 2pi K_i,  K_i in [-m, m]
    X | eps ~ N(mu 1 + A eps, (1-r) sigma^2 I_N)
    eps     ~ N(0, r sigma^2 Q_psi^{-1})
    mu | sigma^2 ~ N(0, scale^2 sigma^2),  sigma^2 ~ IG(a, b),
    psi ~ U(0, Delta),  r ~ U(0, 1)

One sweep updates K -> eps -> mu -> sigma^2 -> psi -> r. The winding and
conjugate steps are exact draws; psi and r move by logit-space normal
random walks whose steps adapt during burn-in only.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .circular import circular_moment_estimates, sample_windings, winding_log_weights, wrap_angle
from .errors import NumericError, ValidationError
from .mesh import FemTriple, Mesh, projection
from .sparse import (
    CholeskyFactor,
    SparseSymmetric,
    factorize,
    refactorize,
    sample_canonical,
    sqrt_solve_transpose,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class WgmrfParams:
    """Model parameters: mean, variance, spatial range, spatial proportion."""

    mu: float
    sigma2: float
    psi: float
    r: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.mu, self.sigma2, self.psi, self.r)):
            raise ValidationError("parameters must be finite")
        if self.sigma2 <= 0:
            raise ValidationError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.psi <= 0:
            raise ValidationError(f"psi must be > 0, got {self.psi}")
        if not 0.0 < self.r < 1.0:
            raise ValidationError(f"r must be in (0, 1), got {self.r}")


@dataclass
class WgmrfConfig:
    """Sampler schedule, priors, and proposal settings."""

    iterations: int = 20_000
    burn_in: int = 10_000
    thinning: int = 5
    k_bound: int = 3
    mu_prior_scale: float = 100.0
    sigma2_shape: float = 0.1
    sigma2_rate: float = 0.1
    psi_upper: float | None = None  # Delta, the domain diameter; derived if None
    step_psi: float = 0.5
    step_r: float = 0.5
    adapt_every: int = 100
    adapt_low: float = 0.3
    adapt_high: float = 0.5
    adapt_shrink: float = 0.8
    adapt_grow: float = 1.2
    stress_init: bool = False
    fix_psi: float | None = None
    fix_r: float | None = None

    def __post_init__(self):
        if self.burn_in >= self.iterations:
            raise ValidationError("burn_in must be smaller than iterations")
        if self.burn_in < 0 or self.thinning < 1:
            raise ValidationError("invalid schedule")
        if self.k_bound < 1:
            raise ValidationError("k_bound must be >= 1")
        if self.psi_upper is not None and self.psi_upper <= 0:
            raise ValidationError("psi_upper must be > 0")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class WgmrfState:
    """Full latent state of one chain."""

    K: np.ndarray
    eps: np.ndarray
    mu: float
    sigma2: float
    psi: float
    r: float

    @property
    def params(self) -> WgmrfParams:
        return WgmrfParams(self.mu, self.sigma2, self.psi, self.r)


def domain_diameter(locations) -> float:
    """Euclidean diameter of the location set in coordinate units."""
    pts = np.unique(np.asarray(locations, dtype=float), axis=0)
    if len(pts) < 2:
        raise ValidationError("need at least two distinct locations for a diameter")
    cand = pts
    if len(pts) > 500:
        from scipy.spatial import ConvexHull, QhullError

        try:
            cand = pts[ConvexHull(pts).vertices]
        except QhullError:
            cand = pts[:: max(1, len(pts) // 500)]
    diff = cand[:, None, :] - cand[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def _hash_array(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws plus provenance."""

    iters: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    psi: np.ndarray
    r: np.ndarray
    eps: np.ndarray
    seed: int
    config: dict
    data_hash: str
    acceptance: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.mu)

    def save(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "scalars.csv", "w", encoding="ascii") as fh:
            fh.write("iter,mu,sigma2,psi,r\n")
            for t in range(self.n_draws):
                fh.write(
                    f"{self.iters[t]},{float(self.mu[t])!r},{float(self.sigma2[t])!r},"
                    f"{float(self.psi[t])!r},{float(self.r[t])!r}\n"
                )
        np.save(outdir / "eps_star.npy", self.eps)
        manifest = {
            "model": "wgmrf",
            "seed": self.seed,
            "config": self.config,
            "data_hash": self.data_hash,
            "acceptance": self.acceptance,
            "n_draws": self.n_draws,
        }
        with open(outdir / "manifest.json", "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, outdir):
        outdir = Path(outdir)
        raw = np.genfromtxt(outdir / "scalars.csv", delimiter=",", names=True)
        raw = np.atleast_1d(raw)
        eps = np.load(outdir / "eps_star.npy")
        with open(outdir / "manifest.json", "r", encoding="ascii") as fh:
            manifest = json.load(fh)
        return cls(
            iters=raw["iter"].astype(int),
            mu=raw["mu"],
            sigma2=raw["sigma2"],
            psi=raw["psi"],
            r=raw["r"],
            eps=eps,
            seed=manifest["seed"],
            config=manifest["config"],
            data_hash=manifest["data_hash"],
            acceptance=manifest.get("acceptance", {}),
        )


def _logit(x, upper):
    return math.log(x / (upper - x))


def _inv_logit(z, upper):
    if z >= 0:
        return upper / (1.0 + math.exp(-z))
    e = math.exp(z)
    return upper * e / (1.0 + e)


class WgmrfSampler:
    """Metropolis-within-Gibbs machinery for one dataset/mesh pair.

    ``precision_builder`` maps psi to the SPD precision of the mesh
    weights on a fixed, psi-independent sparsity pattern (``FemTriple
    .precision`` provides exactly that). The A matrix is the barycentric
    projection of sites onto mesh nodes.
    """

    def __init__(self, angles, A, precision_builder, config: WgmrfConfig,
                 psi_upper: float):
        self.Y = np.asarray(angles, dtype=float)
        if np.any(self.Y < 0) or np.any(self.Y >= TWO_PI):
            raise ValidationError("angles must lie in [0, 2*pi)")
        self.A = sp.csr_matrix(A)
        self.At = sp.csc_matrix(self.A.T)
        self.n = len(self.Y)
        self.n_star = self.A.shape[1]
        self.cfg = config
        self.delta = float(psi_upper)
        if self.delta <= 0:
            raise ValidationError("psi upper bound must be > 0")
        self.build_q = precision_builder

        # union pattern for the eps posterior precision: pattern(Q) | pattern(A^T A)
        q0 = precision_builder(self.delta / 10.0)
        ata = sp.tril((self.At @ self.A).tocsc(), format="csc")
        ata.sort_indices()
        n = self.n_star
        qkeys = self._keys(q0.indptr, q0.indices, n)
        akeys = self._keys(ata.indptr, ata.indices, n)
        ukeys = np.union1d(qkeys, akeys)
        # every union column needs its diagonal; Q already has all diagonals
        self.p_indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.p_indptr, (ukeys // n) + 1, 1)
        self.p_indptr = np.cumsum(self.p_indptr)
        self.p_indices = (ukeys % n).astype(np.int64)
        self.q_pos = np.searchsorted(ukeys, qkeys)
        self.a_pos = np.searchsorted(ukeys, akeys)
        self.ata_data = np.ascontiguousarray(ata.data)
        self.q_pattern = q0

        # symbolic analyses, reused via refactorize for the whole chain
        self.fq_template = factorize(q0)
        p0 = self._posterior_precision(q0.data, 1.0, 1.0)
        self.fp_template = factorize(p0)

        self.steps = {"psi": config.step_psi, "r": config.step_r}
        self.accepts = {"psi": 0, "r": 0}
        self.proposals = {"psi": 0, "r": 0}
        self._window = {"psi": [0, 0], "r": [0, 0]}

        # per-state caches, refreshed whenever psi moves
        self._q_data = None
        self._fq = None
        self._logdet_q = None

    @staticmethod
    def _keys(indptr, indices, n):
        cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
        return cols * n + np.asarray(indices, dtype=np.int64)

    def _posterior_precision(self, q_data, alpha, beta) -> SparseSymmetric:
        """alpha * A^T A + beta * Q on the union pattern."""
        data = np.zeros(len(self.p_indices))
        data[self.q_pos] += beta * q_data
        data[self.a_pos] += alpha * self.ata_data
        return SparseSymmetric(
            self.n_star, self.p_indptr, self.p_indices, data, validate=False
        )

    def _set_psi(self, psi, q=None, fq=None):
        if q is None:
            q = self.build_q(psi)
        if fq is None:
            fq = refactorize(self.fq_template, q)
        self._q_data = q.data
        self._fq = fq
        self._logdet_q = fq.log_det_value

    def quad_q(self, eps) -> float:
        """eps^T Q_psi eps at the cached psi."""
        return self.q_pattern.with_data(self._q_data).quad_form(eps)

    # ------------------------------------------------------------------
    # initial state

    def initial_state(self) -> WgmrfState:
        mean_dir, _, sigma2_hat = circular_moment_estimates(self.Y)
        sigma2 = max(sigma2_hat, 1e-4)
        mu = mean_dir
        psi = self.delta / 10.0
        r = 0.5
        if self.cfg.stress_init:
            mu = wrap_angle(mean_dir + math.pi / 2)
            sigma2 = sigma2 * 5.0 + 1.0
            psi = self.delta / 2.0
            r = 0.1
        if self.cfg.fix_psi is not None:
            psi = self.cfg.fix_psi
        if self.cfg.fix_r is not None:
            r = self.cfg.fix_r
        state = WgmrfState(
            K=np.zeros(self.n, dtype=np.int64),
            eps=np.zeros(self.n_star),
            mu=float(mu),
            sigma2=float(sigma2),
            psi=float(psi),
            r=float(r),
        )
        self._set_psi(state.psi)
        return state

    # ------------------------------------------------------------------
    # individual Gibbs blocks (each mutates ``state`` in place)

    def x_latent(self, state) -> np.ndarray:
        return self.Y + TWO_PI * state.K

    def update_winding(self, state: WgmrfState, rng: np.random.Generator):
        means = state.mu + self.A @ state.eps
        sd = math.sqrt(state.sigma2 * (1.0 - state.r))
        logw = winding_log_weights(self.Y, means, sd, self.cfg.k_bound)
        state.K = sample_windings(logw, self.cfg.k_bound, rng)

    def update_spatial_effects(self, state: WgmrfState, rng: np.random.Generator):
        alpha = 1.0 / (state.sigma2 * (1.0 - state.r))
        beta = 1.0 / (state.sigma2 * state.r)
        prec = self._posterior_precision(self._q_data, alpha, beta)
        fp = refactorize(self.fp_template, prec)
        b = alpha * (self.At @ (self.x_latent(state) - state.mu))
        state.eps = sample_canonical(fp, b, rng)

    def update_mu(self, state: WgmrfState, rng: np.random.Generator):
        resid = self.x_latent(state) - self.A @ state.eps
        denom = self.n / (1.0 - state.r) + 1.0 / self.cfg.mu_prior_scale ** 2
        mean = float(np.sum(resid)) / (1.0 - state.r) / denom
        sd = math.sqrt(state.sigma2 / denom)
        state.mu = mean + sd * rng.standard_normal()

    def update_sigma2(self, state: WgmrfState, rng: np.random.Generator):
        resid = self.x_latent(state) - state.mu - self.A @ state.eps
        quad = self.quad_q(state.eps)
        shape = self.cfg.sigma2_shape + (self.n + self.n_star + 1) / 2.0
        rate = self.cfg.sigma2_rate + 0.5 * (
            quad / state.r
            + float(resid @ resid) / (1.0 - state.r)
            + state.mu ** 2 / self.cfg.mu_prior_scale ** 2
        )
        state.sigma2 = rate / rng.gamma(shape)

    def psi_log_ratio(self, state: WgmrfState, cand: float):
        """Log MH acceptance ratio for a range proposal; returns the
        candidate's (Q, factor) so an acceptance can reuse them."""
        q_c = self.build_q(cand)
        fq_c = refactorize(self.fq_template, q_c)
        quad_m = self.quad_q(state.eps)
        quad_c = q_c.quad_form(state.eps)
        scale = 2.0 * state.sigma2 * state.r
        log_ratio = (
            0.5 * (fq_c.log_det_value - self._logdet_q)
            - (quad_c - quad_m) / scale
            + math.log(cand * (self.delta - cand))
            - math.log(state.psi * (self.delta - state.psi))
        )
        return log_ratio, q_c, fq_c

    def update_psi(self, state: WgmrfState, rng: np.random.Generator):
        if self.cfg.fix_psi is not None:
            return
        self.proposals["psi"] += 1
        self._window["psi"][1] += 1
        z = _logit(state.psi, self.delta) + self.steps["psi"] * rng.standard_normal()
        cand = _inv_logit(z, self.delta)
        if not (0.0 < cand < self.delta):
            return  # proposal collapsed onto the boundary
        log_ratio, q_c, fq_c = self.psi_log_ratio(state, cand)
        if math.log(rng.random()) < log_ratio:
            state.psi = cand
            self._set_psi(cand, q=q_c, fq=fq_c)
            self.accepts["psi"] += 1
            self._window["psi"][0] += 1

    def r_log_ratio(self, state: WgmrfState, cand: float) -> float:
        """Log MH acceptance ratio for a nugget-proportion proposal.

        Both Gaussian layers share Q, so their ratio is closed form: only
        the variance scalings (1-r) sigma^2 and r sigma^2 change.
        """
        resid = self.x_latent(state) - state.mu - self.A @ state.eps
        sse = float(resid @ resid)
        quad = self.quad_q(state.eps)
        s2 = state.sigma2
        r_m = state.r

        def joint(r):
            return (
                -0.5 * self.n * math.log(1.0 - r)
                - sse / (2.0 * s2 * (1.0 - r))
                - 0.5 * self.n_star * math.log(r)
                - quad / (2.0 * s2 * r)
            )

        return (
            joint(cand)
            - joint(r_m)
            + math.log(cand * (1.0 - cand))
            - math.log(r_m * (1.0 - r_m))
        )

    def update_r(self, state: WgmrfState, rng: np.random.Generator):
        if self.cfg.fix_r is not None:
            return
        self.proposals["r"] += 1
        self._window["r"][1] += 1
        z = _logit(state.r, 1.0) + self.steps["r"] * rng.standard_normal()
        cand = _inv_logit(z, 1.0)
        if not (0.0 < cand < 1.0):
            return
        log_ratio = self.r_log_ratio(state, cand)
        if math.log(rng.random()) < log_ratio:
            state.r = cand
            self.accepts["r"] += 1
            self._window["r"][0] += 1

    # ------------------------------------------------------------------

    def sweep(self, state: WgmrfState, rng: np.random.Generator):
        """One full Gibbs sweep in the fixed order K, eps, mu, sigma2, psi, r."""
        self.update_winding(state, rng)
        self.update_spatial_effects(state, rng)
        self.update_mu(state, rng)
        self.update_sigma2(state, rng)
        self.update_psi(state, rng)
        self.update_r(state, rng)

    def _adapt(self):
        for name in ("psi", "r"):
            acc, tot = self._window[name]
            if tot == 0:
                continue
            rate = acc / tot
            if rate > self.cfg.adapt_high:
                self.steps[name] *= self.cfg.adapt_grow
            elif rate < self.cfg.adapt_low:
                self.steps[name] *= self.cfg.adapt_shrink
            self._window[name] = [0, 0]

    def run(self, rng: np.random.Generator, seed_echo=None,
            data_hash="") -> PosteriorSamples:
        cfg = self.cfg
        state = self.initial_state()
        n_draws = cfg.n_draws
        out_iter = np.empty(n_draws, dtype=np.int64)
        out = {k: np.empty(n_draws) for k in ("mu", "sigma2", "psi", "r")}
        out_eps = np.empty((n_draws, self.n_star))
        got = 0
        for it in range(cfg.iterations):
            self.sweep(state, rng)
            if not (
                np.isfinite(state.mu)
                and np.isfinite(state.sigma2)
                and np.isfinite(state.psi)
                and np.isfinite(state.r)
            ):
                raise NumericError(f"non-finite sampler state at iteration {it}")
            in_burn = it < cfg.burn_in
            if in_burn and (it + 1) % cfg.adapt_every == 0:
                self._adapt()
            if not in_burn and (it - cfg.burn_in + 1) % cfg.thinning == 0:
                if got < n_draws:
                    out_iter[got] = it
                    out["mu"][got] = state.mu
                    out["sigma2"][got] = state.sigma2
                    out["psi"][got] = state.psi
                    out["r"][got] = state.r
                    out_eps[got] = state.eps
                    got += 1
        acceptance = {
            name: (self.accepts[name] / self.proposals[name] if self.proposals[name] else None)
            for name in ("psi", "r")
        }
        acceptance["step_psi"] = self.steps["psi"]
        acceptance["step_r"] = self.steps["r"]
        return PosteriorSamples(
            iters=out_iter[:got],
            mu=out["mu"][:got],
            sigma2=out["sigma2"][:got],
            psi=out["psi"][:got],
            r=out["r"][:got],
            eps=out_eps[:got],
            seed=seed_echo if seed_echo is not None else -1,
            config=asdict(cfg),
            data_hash=data_hash,
            acceptance=acceptance,
        )


def fit(angles, locations, mesh: Mesh, fem: FemTriple, config: WgmrfConfig,
        seed: int) -> PosteriorSamples:
    """Fit the wrapped-GMRF model; deterministic given ``seed``."""
    angles = np.asarray(angles, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if len(angles) != len(locations):
        raise ValidationError("angles and locations length mismatch")
    delta = config.psi_upper if config.psi_upper is not None else domain_diameter(locations)
    A = projection(mesh, locations)
    sampler = WgmrfSampler(angles, A, fem.precision, config, delta)
    rng = np.random.default_rng(seed)
    data_hash = _hash_array(angles, locations)
    return sampler.run(rng, seed_echo=seed, data_hash=data_hash)


def simulate(mesh: Mesh, fem: FemTriple, params: WgmrfParams, locations,
             rng: np.random.Generator, return_latent: bool = False):
    """Draw angles from the model at ``locations``.

    eps ~ N(0, r sigma^2 Q_psi^{-1}), X = mu + A eps + sqrt((1-r) sigma^2) z,
    Y = X mod 2pi.
    """
    locations = np.asarray(locations, dtype=float)
    A = projection(mesh, locations)
    fq = factorize(fem.precision(params.psi))
    raw = sqrt_solve_transpose(fq, rng.standard_normal(fem.n_nodes))
    eps = math.sqrt(params.r * params.sigma2) * raw
    noise = math.sqrt((1.0 - params.r) * params.sigma2) * rng.standard_normal(len(locations))
    x = params.mu + A @ eps + noise
    y = wrap_angle(x)
    if return_latent:
        return y, eps, x
    return y
