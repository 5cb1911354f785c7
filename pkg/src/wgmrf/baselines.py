"""Baseline models: IID wrapped normal and the low-rank wrapped GP.

The IID model is the no-spatial-structure reference: a single wrapped
normal fitted by Gibbs over (K, mu, sigma2) with conjugate updates.

The low-rank model places M knot processes W_j ~ N(0, sigma^2) under a
Gaussian kernel basis

    C(s, knot; phi) = (2 pi phi^2)^{-1/2} exp(-||s - knot||^2 / (2 phi^2))

so X(s) = mu + b_phi(s)^T W + eps(s) with nugget variance tau^2. Knots are
k-means centers of the observation locations. phi moves by a logit-normal
random walk on (0, 0.2 * Delta); the basis matrix is recomputed only when
a proposal is accepted.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .circular import sample_windings, winding_log_weights, wrap_angle
from .errors import NumericError, ValidationError
from .mesh import lonlat_to_xyz, xyz_to_lonlat

TWO_PI = 2.0 * math.pi


def _hash_array(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------------
# IID wrapped normal


@dataclass
class IidWnConfig:
    iterations: int = 20_000
    burn_in: int = 10_000
    thinning: int = 5
    k_bound: int = 3
    mu_prior_scale: float = 100.0
    sigma2_shape: float = 0.1
    sigma2_rate: float = 0.1

    def __post_init__(self):
        if self.burn_in >= self.iterations or self.thinning < 1 or self.burn_in < 0:
            raise ValidationError("invalid schedule")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class IidWnSamples:
    """Posterior draws of (mu, sigma2) for the IID wrapped normal."""

    iters: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    seed: int
    config: dict
    data_hash: str

    @property
    def n_draws(self) -> int:
        return len(self.mu)

    def save(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "scalars.csv", "w", encoding="ascii") as fh:
            fh.write("iter,mu,sigma2\n")
            for t in range(self.n_draws):
                fh.write(f"{self.iters[t]},{float(self.mu[t])!r},{float(self.sigma2[t])!r}\n")
        manifest = {
            "model": "iid",
            "seed": self.seed,
            "config": self.config,
            "data_hash": self.data_hash,
            "n_draws": self.n_draws,
        }
        with open(outdir / "manifest.json", "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, outdir):
        outdir = Path(outdir)
        raw = np.atleast_1d(
            np.genfromtxt(outdir / "scalars.csv", delimiter=",", names=True)
        )
        with open(outdir / "manifest.json", "r", encoding="ascii") as fh:
            manifest = json.load(fh)
        return cls(
            iters=raw["iter"].astype(int),
            mu=raw["mu"],
            sigma2=raw["sigma2"],
            seed=manifest["seed"],
            config=manifest["config"],
            data_hash=manifest["data_hash"],
        )


class IidWnSampler:
    """Gibbs over (K, mu, sigma2); the WGMRF updates with A = 0, r = 0, N* = 0."""

    def __init__(self, angles, config: IidWnConfig):
        self.Y = np.asarray(angles, dtype=float)
        if self.Y.size == 0:
            raise ValidationError("need at least one angle")
        if np.any(self.Y < 0) or np.any(self.Y >= TWO_PI):
            raise ValidationError("angles must lie in [0, 2*pi)")
        self.cfg = config
        self.n = len(self.Y)

    def initial_state(self):
        from .circular import circular_moment_estimates

        mean_dir, _, sigma2_hat = circular_moment_estimates(self.Y)
        return {
            "K": np.zeros(self.n, dtype=np.int64),
            "mu": float(mean_dir),
            "sigma2": float(max(sigma2_hat, 1e-4)),
        }

    def sweep(self, state, rng):
        cfg = self.cfg
        sd = math.sqrt(state["sigma2"])
        logw = winding_log_weights(self.Y, np.full(self.n, state["mu"]), sd, cfg.k_bound)
        state["K"] = sample_windings(logw, cfg.k_bound, rng)
        x = self.Y + TWO_PI * state["K"]
        denom = self.n + 1.0 / cfg.mu_prior_scale ** 2
        mean = float(np.sum(x)) / denom
        state["mu"] = mean + math.sqrt(state["sigma2"] / denom) * rng.standard_normal()
        resid = x - state["mu"]
        shape = cfg.sigma2_shape + (self.n + 1) / 2.0
        rate = cfg.sigma2_rate + 0.5 * (
            float(resid @ resid) + state["mu"] ** 2 / cfg.mu_prior_scale ** 2
        )
        state["sigma2"] = rate / rng.gamma(shape)


def fit_iid_wn(angles, config: IidWnConfig, seed: int) -> IidWnSamples:
    """Fit the IID wrapped normal; deterministic given ``seed``."""
    sampler = IidWnSampler(angles, config)
    rng = np.random.default_rng(seed)
    state = sampler.initial_state()
    n_draws = config.n_draws
    out_iter = np.empty(n_draws, dtype=np.int64)
    out_mu = np.empty(n_draws)
    out_s2 = np.empty(n_draws)
    got = 0
    for it in range(config.iterations):
        sampler.sweep(state, rng)
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thinning == 0:
            if got < n_draws:
                out_iter[got], out_mu[got], out_s2[got] = it, state["mu"], state["sigma2"]
                got += 1
    return IidWnSamples(
        iters=out_iter[:got],
        mu=out_mu[:got],
        sigma2=out_s2[:got],
        seed=seed,
        config=asdict(config),
        data_hash=_hash_array(np.asarray(angles, dtype=float)),
    )


# ----------------------------------------------------------------------
# low-rank wrapped GP


def select_knots(locations, m: int, rng: np.random.Generator, mode: str = "planar",
                 n_iter: int = 50) -> np.ndarray:
    """k-means centers of the observation locations (free points).

    Euclidean metric in planar mode, chordal (unit-vector) in spherical
    mode; k-means++ seeding, deterministic given ``rng``.
    """
    locations = np.asarray(locations, dtype=float)
    pts = np.unique(locations, axis=0)
    if m < 1 or m > len(pts):
        raise ValidationError(f"need 1 <= M <= {len(pts)} distinct locations, got {m}")
    work = pts if mode == "planar" else lonlat_to_xyz(pts)

    # k-means++ seeding
    centers = np.empty((m, work.shape[1]))
    centers[0] = work[rng.integers(len(work))]
    d2 = np.sum((work - centers[0]) ** 2, axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total <= 0:
            centers[j:] = work[rng.choice(len(work), size=m - j, replace=True)]
            break
        centers[j] = work[np.searchsorted(np.cumsum(d2 / total), rng.random())]
        d2 = np.minimum(d2, np.sum((work - centers[j]) ** 2, axis=1))

    for _ in range(n_iter):
        d = ((work[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        label = np.argmin(d, axis=1)
        moved = 0.0
        for j in range(m):
            sel = work[label == j]
            if len(sel) == 0:
                continue
            new = sel.mean(axis=0)
            if mode == "spherical":
                norm = np.linalg.norm(new)
                if norm > 0:
                    new = new / norm
            moved += float(np.sum((new - centers[j]) ** 2))
            centers[j] = new
        if moved < 1e-14:
            break
    if mode == "spherical":
        return xyz_to_lonlat(centers)
    return centers


def lowrank_basis(locations, knots, phi: float) -> np.ndarray:
    """Gaussian-kernel basis matrix, entry (i, j) for site i and knot j."""
    if phi <= 0:
        raise ValidationError(f"phi must be > 0, got {phi}")
    locations = np.asarray(locations, dtype=float)
    knots = np.asarray(knots, dtype=float)
    d2 = ((locations[:, None, :] - knots[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / (phi * phi)) / math.sqrt(TWO_PI * phi * phi)


@dataclass
class LowRankConfig:
    n_knots: int = 100
    iterations: int = 20_000
    burn_in: int = 10_000
    thinning: int = 5
    k_bound: int = 3
    mu_prior_scale: float = 100.0
    sigma2_shape: float = 0.1
    sigma2_rate: float = 0.1
    tau2_shape: float = 0.1
    tau2_rate: float = 0.1
    phi_upper: float | None = None  # 0.2 * Delta; derived from data if None
    step_phi: float = 0.5
    adapt_every: int = 100
    adapt_low: float = 0.3
    adapt_high: float = 0.5
    adapt_shrink: float = 0.8
    adapt_grow: float = 1.2

    def __post_init__(self):
        if self.burn_in >= self.iterations or self.thinning < 1 or self.burn_in < 0:
            raise ValidationError("invalid schedule")
        if self.n_knots < 1:
            raise ValidationError("n_knots must be >= 1")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class LowRankSamples:
    """Posterior draws of (mu, sigma2, tau2, phi) and thinned W vectors."""

    iters: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    knots: np.ndarray
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
            fh.write("iter,mu,sigma2,tau2,phi\n")
            for t in range(self.n_draws):
                fh.write(
                    f"{self.iters[t]},{float(self.mu[t])!r},{float(self.sigma2[t])!r},"
                    f"{float(self.tau2[t])!r},{float(self.phi[t])!r}\n"
                )
        np.save(outdir / "w.npy", self.w)
        with open(outdir / "knots.csv", "w", encoding="ascii") as fh:
            fh.write("coord0,coord1\n")
            for a, b in self.knots:
                fh.write(f"{float(a)!r},{float(b)!r}\n")
        manifest = {
            "model": "lowrank",
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
        raw = np.atleast_1d(
            np.genfromtxt(outdir / "scalars.csv", delimiter=",", names=True)
        )
        knots = np.atleast_2d(
            np.genfromtxt(outdir / "knots.csv", delimiter=",", skip_header=1)
        )
        with open(outdir / "manifest.json", "r", encoding="ascii") as fh:
            manifest = json.load(fh)
        return cls(
            iters=raw["iter"].astype(int),
            mu=raw["mu"],
            sigma2=raw["sigma2"],
            tau2=raw["tau2"],
            phi=raw["phi"],
            w=np.load(outdir / "w.npy"),
            knots=knots,
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


class LowRankSampler:
    """Metropolis-within-Gibbs for the low-rank wrapped GP."""

    def __init__(self, angles, locations, knots, config: LowRankConfig,
                 phi_upper: float):
        self.Y = np.asarray(angles, dtype=float)
        if np.any(self.Y < 0) or np.any(self.Y >= TWO_PI):
            raise ValidationError("angles must lie in [0, 2*pi)")
        self.locations = np.asarray(locations, dtype=float)
        self.knots = np.asarray(knots, dtype=float)
        self.cfg = config
        self.phi_upper = float(phi_upper)
        if self.phi_upper <= 0:
            raise ValidationError("phi upper bound must be > 0")
        self.n = len(self.Y)
        self.m = len(self.knots)
        self.step_phi = config.step_phi
        self.accepts = 0
        self.proposals = 0
        self._window = [0, 0]
        self._basis = None  # (B, B^T B) cache for the current phi
        self._basis_phi = None

    def basis(self, phi: float):
        if self._basis_phi != phi:
            B = lowrank_basis(self.locations, self.knots, phi)
            self._basis = (B, B.T @ B)
            self._basis_phi = phi
        return self._basis

    def initial_state(self):
        from .circular import circular_moment_estimates

        mean_dir, _, sigma2_hat = circular_moment_estimates(self.Y)
        s2 = float(max(sigma2_hat, 1e-4))
        return {
            "K": np.zeros(self.n, dtype=np.int64),
            "W": np.zeros(self.m),
            "mu": float(mean_dir),
            "sigma2": s2,
            "tau2": s2 / 2.0,
            "phi": self.phi_upper / 10.0,
        }

    def update_winding(self, state, rng):
        B, _ = self.basis(state["phi"])
        means = state["mu"] + B @ state["W"]
        logw = winding_log_weights(self.Y, means, math.sqrt(state["tau2"]),
                                   self.cfg.k_bound)
        state["K"] = sample_windings(logw, self.cfg.k_bound, rng)

    def update_w(self, state, rng):
        B, BtB = self.basis(state["phi"])
        x = self.Y + TWO_PI * state["K"]
        prec = BtB / state["tau2"] + np.eye(self.m) / state["sigma2"]
        chol = np.linalg.cholesky(prec)
        b = B.T @ (x - state["mu"]) / state["tau2"]
        mean = np.linalg.solve(chol.T, np.linalg.solve(chol, b))
        noise = np.linalg.solve(chol.T, rng.standard_normal(self.m))
        state["W"] = mean + noise

    def update_mu(self, state, rng):
        B, _ = self.basis(state["phi"])
        x = self.Y + TWO_PI * state["K"]
        resid = x - B @ state["W"]
        denom = self.n / state["tau2"] + 1.0 / self.cfg.mu_prior_scale ** 2
        mean = float(np.sum(resid)) / state["tau2"] / denom
        state["mu"] = mean + math.sqrt(1.0 / denom) * rng.standard_normal()

    def update_sigma2(self, state, rng):
        shape = self.cfg.sigma2_shape + self.m / 2.0
        rate = self.cfg.sigma2_rate + 0.5 * float(state["W"] @ state["W"])
        state["sigma2"] = rate / rng.gamma(shape)

    def update_tau2(self, state, rng):
        B, _ = self.basis(state["phi"])
        x = self.Y + TWO_PI * state["K"]
        resid = x - state["mu"] - B @ state["W"]
        shape = self.cfg.tau2_shape + self.n / 2.0
        rate = self.cfg.tau2_rate + 0.5 * float(resid @ resid)
        state["tau2"] = rate / rng.gamma(shape)

    def update_phi(self, state, rng):
        self.proposals += 1
        self._window[1] += 1
        z = _logit(state["phi"], self.phi_upper) + self.step_phi * rng.standard_normal()
        cand = _inv_logit(z, self.phi_upper)
        if not (0.0 < cand < self.phi_upper):
            return
        x = self.Y + TWO_PI * state["K"]
        B_m, _ = self.basis(state["phi"])
        B_c = lowrank_basis(self.locations, self.knots, cand)
        r_m = x - state["mu"] - B_m @ state["W"]
        r_c = x - state["mu"] - B_c @ state["W"]
        log_ratio = (
            (float(r_m @ r_m) - float(r_c @ r_c)) / (2.0 * state["tau2"])
            + math.log(cand * (self.phi_upper - cand))
            - math.log(state["phi"] * (self.phi_upper - state["phi"]))
        )
        if math.log(rng.random()) < log_ratio:
            state["phi"] = cand
            self._basis = (B_c, B_c.T @ B_c)
            self._basis_phi = cand
            self.accepts += 1
            self._window[0] += 1

    def sweep(self, state, rng):
        self.update_winding(state, rng)
        self.update_w(state, rng)
        self.update_mu(state, rng)
        self.update_sigma2(state, rng)
        self.update_tau2(state, rng)
        self.update_phi(state, rng)

    def run(self, rng, seed_echo=None, data_hash="") -> LowRankSamples:
        cfg = self.cfg
        state = self.initial_state()
        n_draws = cfg.n_draws
        out_iter = np.empty(n_draws, dtype=np.int64)
        out = {k: np.empty(n_draws) for k in ("mu", "sigma2", "tau2", "phi")}
        out_w = np.empty((n_draws, self.m))
        got = 0
        for it in range(cfg.iterations):
            self.sweep(state, rng)
            if not all(
                np.isfinite(state[k]) for k in ("mu", "sigma2", "tau2", "phi")
            ):
                raise NumericError(f"non-finite sampler state at iteration {it}")
            in_burn = it < cfg.burn_in
            if in_burn and (it + 1) % cfg.adapt_every == 0:
                acc, tot = self._window
                if tot:
                    rate = acc / tot
                    if rate > cfg.adapt_high:
                        self.step_phi *= cfg.adapt_grow
                    elif rate < cfg.adapt_low:
                        self.step_phi *= cfg.adapt_shrink
                self._window = [0, 0]
            if not in_burn and (it - cfg.burn_in + 1) % cfg.thinning == 0 and got < n_draws:
                out_iter[got] = it
                for k in out:
                    out[k][got] = state[k]
                out_w[got] = state["W"]
                got += 1
        acceptance = {
            "phi": self.accepts / self.proposals if self.proposals else None,
            "step_phi": self.step_phi,
        }
        return LowRankSamples(
            iters=out_iter[:got],
            mu=out["mu"][:got],
            sigma2=out["sigma2"][:got],
            tau2=out["tau2"][:got],
            phi=out["phi"][:got],
            w=out_w[:got],
            knots=self.knots,
            seed=seed_echo if seed_echo is not None else -1,
            config=asdict(cfg),
            data_hash=data_hash,
            acceptance=acceptance,
        )


def fit_lowrank(angles, locations, config: LowRankConfig, seed: int,
                mode: str = "planar") -> LowRankSamples:
    """Fit the low-rank wrapped GP; deterministic given ``seed``.

    Knot selection consumes the first draws of the seeded stream, so the
    whole artifact (knots included) reproduces bitwise.
    """
    angles = np.asarray(angles, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if len(angles) != len(locations):
        raise ValidationError("angles and locations length mismatch")
    rng = np.random.default_rng(seed)
    knots = select_knots(locations, config.n_knots, rng, mode=mode)
    if config.phi_upper is not None:
        phi_upper = config.phi_upper
    else:
        from .model import domain_diameter

        phi_upper = 0.2 * domain_diameter(locations)
    sampler = LowRankSampler(angles, locations, knots, config, phi_upper)
    return sampler.run(rng, seed_echo=seed, data_hash=_hash_array(angles, locations))
