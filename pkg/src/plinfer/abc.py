"""ABC baselines: SMC-ABC with an ESS-driven bandwidth and PMC-ABC with a quantile bandwidth.

Both use the indicator kernel ``1{s <= beta}`` on IPM scores and share the
scoring path with PLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import RngStream, effective_sample_size
from .distributions import (
    JITTER,
    DensityModel,
    GaussianFull,
    GaussianMixture,
    fit_gmm_weighted_em,
)
from .ipm import Metric
from .scoring import score_particles
from .simulators import TaskSpec


class AllRejectedError(ValueError):
    pass


class PriorKernelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class AbcConfig:
    particles: int = 1000
    iterations: int = 200
    alpha: float = 0.1
    # None means K / 2
    resample_threshold: float | None = None
    kernel_components: int = 5
    # random-walk covariance multiple for SMC moves and the PMC Gaussian fallback
    covariance_scale: float = 2.0
    sims_per_param: int | None = None
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.particles < 2 or self.iterations < 0:
            raise ValueError("need particles >= 2 and iterations >= 0")

    def resolved_sims(self, n_obs: int) -> int:
        return self.sims_per_param if self.sims_per_param is not None else n_obs


@dataclass(frozen=True, eq=False)
class ParticlePopulation:
    particles: np.ndarray
    weights: np.ndarray
    scores: np.ndarray
    bandwidth: float
    iteration: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("population weights must form a simplex")

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def sample(self, count: int, rng: RngStream) -> np.ndarray:
        """Draws from the weighted empirical distribution."""
        idx = rng.generator().choice(self.weights.size, size=count, p=self.weights)
        return self.particles[idx]

    def summary(self) -> dict:
        live = self.scores[self.weights > 0]
        q = np.quantile(live, [0.0, 0.5, 1.0]) if live.size else [np.nan] * 3
        return {
            "iteration": self.iteration,
            "beta": self.bandwidth,
            "ess": self.ess,
            "score_min": q[0],
            "score_median": q[1],
            "score_max": q[2],
            **{k: v for k, v in self.diagnostics.items() if np.isscalar(v)},
        }


def ess(weights) -> float:
    return effective_sample_size(weights)


def smc_bandwidth_update(scores, prev_weights, prev_bandwidth, alpha):
    """Smallest score threshold keeping ``ESS >= alpha * ESS_prev``.

    Under the indicator kernel the ESS is a right-continuous step function of
    the threshold, so only the distinct scores of live particles are candidates.
    """
    s = np.asarray(scores, dtype=float)
    w = np.asarray(prev_weights, dtype=float)
    live = (w > 0) & (s <= prev_bandwidth)
    if not np.any(live):
        raise AllRejectedError("all particles rejected")
    target = alpha * effective_sample_size(w / w.sum())
    order = np.argsort(s[live], kind="stable")
    ls, lw = s[live][order], w[live][order]
    cw, cw2 = np.cumsum(lw), np.cumsum(lw * lw)
    # last index of each run of equal scores
    ends = np.append(np.flatnonzero(np.diff(ls) > 0), ls.size - 1)
    ess_at = cw[ends] ** 2 / cw2[ends]
    ok = np.flatnonzero(ess_at >= target * (1.0 - 1e-12))
    beta = float(ls[ends[ok[0]]] if ok.size else ls[-1])
    new_w = np.where(live & (s <= beta), w, 0.0)
    return beta, new_w / new_w.sum()


def systematic_resample(weights, rng: RngStream) -> np.ndarray:
    """Indices of ``K`` systematic draws from ``weights``."""
    w = np.asarray(weights, dtype=float)
    K = w.size
    positions = (rng.generator().random() + np.arange(K)) / K
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def _weighted_cov(x, w):
    mean = w @ x
    d = x - mean
    return mean, (d * w[:, None]).T @ d


def smc_abc_run(task: TaskSpec, reference, metric: Metric, cfg: AbcConfig, rng: RngStream,
                callback: Callable[[ParticlePopulation], None] | None = None) -> ParticlePopulation:
    """SMC-ABC: bandwidth update, systematic resampling, then an ABC-MH move.

    The move proposes a Gaussian random walk with ``covariance_scale`` times
    the weighted population covariance and accepts with probability
    ``min(1, p(x') / p(x) * 1{s' <= beta_t})``, which leaves the current ABC
    posterior invariant.
    """
    reference = np.atleast_2d(reference)
    K, d = cfg.particles, task.param_dim
    M = cfg.resolved_sims(reference.shape[0])
    V = cfg.resample_threshold if cfg.resample_threshold is not None else K / 2.0
    init = rng.split("init")
    x = task.prior.sample(K, init.split("sample"))
    s = score_particles(task, reference, metric, x, M, init.split("simulate"), cfg.threads)
    w = np.full(K, 1.0 / K)
    beta = math.inf
    pop = ParticlePopulation(x, w, s, beta, 0)
    for t in range(1, cfg.iterations + 1):
        step = rng.split(t)
        beta, w = smc_bandwidth_update(s, w, beta, cfg.alpha)
        resampled = effective_sample_size(w) < V
        if resampled:
            idx = systematic_resample(w, step.split("resample"))
            x, s, w = x[idx], s[idx], np.full(K, 1.0 / K)
        live = np.flatnonzero(w > 0)
        _, cov = _weighted_cov(x, w)
        walk = GaussianFull(np.zeros(d), cfg.covariance_scale * cov + JITTER * np.eye(d))
        prop = x[live] + walk.sample(live.size, step.split("move"))
        s_prop = score_particles(task, reference, metric, prop, M, step.split("simulate"), cfg.threads)
        with np.errstate(invalid="ignore"):
            log_ratio = np.atleast_1d(task.prior.log_prob(prop)) - np.atleast_1d(task.prior.log_prob(x[live]))
        u = step.split("accept").generator().random(live.size)
        accept = (s_prop <= beta) & (np.log(u) < log_ratio)
        x = x.copy()
        s = s.copy()
        x[live[accept]], s[live[accept]] = prop[accept], s_prop[accept]
        pop = ParticlePopulation(x, w, s, beta, t, {
            "resampled": bool(resampled), "acceptance": float(accept.mean()) if live.size else 0.0,
        })
        if callback is not None:
            callback(pop)
    return pop


def pmc_quantile_bandwidth(scores_pool, alpha) -> float:
    """Lower empirical ``alpha``-quantile: sorted element at ``ceil(alpha n) - 1``."""
    s = np.sort(np.asarray(scores_pool, dtype=float))
    if s.size == 0:
        raise ValueError("empty score pool")
    idx = max(math.ceil(alpha * s.size - 1e-9) - 1, 0)
    return float(s[min(idx, s.size - 1)])


def fit_perturbation_kernel(particles, weights, rng: RngStream, components: int = 5,
                            covariance_scale: float = 2.0) -> DensityModel:
    """Weighted GMM over the kept particles.

    With fewer than ``components * d`` kept particles the kernel falls back to
    one Gaussian at the weighted mean with ``covariance_scale`` times the
    weighted covariance plus the jitter floor.
    """
    x = np.atleast_2d(particles)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    n, d = x.shape
    distinct = np.unique(x[w > 0], axis=0).shape[0]
    if n < components * d or distinct < components:
        mean, cov = _weighted_cov(x, w)
        return GaussianFull(mean, covariance_scale * cov + JITTER * np.eye(d))
    return fit_gmm_weighted_em(x, w, components, rng)


def pmc_importance_weights(proposals, prior: DensityModel, kernel: DensityModel) -> np.ndarray:
    """Unnormalized ``p(x) / q(x)`` with ``q`` the perturbation-kernel mixture density."""
    log_p = np.atleast_1d(prior.log_prob(proposals))
    log_q = np.atleast_1d(kernel.log_prob(proposals))
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(np.isfinite(log_p), np.exp(log_p - log_q), 0.0)


def pmc_abc_run(task: TaskSpec, reference, metric: Metric, cfg: AbcConfig, rng: RngStream,
                callback: Callable[[ParticlePopulation], None] | None = None) -> ParticlePopulation:
    """PMC-ABC with a pooled keep step.

    Each iteration keeps the ``alpha K`` best particles, fits the perturbation
    kernel to them, proposes ``K - alpha K`` new particles weighted by prior
    over kernel density, pools them with the previous population, keeps the
    ``K`` lowest scores and sets ``beta_t`` to the pool's ``alpha``-quantile.
    The returned weights carry the indicator kernel ``1{s <= beta_t}``.
    """
    reference = np.atleast_2d(reference)
    K = cfg.particles
    k_alpha = int(math.ceil(cfg.alpha * K - 1e-9))
    if k_alpha < 2:
        raise ValueError("alpha * particles must be at least 2")
    M = cfg.resolved_sims(reference.shape[0])
    init = rng.split("init")
    x = task.prior.sample(K, init.split("sample"))
    s = score_particles(task, reference, metric, x, M, init.split("simulate"), cfg.threads)
    # unnormalized importance weights p / q; prior draws have ratio one
    iw = np.ones(K)
    beta = math.inf
    pop = ParticlePopulation(x, iw / iw.sum(), s, beta, 0)
    for t in range(1, cfg.iterations + 1):
        step = rng.split(t)
        order = np.argsort(s, kind="stable")
        kept = order[:k_alpha]
        if not np.any(iw[kept] > 0):
            raise PriorKernelMismatchError("prior-kernel mismatch: every kept particle has zero prior weight")
        kernel = fit_perturbation_kernel(x[kept], iw[kept], step.split("kernel"),
                                         cfg.kernel_components, cfg.covariance_scale)
        new = kernel.sample(K - k_alpha, step.split("propose"))
        s_new = score_particles(task, reference, metric, new, M, step.split("simulate"), cfg.threads)
        iw_new = pmc_importance_weights(new, task.prior, kernel)
        pool_x = np.concatenate([x, new])
        pool_s = np.concatenate([s, s_new])
        pool_w = np.concatenate([iw, iw_new])
        beta = min(beta, pmc_quantile_bandwidth(pool_s, cfg.alpha))
        keep = np.argsort(pool_s, kind="stable")[:K]
        x, s, iw = pool_x[keep], pool_s[keep], pool_w[keep]
        iw = iw / iw.sum()
        post = np.where(s <= beta, iw, 0.0)
        if post.sum() <= 0:
            raise PriorKernelMismatchError("prior-kernel mismatch: no accepted particle has prior mass")
        pop = ParticlePopulation(x, post / post.sum(), s, beta, t, {"max_kept_score": float(s.max())})
        if callback is not None:
            callback(pop)
    return pop
