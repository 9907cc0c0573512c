"""Pseudo-likelihood inference with a KL trust region on the posterior update.

Each iteration draws particles from the current proposal, scores simulated
data against the reference with an IPM, picks the temperature eta by
maximizing the trust-region dual, and refits the density model to the
resulting weighted particles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import RngStream, effective_sample_size, log_sum_exp
from .distributions import DensityModel, fit_gaussian_weighted, fit_gmm_weighted_em
from .ipm import Metric
from .scoring import score_particles
from .simulators import TaskSpec

log = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class PliConfig:
    epsilon: float = 0.5
    # None means 1 / (2 N) for the reference size N
    base_bandwidth: float | None = None
    eta_bounds: tuple = (1e-6, 1e6)
    iterations: int = 20
    samples_per_iter: int = 5000
    # None means M = N
    sims_per_param: int | None = None
    estimator: str = "gaussian"
    gmm_components: int = 5
    max_evals: int = 200
    log_eta_tol: float = 1e-6
    threads: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        lo, hi = self.eta_bounds
        if not 0 < lo < hi:
            raise ValueError("eta_bounds must satisfy 0 < min < max")
        if self.base_bandwidth is not None and not self.base_bandwidth > 0:
            raise ValueError("base_bandwidth must be positive")
        if self.estimator not in ("gaussian", "gmm"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.iterations < 0 or self.samples_per_iter < 2:
            raise ValueError("need iterations >= 0 and samples_per_iter >= 2")

    def resolved_bandwidth(self, n_obs: int) -> float:
        return self.base_bandwidth if self.base_bandwidth is not None else 1.0 / (2.0 * n_obs)

    def resolved_sims(self, n_obs: int) -> int:
        return self.sims_per_param if self.sims_per_param is not None else n_obs


@dataclass(frozen=True, eq=False)
class InferenceState:
    iteration: int
    proposal: DensityModel
    particles: np.ndarray
    scores: np.ndarray
    eta: float
    beta: float
    weights: np.ndarray
    dual: float
    model: DensityModel
    base_bandwidth: float
    ess: float
    kl: float
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        finite = self.scores[np.isfinite(self.scores)]
        q = np.quantile(finite, [0.0, 0.1, 0.5, 0.9]) if finite.size else [np.nan] * 4
        return {
            "iteration": self.iteration,
            "eta": self.eta,
            "beta": self.beta,
            "base_bandwidth": self.base_bandwidth,
            "dual": self.dual,
            "ess": self.ess,
            "kl": self.kl,
            "score_min": q[0],
            "score_q10": q[1],
            "score_median": q[2],
            "score_q90": q[3],
            "status": self.diagnostics.get("status", "ok"),
        }


def pseudo_log_likelihood(score, beta_t):
    """Log of the tempered pseudo-likelihood ``exp(-s / (2 beta_t))`` up to ``Z``."""
    return -np.asarray(score, dtype=float) / (2.0 * beta_t)


def _tempered_logits(eta, scores, log_prior_ratio, base_bandwidth):
    tau = 1.0 / (1.0 + eta)
    with np.errstate(invalid="ignore"):
        a = np.asarray(log_prior_ratio, dtype=float) - np.asarray(scores, dtype=float) / (2.0 * base_bandwidth)
    # particles outside the prior (ratio -inf) or unscored (+inf) carry no mass
    a = np.where(np.isnan(a), -np.inf, a)
    return tau * a


def dual_value(eta, scores, log_prior_ratio, epsilon, base_bandwidth) -> float:
    """Sample estimate of the trust-region dual at ``eta``."""
    logits = _tempered_logits(eta, scores, log_prior_ratio, base_bandwidth)
    return float(-eta * epsilon - (1.0 + eta) * (log_sum_exp(logits) - math.log(logits.size)))


def categorical_kl(p_ref, p_model) -> float:
    """``KL(p_ref || p_model)`` between categorical distributions, ``0 log 0 = 0``."""
    p = np.asarray(p_ref, dtype=float)
    q = np.asarray(p_model, dtype=float)
    nz = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def empirical_kl(weights) -> float:
    """``sum w log(K w)``: KL from the uniform proposal weights to ``weights``."""
    w = np.asarray(weights, dtype=float)
    nz = w > 0
    return float(np.sum(w[nz] * np.log(w.size * w[nz])))


@dataclass
class EtaResult:
    eta: float
    beta: float
    dual: float
    evaluations: int
    status: str = "ok"


def optimize_eta(scores, log_prior_ratio, cfg: PliConfig, base_bandwidth: float) -> EtaResult:
    """Golden-section maximization of the dual over ``log eta``."""
    scores = np.asarray(scores, dtype=float)
    if scores.size < 2:
        raise ValueError("need at least two particles")
    lo, hi = math.log(cfg.eta_bounds[0]), math.log(cfg.eta_bounds[1])
    evals = 0

    def g(log_eta):
        nonlocal evals
        evals += 1
        return dual_value(math.exp(log_eta), scores, log_prior_ratio, cfg.epsilon, base_bandwidth)

    g_lo, g_hi = g(lo), g(hi)
    if not (np.isfinite(g_lo) and np.isfinite(g_hi)):
        eta = cfg.eta_bounds[1]
        return EtaResult(eta, (1.0 + eta) * base_bandwidth, float("nan"), evals, "constraint inactive")
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    seen = [g_lo, g_hi, gc, gd]
    while b - a > cfg.log_eta_tol and evals < cfg.max_evals:
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - _GOLDEN * (b - a)
            gc = g(c)
            seen.append(gc)
        else:
            a, c, gc = c, d, gd
            d = a + _GOLDEN * (b - a)
            gd = g(d)
            seen.append(gd)
    candidates = [(g_lo, lo), (g_hi, hi), (gc, c), (gd, d)]
    best_val, best_log = max(candidates, key=lambda t: t[0])
    spread = max(seen) - min(seen)
    if spread <= 1e-12 * max(1.0, abs(best_val)):
        eta = cfg.eta_bounds[1]
        return EtaResult(eta, (1.0 + eta) * base_bandwidth, g_hi, evals, "constraint inactive")
    eta = math.exp(best_log)
    return EtaResult(eta, (1.0 + eta) * base_bandwidth, float(best_val), evals)


def wml_weights(scores, log_prior, log_proposal, eta_t, beta_t):
    """Self-normalized weights ``(p / pi)^(1/(1+eta)) exp(-s / (2 beta_t))`` and their ESS."""
    with np.errstate(invalid="ignore"):
        ratio = np.asarray(log_prior, dtype=float) - np.asarray(log_proposal, dtype=float)
        log_w = ratio / (1.0 + eta_t) + pseudo_log_likelihood(scores, beta_t)
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    total = log_sum_exp(log_w)
    if not np.isfinite(total):
        raise DegenerateWeightsError("degenerate weights: every particle has zero weight; raise base_bandwidth")
    w = np.exp(log_w - total)
    w /= w.sum()
    return w, effective_sample_size(w)


def _fit(particles, weights, cfg: PliConfig, rng: RngStream) -> DensityModel:
    if cfg.estimator == "gaussian":
        return fit_gaussian_weighted(particles, weights)
    support = particles[weights > 0]
    k = min(cfg.gmm_components, np.unique(support, axis=0).shape[0])
    return fit_gmm_weighted_em(particles, weights, max(k, 1), rng)


def _update(particles, scores, log_prior, log_proposal, cfg, base_bandwidth):
    ratio = log_prior - log_proposal
    eta_res = optimize_eta(scores, ratio, cfg, base_bandwidth)
    weights, ess = wml_weights(scores, log_prior, log_proposal, eta_res.eta, eta_res.beta)
    return eta_res, weights, ess


def pli_step(state: InferenceState | None, task: TaskSpec, reference, metric: Metric,
             cfg: PliConfig, rng: RngStream, iteration: int | None = None) -> InferenceState:
    """One iteration: sample, simulate, score, solve for eta, reweight, refit.

    ``state=None`` starts from the prior. Randomness for iteration ``t`` comes
    from ``rng.split(t)``.
    """
    reference = np.atleast_2d(reference)
    n_obs = reference.shape[0]
    t = (0 if state is None else state.iteration + 1) if iteration is None else iteration
    proposal = task.prior if state is None else state.model
    base_bw = cfg.resolved_bandwidth(n_obs) if state is None else state.base_bandwidth
    step_rng = rng.split(t)

    particles = proposal.sample(cfg.samples_per_iter, step_rng.split("sample"))
    log_prior = np.atleast_1d(task.prior.log_prob(particles))
    log_proposal = np.atleast_1d(proposal.log_prob(particles))
    scores = score_particles(task, reference, metric, particles, cfg.resolved_sims(n_obs),
                             step_rng.split("simulate"), threads=cfg.threads)
    # unbiased MMD can dip below zero; a negative distance must not beat an exact match
    scores = np.maximum(scores, 0.0)

    diagnostics = {}
    try:
        eta_res, weights, ess = _update(particles, scores, log_prior, log_proposal, cfg, base_bw)
    except DegenerateWeightsError:
        base_bw *= 2.0
        log.warning("iteration %d: degenerate weights, retrying with base bandwidth %.6g", t, base_bw)
        diagnostics["bandwidth_retry"] = True
        eta_res, weights, ess = _update(particles, scores, log_prior, log_proposal, cfg, base_bw)
    diagnostics["status"] = eta_res.status
    diagnostics["dual_evaluations"] = eta_res.evaluations
    model = _fit(particles, weights, cfg, step_rng.split("fit"))
    return InferenceState(
        iteration=t,
        proposal=proposal,
        particles=particles,
        scores=scores,
        eta=eta_res.eta,
        beta=eta_res.beta,
        weights=weights,
        dual=eta_res.dual,
        model=model,
        base_bandwidth=base_bw,
        ess=ess,
        kl=empirical_kl(weights),
        diagnostics=diagnostics,
    )


class PliRunError(RuntimeError):
    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration


def pli_run(task: TaskSpec, reference, metric: Metric, cfg: PliConfig, rng: RngStream,
            callback: Callable[[InferenceState], None] | None = None):
    """Run ``cfg.iterations`` steps; returns the final model and every state."""
    states: list[InferenceState] = []
    state = None
    for t in range(cfg.iterations):
        try:
            state = pli_step(state, task, reference, metric, cfg, rng, iteration=t)
        except Exception as exc:
            raise PliRunError(t, exc) from exc
        states.append(state)
        if callback is not None:
            callback(state)
    final = task.prior if state is None else state.model
    return final, states

