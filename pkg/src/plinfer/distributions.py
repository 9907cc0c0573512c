"""Priors and fittable density models over parameter space.

Every model exposes ``dim``, ``sample(count, rng)`` and a vectorized
``log_prob``; the Gaussian and mixture families can also be fitted to
weighted particles, which is how the posterior approximation is updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .core import RngStream, cholesky_spd, log_sum_exp

JITTER = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


def _rows(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x, single


def _finish(values, single):
    return float(values[0]) if single else values


class DensityModel:
    """Interface shared by all parameter-space distributions."""

    kind = "abstract"
    dim: int

    def sample(self, count: int, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def log_prob(self, x):
        raise NotImplementedError

    def in_support(self, x) -> np.ndarray:
        return np.isfinite(np.atleast_1d(self.log_prob(x)))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class BoxUniform(DensityModel):
    lower: np.ndarray
    upper: np.ndarray
    kind = "box_uniform"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("BoxUniform needs lower < upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def sample(self, count, rng):
        u = rng.generator().random((count, self.dim))
        return self.lower + u * (self.upper - self.lower)

    def log_prob(self, x):
        x, single = _rows(x, self.dim)
        inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        value = -np.sum(np.log(self.upper - self.lower))
        return _finish(np.where(inside, value, -np.inf), single)

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class GaussianFull(DensityModel):
    mean: np.ndarray
    covariance: np.ndarray
    kind = "gaussian"
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match mean")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", cholesky_spd(cov))

    @property
    def dim(self):
        return self.mean.size

    def sample(self, count, rng):
        z = rng.generator().standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T

    def _log_prob_rows(self, x):
        z = solve_triangular(self._chol, (x - self.mean).T, lower=True)
        half_logdet = np.sum(np.log(np.diag(self._chol)))
        return -0.5 * np.sum(z * z, axis=0) - half_logdet - 0.5 * self.dim * _LOG_2PI

    def log_prob(self, x):
        x, single = _rows(x, self.dim)
        return _finish(self._log_prob_rows(x), single)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean, "covariance": self.covariance}


@dataclass(frozen=True, eq=False)
class LogNormalDiag(DensityModel):
    log_mean: np.ndarray
    log_std: np.ndarray
    kind = "lognormal_diag"

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.log_mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.log_std, dtype=float))
        if mu.shape != sd.shape or not np.all(sd > 0):
            raise ValueError("LogNormalDiag needs positive log_std matching log_mean")
        object.__setattr__(self, "log_mean", mu)
        object.__setattr__(self, "log_std", sd)

    @property
    def dim(self):
        return self.log_mean.size

    def sample(self, count, rng):
        z = rng.generator().standard_normal((count, self.dim))
        return np.exp(self.log_mean + self.log_std * z)

    def log_prob(self, x):
        x, single = _rows(x, self.dim)
        positive = np.all(x > 0, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(np.where(x > 0, x, 1.0))
            z = (lx - self.log_mean) / self.log_std
            lp = np.sum(-lx - np.log(self.log_std) - 0.5 * _LOG_2PI - 0.5 * z * z, axis=1)
        return _finish(np.where(positive, lp, -np.inf), single)

    def to_dict(self):
        return {"kind": self.kind, "log_mean": self.log_mean, "log_std": self.log_std}


@dataclass(frozen=True, eq=False)
class GaussianMixture(DensityModel):
    weights: np.ndarray
    components: tuple
    kind = "gmm"

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(self.components)
        if len(comps) == 0 or w.size != len(comps):
            raise ValueError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("mixture components differ in dimension")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.components[0].dim

    def sample(self, count, rng):
        gen = rng.generator()
        labels = gen.choice(len(self.components), size=count, p=self.weights)
        out = np.empty((count, self.dim))
        for j, comp in enumerate(self.components):
            rows = np.flatnonzero(labels == j)
            if rows.size:
                z = gen.standard_normal((rows.size, self.dim))
                out[rows] = comp.mean + z @ comp._chol.T
        return out

    def component_log_probs(self, x):
        """``(n, k)`` matrix of ``log w_j + log N_j(x_i)``."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return np.stack([lw + c._log_prob_rows(x) for lw, c in zip(logw, self.components)], axis=1)

    def log_prob(self, x):
        x, single = _rows(x, self.dim)
        return _finish(logsumexp(self.component_log_probs(x), axis=1), single)

    def to_dict(self):
        return {
            "kind": self.kind,
            "weights": self.weights,
            "means": np.stack([c.mean for c in self.components]),
            "covariances": np.stack([c.covariance for c in self.components]),
        }


@dataclass(frozen=True, eq=False)
class PointMass(DensityModel):
    """Dirac measure; used to evaluate simulators at a fixed parameter."""

    value: np.ndarray
    kind = "point_mass"

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))

    @property
    def dim(self):
        return self.value.size

    def sample(self, count, rng):
        return np.tile(self.value, (count, 1))

    def log_prob(self, x):
        x, single = _rows(x, self.dim)
        return _finish(np.where(np.all(x == self.value, axis=1), 0.0, -np.inf), single)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


def model_from_dict(d: dict) -> DensityModel:
    kind = d["kind"]
    if kind == "box_uniform":
        return BoxUniform(d["lower"], d["upper"])
    if kind == "gaussian":
        return GaussianFull(d["mean"], d["covariance"])
    if kind == "lognormal_diag":
        return LogNormalDiag(d["log_mean"], d["log_std"])
    if kind == "point_mass":
        return PointMass(d["value"])
    if kind == "gmm":
        means = np.atleast_2d(d["means"])
        covs = np.asarray(d["covariances"], dtype=float).reshape(len(means), means.shape[1], means.shape[1])
        return GaussianMixture(d["weights"], tuple(GaussianFull(m, c) for m, c in zip(means, covs)))
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# weighted maximum likelihood


def _check_weights(points, weights):
    x = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != x.shape[0]:
        raise ValueError("one weight per point required")
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ValueError("invalid weights")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to one (got {w.sum():.12g})")
    return x, w


def _weighted_moments(x, w):
    mean = w @ x
    diff = x - mean
    cov = (diff * w[:, None]).T @ diff
    return mean, 0.5 * (cov + cov.T)


def fit_gaussian_weighted(points, weights, jitter: float = JITTER) -> GaussianFull:
    """Closed-form weighted ML Gaussian, covariance floored by ``jitter * I``."""
    x, w = _check_weights(points, weights)
    mean, cov = _weighted_moments(x, w)
    return GaussianFull(mean, cov + jitter * np.eye(x.shape[1]))


@dataclass
class EmTrace:
    log_likelihood: list
    reinitialized: list
    iterations: int


def _kmeanspp_centers(x, w, k, gen):
    idx = gen.choice(x.shape[0], size=x.shape[0], p=w)
    pool = x[idx]
    centers = [pool[gen.integers(pool.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(((pool[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(pool[gen.integers(pool.shape[0])])
        else:
            centers.append(pool[gen.choice(pool.shape[0], p=d2 / total)])
    return np.asarray(centers)


def _m_step(x, w, resp, jitter):
    wr = resp * w[:, None]
    mass = wr.sum(axis=0)
    d = x.shape[1]
    means, covs = [], []
    for j in range(resp.shape[1]):
        if mass[j] <= 0:
            means.append(None)
            covs.append(None)
            continue
        mu = wr[:, j] @ x / mass[j]
        diff = x - mu
        cov = (diff * wr[:, j, None]).T @ diff / mass[j]
        means.append(mu)
        covs.append(0.5 * (cov + cov.T) + jitter * np.eye(d))
    return mass, means, covs


def _em_once(x, w, k, gen, max_iters, tol, jitter):
    n, d = x.shape
    centers = _kmeanspp_centers(x, w, k, gen)
    labels = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    _, global_cov = _weighted_moments(x, w)
    global_cov = global_cov + jitter * np.eye(d)

    mass, means, covs = _m_step(x, w, resp, jitter)
    retries = np.zeros(k, dtype=int)
    trace, reinit = [], []
    ll_old = -np.inf
    it = 0
    for it in range(1, max_iters + 1):
        # collapse handling: reinitialize starved components, drop repeat offenders
        starved = [j for j in range(len(means)) if means[j] is None or mass[j] < 1e-8]
        if starved:
            keep = []
            for j in range(len(means)):
                if j in starved:
                    retries[j] += 1
                    if retries[j] > 3:
                        continue
                    means[j] = x[gen.choice(n, p=w)]
                    covs[j] = global_cov.copy()
                    mass[j] = 1.0 / len(means)
                    reinit.append(it)
                keep.append(j)
            means = [means[j] for j in keep]
            covs = [covs[j] for j in keep]
            mass = mass[keep]
            retries = retries[keep]
        weights = mass / mass.sum()
        model = GaussianMixture(weights, tuple(GaussianFull(m, c) for m, c in zip(means, covs)))
        clp = model.component_log_probs(x)
        lse = logsumexp(clp, axis=1)
        ll = float(w @ lse)
        trace.append(ll)
        if np.isfinite(ll_old) and not starved and ll - ll_old <= tol * abs(ll_old):
            break
        ll_old = ll
        resp = np.exp(clp - lse[:, None])
        mass, means, covs = _m_step(x, w, resp, jitter)
    return model, EmTrace(trace, reinit, it)


def fit_gmm_weighted_em(
    points,
    weights,
    k: int,
    rng: RngStream,
    max_iters: int = 200,
    tol: float = 1e-8,
    jitter: float = JITTER,
    restarts: int = 3,
    return_trace: bool = False,
):
    """Weighted EM for a ``k``-component Gaussian mixture.

    Seeding is k-means++ on weight-resampled points; the best of ``restarts``
    runs (by weighted log-likelihood) is returned. Responsibilities are
    computed in the log domain so extreme weights do not underflow.
    """
    x, w = _check_weights(points, weights)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        g = fit_gaussian_weighted(x, w, jitter)
        model = GaussianMixture(np.ones(1), (g,))
        ll = float(w @ g.log_prob(x))
        return (model, EmTrace([ll], [], 1)) if return_trace else model
    support = np.flatnonzero(w > 0)
    if np.unique(x[support], axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct weighted points")
    best = None
    for r in range(restarts):
        model, trace = _em_once(x, w, k, rng.split(r).generator(), max_iters, tol, jitter)
        if best is None or trace.log_likelihood[-1] > best[1].log_likelihood[-1]:
            best = (model, trace)
    return best if return_trace else best[0]


def weighted_log_likelihood(model: DensityModel, points, weights) -> float:
    lp = np.atleast_1d(model.log_prob(points))
    w = np.asarray(weights, dtype=float)
    mask = w > 0
    return float(w[mask] @ lp[mask])


__all__ = [
    "BoxUniform",
    "DensityModel",
    "EmTrace",
    "GaussianFull",
    "GaussianMixture",
    "JITTER",
    "LogNormalDiag",
    "PointMass",
    "fit_gaussian_weighted",
    "fit_gmm_weighted_em",
    "log_sum_exp",
    "model_from_dict",
    "weighted_log_likelihood",
]
