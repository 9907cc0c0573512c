"""Sample-based discrepancies between observation sets.

Two estimators are provided: the unbiased multi-bandwidth MMD^2 and the
entropic transport cost <P, C> (squared 2-Wasserstein) computed by log-domain
Sinkhorn iterations. Both have a single-pair form and a batched form that
scores many simulated sets against one reference set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_BANDWIDTHS = (1.0, 10.0, 20.0, 40.0, 80.0, 100.0, 130.0, 200.0, 400.0, 800.0, 1000.0)


@dataclass(frozen=True)
class MmdConfig:
    bandwidths: tuple = DEFAULT_BANDWIDTHS

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if not bw or any(b <= 0 for b in bw):
            raise ValueError("bandwidths must be a non-empty list of positive reals")
        object.__setattr__(self, "bandwidths", bw)


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon_scale: float = 0.01
    max_iters: int = 1000
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon_scale <= 0 or self.marginal_tol <= 0 or self.max_iters < 1:
            raise ValueError("epsilon_scale, marginal_tol must be > 0 and max_iters >= 1")


@dataclass
class SinkhornDiagnostics:
    converged: np.ndarray
    iterations: np.ndarray
    marginal_error: np.ndarray
    epsilon: np.ndarray = field(default=None)


def _as_set(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def pairwise_sq_dist(X, Y) -> np.ndarray:
    X, Y = _as_set(X), _as_set(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return cdist(X, Y, "sqeuclidean")


def kernel_sum(sq_dist, bandwidths=DEFAULT_BANDWIDTHS, out=None, work=None) -> np.ndarray:
    """Sum of Gaussian kernels ``exp(-c / (2 l))`` over the bandwidth list."""
    if out is None:
        out = np.zeros_like(sq_dist)
    else:
        out.fill(0.0)
    if work is None:
        work = np.empty_like(sq_dist)
    for ell in bandwidths:
        np.multiply(sq_dist, -0.5 / ell, out=work)
        np.exp(work, out=work)
        out += work
    return out


def _block_sum(X, Y, bandwidths, chunk, symmetric=False):
    """Sum of kernel entries over all pairs; ``symmetric`` visits each block pair once."""
    total = 0.0
    for i in range(0, X.shape[0], chunk):
        xi = X[i:i + chunk]
        for j in range(i if symmetric else 0, Y.shape[0], chunk):
            c = cdist(xi, Y[j:j + chunk], "sqeuclidean")
            part = kernel_sum(c, bandwidths, work=np.empty_like(c)).sum()
            total += part if not (symmetric and j > i) else 2.0 * part
    return total


def mmd2_unbiased(X, Y, cfg: MmdConfig = MmdConfig(), chunk: int = 256) -> float:
    """Unbiased U-statistic estimate of MMD^2; may be slightly negative."""
    X, Y = _as_set(X), _as_set(Y)
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise ValueError("need two samples per set")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    nb = len(cfg.bandwidths)
    # diagonal kernel entries are exactly nb (zero distance)
    kxx = (_block_sum(X, X, cfg.bandwidths, chunk, True) - n * nb) / (n * (n - 1))
    kyy = (_block_sum(Y, Y, cfg.bandwidths, chunk, True) - m * nb) / (m * (m - 1))
    kxy = _block_sum(X, Y, cfg.bandwidths, chunk) / (n * m)
    return float(kxx + kyy - 2.0 * kxy)


def _batched_sq_dist(A, B):
    """``(b, n, m)`` squared distances between stacked sets via the Gram expansion."""
    na = np.einsum("bnd,bnd->bn", A, A)
    nb = np.einsum("bmd,bmd->bm", B, B)
    d = na[:, :, None] + nb[:, None, :] - 2.0 * np.matmul(A, np.swapaxes(B, 1, 2))
    np.maximum(d, 0.0, out=d)
    return d


def mmd2_unbiased_batch(reference, sims, cfg: MmdConfig = MmdConfig(), chunk: int = 64) -> np.ndarray:
    """MMD^2 between one reference set ``(N, d)`` and each of ``(K, M, d)`` sets."""
    X = _as_set(reference)
    S = np.asarray(sims, dtype=float)
    if S.ndim == 2:
        S = S[:, :, None]
    n, (k, m, d) = X.shape[0], S.shape
    if n < 2 or m < 2:
        raise ValueError("need two samples per set")
    if d != X.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {d}")
    bw = cfg.bandwidths
    nb = len(bw)
    kxx = (kernel_sum(pairwise_sq_dist(X, X), bw).sum() - n * nb) / (n * (n - 1))
    out = np.empty(k)
    eye = np.eye(m, dtype=bool)
    for start in range(0, k, chunk):
        Y = S[start:start + chunk]
        cyy = _batched_sq_dist(Y, Y)
        cyy[:, eye] = 0.0
        kyy = (kernel_sum(cyy, bw).sum(axis=(1, 2)) - m * nb) / (m * (m - 1))
        cxy = _batched_sq_dist(Y, np.broadcast_to(X, (Y.shape[0], n, d)))
        kxy = kernel_sum(cxy, bw).sum(axis=(1, 2)) / (n * m)
        out[start:start + Y.shape[0]] = kxx + kyy - 2.0 * kxy
    return out


def _lse_inplace(buf, axis):
    """``log(sum(exp(buf)))`` along ``axis``; overwrites ``buf``."""
    m = buf.max(axis=axis, keepdims=True)
    buf -= m
    np.exp(buf, out=buf)
    return np.log(buf.sum(axis=axis)) + np.squeeze(m, axis=axis)


def _sinkhorn_batch(C, eps, max_iters, tol, anneal=True):
    """Log-domain Sinkhorn with uniform marginals on a stack of cost matrices.

    ``eps`` holds one regularization per instance. With ``anneal`` the solver
    warm-starts from coarser regularizations (halving down to the target),
    spending at most 10 iterations per intermediate stage. Potentials are kept
    scaled by the current regularization (``u = f / eps``).
    """
    b, n, m = C.shape
    log_a, log_b = -np.log(n), -np.log(m)
    f = np.zeros((b, n))
    g = np.zeros((b, m))
    best_err = np.full(b, np.inf)
    best_f, best_g = f.copy(), g.copy()
    iters = np.zeros(b, dtype=int)
    converged = np.zeros(b, dtype=bool)

    stages = []
    if anneal:
        start = np.maximum(C.reshape(b, -1).max(axis=1), eps)
        levels = int(np.ceil(np.log2(np.max(start / eps)))) if np.any(start > eps) else 0
        for lvl in range(levels, 0, -1):
            stages.append((np.maximum(eps, eps * 2.0 ** lvl), 10))
    stages.append((eps, max_iters))

    buf = np.empty_like(C)
    for stage_index, (stage_eps, stage_iters) in enumerate(stages):
        final = stage_index == len(stages) - 1
        active = np.arange(b) if not final else np.flatnonzero(~converged)
        e = stage_eps[active][:, None]
        Ce = C[active] / e[:, :, None]
        u, v = f[active] / e, g[active] / e
        work = buf[:active.size]
        for _ in range(stage_iters):
            np.subtract(v[:, None, :], Ce, out=work)
            r = _lse_inplace(work, 2)
            if final:
                err = np.abs(np.exp(u + r) - np.exp(log_a)).sum(axis=1)
                improved = err < best_err[active]
                upd = active[improved]
                best_err[upd] = err[improved]
                best_f[upd], best_g[upd] = u[improved] * e[improved], v[improved] * e[improved]
                keep = err >= tol
                converged[active[~keep]] = True
                f[active[~keep]], g[active[~keep]] = u[~keep] * e[~keep], v[~keep] * e[~keep]
                if not keep.all():
                    active, r, e, Ce, u, v = active[keep], r[keep], e[keep], Ce[keep], u[keep], v[keep]
                    work = buf[:active.size]
                if active.size == 0:
                    break
                iters[active] += 1
            u = log_a - r
            np.subtract(u[:, :, None], Ce, out=work)
            v = log_b - _lse_inplace(work, 1)
        f[active], g[active] = u * e, v * e

    # instances that never met the tolerance report their best iterate
    f = np.where(converged[:, None], f, best_f)
    g = np.where(converged[:, None], g, best_g)
    logP = (f[:, :, None] + g[:, None, :] - C) / eps[:, None, None]
    cost = np.sum(np.exp(logP) * C, axis=(1, 2))
    return cost, SinkhornDiagnostics(converged, iters, best_err, eps)


def _relative_eps(C, scale):
    mean_c = C.reshape(C.shape[0], -1).mean(axis=1)
    # all-zero costs: any positive regularization gives zero cost
    return scale * np.where(mean_c > 0, mean_c, 1.0)


def sinkhorn_w2(X, Y, cfg: SinkhornConfig = SinkhornConfig(), return_diagnostics: bool = False):
    """Entropic squared 2-Wasserstein transport cost between two sample sets.

    Regularization is ``cfg.epsilon_scale`` times the mean pairwise cost. The
    returned value is the transport cost of the converged coupling without
    the entropy term.
    """
    C = pairwise_sq_dist(X, Y)[None]
    cost, diag = _sinkhorn_batch(C, _relative_eps(C, cfg.epsilon_scale), cfg.max_iters, cfg.marginal_tol)
    if return_diagnostics:
        return float(cost[0]), diag
    return float(cost[0])


def sinkhorn_w2_batch(reference, sims, cfg: SinkhornConfig = SinkhornConfig(), chunk: int = 32,
                      return_diagnostics: bool = False):
    """Sinkhorn cost between each simulated set in ``(K, M, d)`` and the reference."""
    X = _as_set(reference)
    S = np.asarray(sims, dtype=float)
    if S.ndim == 2:
        S = S[:, :, None]
    k = S.shape[0]
    out = np.empty(k)
    converged = np.empty(k, dtype=bool)
    for start in range(0, k, chunk):
        Y = S[start:start + chunk]
        C = _batched_sq_dist(Y, np.broadcast_to(X, (Y.shape[0],) + X.shape))
        cost, diag = _sinkhorn_batch(C, _relative_eps(C, cfg.epsilon_scale), cfg.max_iters, cfg.marginal_tol)
        out[start:start + Y.shape[0]] = cost
        converged[start:start + Y.shape[0]] = diag.converged
    if return_diagnostics:
        return out, converged
    return out


class Metric:
    """A discrepancy usable as a particle score: ``D(reference, simulated)``."""

    name = "abstract"

    def __call__(self, reference, simulated) -> float:
        raise NotImplementedError

    def batch(self, reference, sims) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class MmdMetric(Metric):
    cfg: MmdConfig = MmdConfig()
    name = "mmd"

    def __call__(self, reference, simulated):
        return mmd2_unbiased(reference, simulated, self.cfg)

    def batch(self, reference, sims):
        return mmd2_unbiased_batch(reference, sims, self.cfg)


@dataclass(frozen=True)
class WassersteinMetric(Metric):
    cfg: SinkhornConfig = SinkhornConfig()
    name = "w"

    def __call__(self, reference, simulated):
        return sinkhorn_w2(reference, simulated, self.cfg)

    def batch(self, reference, sims):
        return sinkhorn_w2_batch(reference, sims, self.cfg)


def get_metric(name: str, **kwargs) -> Metric:
    if name == "mmd":
        return MmdMetric(MmdConfig(**kwargs) if kwargs else MmdConfig())
    if name in ("w", "wasserstein", "sinkhorn"):
        return WassersteinMetric(SinkhornConfig(**kwargs) if kwargs else SinkhornConfig())
    raise ValueError(f"unknown metric {name!r}")
