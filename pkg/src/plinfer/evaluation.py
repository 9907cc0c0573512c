"""Reference posteriors, sample-based posterior metrics and predictive checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import RngStream, log_sum_exp
from .distributions import DensityModel, GaussianFull
from .ipm import MmdConfig, SinkhornConfig, mmd2_unbiased, mmd2_unbiased_batch, sinkhorn_w2, sinkhorn_w2_batch
from .simulators import TaskSpec, gmm_task_log_likelihood
from .simulators.benchmarks import GAUSSIAN_LOCATION_VAR
from .simulators.furuta import FurutaConfig, furuta_observe


class ModelOutsidePriorError(ValueError):
    pass


def gaussian_location_reference(reference, dim: int | None = None) -> GaussianFull:
    """Conjugate posterior under prior ``N(0, 0.1 I)`` and likelihood ``N(xi, 0.1 I)``."""
    x = np.asarray(reference, dtype=float)
    if x.size == 0:
        d = 10 if dim is None else dim
        return GaussianFull(np.zeros(d), GAUSSIAN_LOCATION_VAR * np.eye(d))
    x = np.atleast_2d(x)
    n, d = x.shape
    return GaussianFull(x.sum(axis=0) / (n + 1), GAUSSIAN_LOCATION_VAR / (n + 1) * np.eye(d))


@dataclass(frozen=True, eq=False)
class GridPosterior:
    """Piecewise-constant 2-D density on a regular grid of cells."""

    lower: np.ndarray
    cell: np.ndarray
    shape: tuple
    log_mass: np.ndarray  # normalized, one entry per cell, row-major (x0 index major)

    def centers(self) -> np.ndarray:
        i0, i1 = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]), indexing="ij")
        idx = np.stack([i0.ravel(), i1.ravel()], axis=1)
        return self.lower + (idx + 0.5) * self.cell

    def mass(self) -> np.ndarray:
        return np.exp(self.log_mass)

    def mean(self) -> np.ndarray:
        return self.mass() @ self.centers()

    def std(self) -> np.ndarray:
        # exact for the piecewise-uniform density: add the within-cell variance
        c = self.centers()
        mu = self.mass() @ c
        var = self.mass() @ (c - mu) ** 2 + self.cell ** 2 / 12.0
        return np.sqrt(var)

    def mode(self) -> np.ndarray:
        return self.centers()[np.argmax(self.log_mass)]

    def sample(self, count: int, rng: RngStream) -> np.ndarray:
        gen = rng.generator()
        p = self.mass()
        cells = gen.choice(p.size, size=count, p=p / p.sum())
        i0, i1 = np.unravel_index(cells, self.shape)
        corner = self.lower + np.stack([i0, i1], axis=1) * self.cell
        return corner + gen.random((count, 2)) * self.cell


def _grid_log_mass(lower, upper, resolution, log_density):
    cell = (upper - lower) / resolution
    ax0 = lower[0] + (np.arange(resolution) + 0.5) * cell[0]
    ax1 = lower[1] + (np.arange(resolution) + 0.5) * cell[1]
    g0, g1 = np.meshgrid(ax0, ax1, indexing="ij")
    lp = log_density(np.stack([g0.ravel(), g1.ravel()], axis=1))
    return cell, lp - log_sum_exp(lp)


def gmm_task_grid_posterior(reference, resolution: int = 400, lower=-10.0, upper=10.0,
                            refine_rounds: int = 4, tail: float = 40.0) -> GridPosterior:
    """Exact GMM-task posterior on a ``resolution^2`` grid over the prior box.

    The posterior can be far narrower than one cell of the prior-box grid, so
    the grid is re-laid over the cells holding all but ``exp(-tail)`` of the
    mass until the box stops shrinking.
    """
    obs = np.atleast_2d(reference)
    lo = np.full(2, float(lower))
    hi = np.full(2, float(upper))
    box_lo, box_hi = lo.copy(), hi.copy()

    def log_density(points):
        return gmm_task_log_likelihood(points, obs)

    cell, lm = _grid_log_mass(box_lo, box_hi, resolution, log_density)
    for _ in range(refine_rounds):
        keep = lm > lm.max() - tail
        i0, i1 = np.unravel_index(np.flatnonzero(keep), (resolution, resolution))
        new_lo = np.maximum(box_lo + np.array([i0.min() - 1, i1.min() - 1]) * cell, lo)
        new_hi = np.minimum(box_lo + np.array([i0.max() + 2, i1.max() + 2]) * cell, hi)
        if np.all(new_hi - new_lo > 0.5 * (box_hi - box_lo)):
            break
        box_lo, box_hi = new_lo, new_hi
        cell, lm = _grid_log_mass(box_lo, box_hi, resolution, log_density)
    return GridPosterior(box_lo, cell, (resolution, resolution), lm)


def gmm_task_reference_samples(reference, count: int, rng: RngStream, resolution: int = 400) -> np.ndarray:
    return gmm_task_grid_posterior(reference, resolution).sample(count, rng)


def posterior_sample_metrics(model_samples, reference_samples, mmd_cfg: MmdConfig = MmdConfig(),
                             sinkhorn_cfg: SinkhornConfig = SinkhornConfig(),
                             w2_subsample: int | None = 2000, rng: RngStream | None = None):
    """MMD^2 on the full sets and entropic W2^2, the latter on random subsets.

    ``w2_subsample=None`` uses every sample for the transport cost.
    """
    X = np.atleast_2d(model_samples)
    Y = np.atleast_2d(reference_samples)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("sample sets differ in dimension")
    mmd2 = mmd2_unbiased(X, Y, mmd_cfg)
    if w2_subsample is not None:
        rng = rng if rng is not None else RngStream(0, ("w2-subsample",))
        if X.shape[0] > w2_subsample:
            X = X[rng.split("model").generator().choice(X.shape[0], w2_subsample, replace=False)]
        if Y.shape[0] > w2_subsample:
            Y = Y[rng.split("reference").generator().choice(Y.shape[0], w2_subsample, replace=False)]
    return mmd2, sinkhorn_w2(X, Y, sinkhorn_cfg)


def draw_in_support(model, prior: DensityModel, count: int, rng: RngStream, oversample: int = 10) -> np.ndarray:
    """``count`` model draws inside the prior support, from at most ``oversample * count`` tries."""
    cand = model.sample(oversample * count, rng)
    ok = prior.in_support(cand)
    if ok.mean() < 1.0 / oversample or ok.sum() < count:
        raise ModelOutsidePriorError("model mass outside prior: more than 90% of draws rejected")
    return cand[ok][:count]


def posterior_predictive_check(model, task: TaskSpec, reference, sims: int = 1000,
                               rng: RngStream = RngStream(0), M: int | None = None, pooled: bool = False,
                               mmd_cfg: MmdConfig = MmdConfig(),
                               sinkhorn_cfg: SinkhornConfig = SinkhornConfig(), pooled_cap: int = 10000):
    """Expected discrepancy between the reference and simulations at posterior draws.

    By default each drawn parameter simulates ``M`` (= N) observations and the
    two IPMs are averaged over parameters; ``pooled`` instead compares one
    pooled set (capped at ``pooled_cap`` points) with the reference.
    """
    reference = np.atleast_2d(reference)
    M = reference.shape[0] if M is None else M
    thetas = draw_in_support(model, task.prior, sims, rng.split("params"))
    sim_rng = rng.split("simulate")
    if pooled:
        pool = np.concatenate([task.simulate_batch(thetas[i:i + 64], M, sim_rng, start=i).reshape(-1, task.obs_dim)
                               for i in range(0, sims, 64)])
        if pool.shape[0] > pooled_cap:
            pool = pool[rng.split("cap").generator().choice(pool.shape[0], pooled_cap, replace=False)]
        return mmd2_unbiased(reference, pool, mmd_cfg), sinkhorn_w2(reference, pool, sinkhorn_cfg)
    mmd_sum, w_sum = 0.0, 0.0
    for i in range(0, sims, 64):
        batch = task.simulate_batch(thetas[i:i + 64], M, sim_rng, start=i)
        if M >= 2 and reference.shape[0] >= 2:
            mmd_sum += mmd2_unbiased_batch(reference, batch, mmd_cfg).sum()
        w_sum += sinkhorn_w2_batch(reference, batch, sinkhorn_cfg).sum()
    ppc_mmd = mmd_sum / sims if M >= 2 and reference.shape[0] >= 2 else float("nan")
    return float(ppc_mmd), float(w_sum / sims)


def furuta_sync_error(model, reference_states, reference_trajs, sims: int, rng: RngStream,
                      cfg: FurutaConfig = FurutaConfig(), prior: DensityModel | None = None) -> float:
    """Mean over rollouts of the summed absolute deviation from the reference trajectories.

    Rollout ``i`` starts from reference initial state ``i mod N`` with a
    parameter drawn from the model.
    """
    states = np.atleast_2d(reference_states)
    trajs = np.atleast_2d(reference_trajs)
    if prior is not None:
        thetas = draw_in_support(model, prior, sims, rng)
    else:
        thetas = model.sample(sims, rng)
    idx = np.arange(sims) % states.shape[0]
    sim = furuta_observe(thetas, states[idx], cfg)
    return float(np.abs(sim - trajs[idx]).sum(axis=1).mean())


@dataclass
class EvalReport:
    task: str
    method: str
    N: int
    M: int
    seed: int
    iteration_count: int
    mmd2_posterior: float | None = None
    w2_posterior: float | None = None
    ppc_mmd2: float | None = None
    ppc_w2: float | None = None
    furuta_sync_error: float | None = None
    wall_seconds: float | None = None

    def as_row(self) -> dict:
        return asdict(self)
