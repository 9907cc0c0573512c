from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import RngStream
from ..distributions import DensityModel


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """A benchmark problem: prior, ground truth and a stochastic simulator.

    ``noise`` draws the randomness of one parameter's batch of ``M``
    observations from a numpy Generator; ``transform`` maps stacked parameters
    ``(K, d)`` and stacked noise to observations ``(K, M, obs_dim)``. Keeping the
    two apart lets the noise come from per-particle streams while the
    deterministic part stays vectorized. A task may instead supply ``batch``,
    a full ``(thetas, M, rng) -> (K, M, obs_dim)`` routine honouring the same
    per-particle stream contract.
    """

    name: str
    param_dim: int
    obs_dim: int
    prior: DensityModel
    ground_truth: np.ndarray
    noise: Callable | None = None
    transform: Callable | None = None
    batch: Callable | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        gt = np.atleast_1d(np.asarray(self.ground_truth, dtype=float))
        object.__setattr__(self, "ground_truth", gt)
        if gt.size != self.param_dim:
            raise ValueError("ground truth dimension does not match param_dim")
        if not np.isfinite(self.prior.log_prob(gt)):
            raise ValueError(f"{self.name}: ground truth outside prior support")

    def draw_noise(self, count: int, M: int, rng: RngStream, start: int = 0):
        """Noise for ``count`` parameters; entry ``k`` comes from ``rng.split(start + k)``."""
        draws = [self.noise(M, rng.split(start + k).generator()) for k in range(count)]
        if isinstance(draws[0], tuple):
            return tuple(np.stack(parts) for parts in zip(*draws))
        return np.stack(draws)

    def simulate_batch(self, thetas, M: int, rng: RngStream, start: int = 0) -> np.ndarray:
        """Observations ``(K, M, obs_dim)``; row ``k`` uses stream ``rng.split(start + k)``.

        ``start`` lets a caller simulate a large population in chunks with the
        same result as one call.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.param_dim:
            raise ValueError(f"{self.name}: expected parameters of dimension {self.param_dim}")
        if self.batch is not None:
            return self.batch(thetas, M, rng, start)
        return self.transform(thetas, self.draw_noise(thetas.shape[0], M, rng, start))

    def simulate(self, theta, M: int, rng: RngStream) -> np.ndarray:
        """``M`` observations at one parameter; equals ``simulate_batch`` row 0."""
        return self.simulate_batch(np.atleast_2d(theta), M, rng)[0]
