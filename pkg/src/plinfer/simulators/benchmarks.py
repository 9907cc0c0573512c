"""Gaussian location, Gaussian mixture, SLCP and SIR benchmark simulators."""

from __future__ import annotations

import numpy as np

from ..distributions import BoxUniform, GaussianFull, LogNormalDiag
from .base import TaskSpec

# np.random.default_rng(2024).uniform(-1, 1, 10), rounded and frozen
GAUSSIAN_LOCATION_GT = np.array([
    0.3517, -0.5714, -0.3811, 0.5989, 0.9916, -0.7155, -0.8425, -0.6384, -0.2807, -0.6608,
])
GAUSSIAN_LOCATION_VAR = 0.1


def gaussian_location_transform(thetas, z):
    return thetas[:, None, :] + np.sqrt(GAUSSIAN_LOCATION_VAR) * z


def gaussian_location(dim: int = 10) -> TaskSpec:
    """``x ~ N(xi, 0.1 I)`` with prior ``N(0, 0.1 I)``; ``dim < 10`` keeps the leading coordinates."""
    if not 1 <= dim <= 10:
        raise ValueError("gaussian_location supports 1..10 dimensions")
    return TaskSpec(
        name="gaussian_location",
        param_dim=dim,
        obs_dim=dim,
        prior=GaussianFull(np.zeros(dim), GAUSSIAN_LOCATION_VAR * np.eye(dim)),
        ground_truth=GAUSSIAN_LOCATION_GT[:dim],
        noise=lambda M, gen: gen.standard_normal((M, dim)),
        transform=gaussian_location_transform,
        options={"dim": dim},
    )


def gaussian_location_simulate(xi, M, rng):
    xi = np.atleast_1d(xi)
    return gaussian_location(xi.size).simulate(xi, M, rng)


GMM_TASK_GT = np.array([1.5, -1.0])
GMM_TASK_STDS = (1.0, 0.1)


def _gmm_noise(M, gen):
    return gen.random(M) < 0.5, gen.standard_normal((M, 2))


def gmm_task_transform(thetas, noise):
    wide, z = noise
    scale = np.where(wide, GMM_TASK_STDS[0], GMM_TASK_STDS[1])[..., None]
    return thetas[:, None, :] + scale * z


def gmm_task() -> TaskSpec:
    """Equal mixture of ``N(xi, I)`` and ``N(xi, 0.01 I)`` under a ``U(-10, 10)^2`` prior."""
    return TaskSpec(
        name="gmm",
        param_dim=2,
        obs_dim=2,
        prior=BoxUniform(-10.0 * np.ones(2), 10.0 * np.ones(2)),
        ground_truth=GMM_TASK_GT,
        noise=_gmm_noise,
        transform=gmm_task_transform,
    )


def gmm_task_log_likelihood(xi_grid, observations):
    """Log-likelihood of ``observations (N, 2)`` at each parameter of ``xi_grid (G, 2)``."""
    xi_grid = np.atleast_2d(xi_grid)
    total = np.zeros(xi_grid.shape[0])
    for x in np.atleast_2d(observations):
        d2 = np.sum((xi_grid - x) ** 2, axis=1)
        comps = []
        for sd in GMM_TASK_STDS:
            var = sd * sd
            comps.append(np.log(0.5) - np.log(2 * np.pi * var) - 0.5 * d2 / var)
        total += np.logaddexp(*comps)
    return total


SLCP_GT = np.array([0.7, 1.5, -1.0, -0.9, 0.6])


def slcp_transform(thetas, z):
    mu = thetas[:, :2]
    s1, s2 = thetas[:, 2] ** 2, thetas[:, 3] ** 2
    rho = np.tanh(thetas[:, 4])
    c11, c22, c12 = s1 * s1, s2 * s2, rho * s1 * s2
    singular = (np.abs(thetas[:, 2]) < 1e-6) | (np.abs(thetas[:, 3]) < 1e-6)
    c11 = c11 + np.where(singular, 1e-8, 0.0)
    c22 = c22 + np.where(singular, 1e-8, 0.0)
    l11 = np.sqrt(c11)
    l21 = c12 / l11
    l22 = np.sqrt(np.maximum(c22 - l21 * l21, 0.0))
    # z: (K, M, 4, 2) standard normal -> four correlated 2-d draws per observation
    x1 = mu[:, None, None, 0] + l11[:, None, None] * z[..., 0]
    x2 = mu[:, None, None, 1] + l21[:, None, None] * z[..., 0] + l22[:, None, None] * z[..., 1]
    out = np.stack([x1, x2], axis=-1)
    return out.reshape(thetas.shape[0], z.shape[1], 8)


def slcp() -> TaskSpec:
    return TaskSpec(
        name="slcp",
        param_dim=5,
        obs_dim=8,
        prior=BoxUniform(-3.0 * np.ones(5), 3.0 * np.ones(5)),
        ground_truth=SLCP_GT,
        noise=lambda M, gen: gen.standard_normal((M, 4, 2)),
        transform=slcp_transform,
    )


SIR_POPULATION = 1_000_000
SIR_HORIZON = 160.0
SIR_DT = 0.1
SIR_SUBSAMPLES = 20
SIR_TRIALS = 1000
SIR_GT = np.array([0.4, 0.125])


def sir_integrate(beta, gamma, horizon=SIR_HORIZON, dt=SIR_DT, n_pop=SIR_POPULATION, i0=1.0):
    """RK4 solution of the SIR ODE for stacked ``(beta, gamma)``.

    Returns the time grid and ``S, I, R`` arrays of shape ``(K, steps + 1)``.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    steps = int(round(horizon / dt))
    S = np.empty((beta.size, steps + 1))
    I = np.empty_like(S)
    R = np.empty_like(S)
    S[:, 0], I[:, 0], R[:, 0] = n_pop - i0, i0, 0.0

    def f(s, i):
        infect = beta * s * i / n_pop
        recover = gamma * i
        return -infect, infect - recover, recover

    for t in range(steps):
        s, i, r = S[:, t], I[:, t], R[:, t]
        k1 = f(s, i)
        k2 = f(s + 0.5 * dt * k1[0], i + 0.5 * dt * k1[1])
        k3 = f(s + 0.5 * dt * k2[0], i + 0.5 * dt * k2[1])
        k4 = f(s + dt * k3[0], i + dt * k3[1])
        S[:, t + 1] = s + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        I[:, t + 1] = i + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        R[:, t + 1] = r + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return np.arange(steps + 1) * dt, S, I, R


def sir_infected_fraction(thetas, n_bins=10, horizon=SIR_HORIZON, dt=SIR_DT, n_pop=SIR_POPULATION):
    """``I / N_pop`` at the first ``n_bins`` of 20 equidistant times in ``(0, horizon]``."""
    thetas = np.atleast_2d(thetas)
    _, _, I, _ = sir_integrate(thetas[:, 0], thetas[:, 1], horizon, dt, n_pop)
    steps = I.shape[1] - 1
    idx = (np.arange(1, SIR_SUBSAMPLES + 1) * steps) // SIR_SUBSAMPLES
    return np.clip(I[:, idx[:n_bins]] / n_pop, 0.0, 1.0)


def sir(n_bins: int = 10) -> TaskSpec:
    """SIR epidemic with binomial(1000, I/N) observations.

    ``n_bins`` selects how many of the 20 subsampled times are emitted.
    """
    if not 1 <= n_bins <= SIR_SUBSAMPLES:
        raise ValueError("n_bins must be in 1..20")

    def batch(thetas, M, rng, start=0):
        p = sir_infected_fraction(thetas, n_bins)
        out = np.empty((thetas.shape[0], M, n_bins))
        for k in range(thetas.shape[0]):
            out[k] = rng.split(start + k).generator().binomial(SIR_TRIALS, p[k], size=(M, n_bins))
        return out

    return TaskSpec(
        name="sir",
        param_dim=2,
        obs_dim=n_bins,
        prior=LogNormalDiag(np.log([0.4, 0.125]), np.array([0.5, 0.2])),
        ground_truth=SIR_GT,
        batch=batch,
        options={"n_bins": n_bins},
    )
