import numpy as np
import pytest

from plinfer.core import RngStream
from plinfer.ipm import MmdConfig, mmd2_unbiased
from plinfer.simulators import (
    TASKS,
    get_task,
    gaussian_location_simulate,
    gmm_task,
    gmm_task_log_likelihood,
    gmm_task_simulate,
    sir,
    sir_infected_fraction,
    sir_integrate,
    sir_simulate,
    slcp_simulate,
)
from plinfer.simulators.benchmarks import GAUSSIAN_LOCATION_GT, SIR_TRIALS, _gmm_noise


@pytest.mark.parametrize("name", sorted(TASKS))
def test_shapes_and_determinism(name):
    task = get_task(name, frames=10) if name == "furuta" else get_task(name)
    rng = RngStream(1)
    x = task.simulate(task.ground_truth, 7, rng)
    assert x.shape == (7, task.obs_dim)
    np.testing.assert_array_equal(x, task.simulate(task.ground_truth, 7, rng))
    assert np.isfinite(task.prior.log_prob(task.ground_truth))


@pytest.mark.parametrize("name", sorted(TASKS))
def test_chunked_batches_match_one_call(name):
    task = get_task(name, frames=5) if name == "furuta" else get_task(name)
    thetas = task.prior.sample(6, RngStream(2))
    rng = RngStream(3)
    whole = task.simulate_batch(thetas, 4, rng)
    parts = np.concatenate([task.simulate_batch(thetas[i:i + 2], 4, rng, start=i) for i in range(0, 6, 2)])
    np.testing.assert_array_equal(whole, parts)


@pytest.mark.parametrize("name", ["gaussian_location", "gmm", "slcp", "sir"])
def test_split_streams_give_independent_batches(name):
    """Two halves from sibling streams are exchangeable: MMD below a permutation 95% quantile."""
    task = get_task(name)
    rng = RngStream(4)
    a = task.simulate(task.ground_truth, 150, rng.split(0))
    b = task.simulate(task.ground_truth, 150, rng.split(1))
    assert not np.array_equal(a, b)
    scale = np.std(np.vstack([a, b]), axis=0) + 1e-12
    a, b = a / scale, b / scale
    cfg = MmdConfig()
    stat = mmd2_unbiased(a, b, cfg)
    pooled = np.vstack([a, b])
    g = np.random.default_rng(0)
    null = []
    for _ in range(200):
        p = g.permutation(300)
        null.append(mmd2_unbiased(pooled[p[:150]], pooled[p[150:]], cfg))
    assert stat < np.quantile(null, 0.95)


def test_unknown_task():
    with pytest.raises(ValueError):
        get_task("two_moons")


def test_gaussian_location_variance():
    x = gaussian_location_simulate(np.zeros(10), 100_000, RngStream(0))
    v = x.var(axis=0, ddof=1)
    assert np.all((v > 0.095) & (v < 0.105))


def test_gaussian_location_mean():
    M = 10_000
    x = gaussian_location_simulate(np.ones(10), M, RngStream(1))
    assert np.all(np.abs(x.mean(axis=0) - 1.0) < 4 * np.sqrt(0.1 / M))


def test_gaussian_location_ground_truth_is_frozen_uniform_draw():
    draw = np.random.default_rng(2024).uniform(-1, 1, 10)
    np.testing.assert_allclose(GAUSSIAN_LOCATION_GT, draw, atol=5e-5)


def test_gmm_task_covariance_and_mean():
    M = 100_000
    x = gmm_task_simulate(np.zeros(2), M, RngStream(2))
    np.testing.assert_allclose(np.cov(x.T), 0.505 * np.eye(2), atol=0.02 * 0.505)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * np.sqrt(0.505 / M))


def test_gmm_task_component_fraction():
    wide, _ = _gmm_noise(100_000, np.random.default_rng(3))
    assert 0.49 <= wide.mean() <= 0.51


def test_gmm_log_likelihood_matches_direct_density():
    obs = np.array([[0.1, 0.2], [1.0, -1.0]])
    xi = np.array([[0.0, 0.0]])

    def dens(x, sd):
        return np.exp(-0.5 * np.sum((x - xi[0]) ** 2) / sd ** 2) / (2 * np.pi * sd ** 2)

    direct = sum(np.log(0.5 * dens(x, 1.0) + 0.5 * dens(x, 0.1)) for x in obs)
    assert gmm_task_log_likelihood(xi, obs)[0] == pytest.approx(direct, rel=1e-12)


def test_slcp_zero_correlation():
    x = slcp_simulate(np.array([0.0, 0.0, 1.0, 1.0, 0.0]), 100_000, RngStream(4)).reshape(-1, 2)
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.02


def test_slcp_correlation_matches_tanh():
    xi5 = 2.0
    x = slcp_simulate(np.array([0.5, -0.5, 1.0, 1.0, xi5]), 50_000, RngStream(5)).reshape(-1, 2)
    assert abs(np.corrcoef(x.T)[0, 1] - np.tanh(xi5)) < 0.02


def test_slcp_moments():
    xi = np.array([0.7, 1.5, -1.0, -0.9, 0.6])
    x = slcp_simulate(xi, 100_000, RngStream(6)).reshape(-1, 2)
    s1, s2, rho = xi[2] ** 2, xi[3] ** 2, np.tanh(xi[4])
    np.testing.assert_allclose(x.mean(axis=0), xi[:2], atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), [[s1 ** 2, rho * s1 * s2], [rho * s1 * s2, s2 ** 2]], atol=0.02)


def test_slcp_singular_covariance_gets_jitter():
    x = slcp_simulate(np.array([0.0, 0.0, 0.0, 1.0, 0.0]), 10, RngStream(7))
    assert x.shape == (10, 8) and np.all(np.isfinite(x))


def test_sir_conservation():
    _, S, I, R = sir_integrate([0.4, 0.8, 0.2], [0.125, 0.1, 0.3])
    total = S + I + R
    assert np.max(np.abs(total - 1e6)) / 1e6 < 1e-8


def test_sir_no_transmission_decays():
    t, S, I, R = sir_integrate(0.0, 0.125)
    np.testing.assert_allclose(I[0], np.exp(-0.125 * t), rtol=1e-8)
    p = sir_infected_fraction(np.array([[0.0, 0.125]]), n_bins=20)[0]
    assert np.all(np.diff(p) < 0)


def test_sir_frozen_dynamics():
    p = sir_infected_fraction(np.array([[1e-9, 1e-9]]), n_bins=20)[0]
    np.testing.assert_allclose(p, 1e-6, rtol=1e-6)


def test_sir_observations_are_binomial_counts():
    x = sir_simulate(np.array([0.4, 0.125]), 500, RngStream(8))
    assert x.shape == (500, 10)
    assert np.all(x == np.round(x)) and x.min() >= 0 and x.max() <= SIR_TRIALS


def test_sir_observation_mean():
    xi = np.array([0.4, 0.125])
    x = sir_simulate(xi, 20_000, RngStream(9))
    p = sir_infected_fraction(xi[None])[0]
    sd = np.sqrt(SIR_TRIALS * p * (1 - p) / 20_000)
    assert np.all(np.abs(x.mean(axis=0) - SIR_TRIALS * p) < 4 * sd + 1e-9)


def test_sir_bin_switch():
    assert sir(20).simulate(np.array([0.4, 0.125]), 3, RngStream(0)).shape == (3, 20)
    with pytest.raises(ValueError):
        sir(21)


def test_sir_time_grid():
    # 20 equidistant evaluation times over 160 units are t = 8, 16, ..., 160
    t, _, I, _ = sir_integrate(0.4, 0.125)
    p = sir_infected_fraction(np.array([[0.4, 0.125]]), n_bins=20)[0]
    idx = [int(np.argmin(np.abs(t - 8 * k))) for k in range(1, 21)]
    np.testing.assert_allclose(p, I[0, idx] / 1e6, rtol=1e-12)


def test_ground_truth_outside_prior_rejected():
    from plinfer.simulators.base import TaskSpec
    task = gmm_task()
    with pytest.raises(ValueError):
        TaskSpec("bad", 2, 2, task.prior, np.array([20.0, 0.0]), task.noise, task.transform)
