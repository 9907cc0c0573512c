import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from plinfer.core import RngStream
from plinfer.distributions import BoxUniform, PointMass
from plinfer.evaluation import furuta_sync_error
from plinfer.simulators import (
    FurutaConfig,
    SingularMassMatrixError,
    furuta,
    furuta_accelerations,
    furuta_energy,
    furuta_initial_states,
    furuta_mass_matrix,
    furuta_rollout,
    furuta_simulate,
    furuta_simulate_synced,
)
from plinfer.simulators.furuta import FURUTA_GT, FURUTA_LOWER, FURUTA_UPPER


def _sympy_accelerations():
    """Euler-Lagrange accelerations derived symbolically from the energies."""
    t = sp.symbols("t")
    g, lr, mr, lp, mp, dr, dp = sp.symbols("g l_r m_r l_p m_p d_r d_p", positive=True)
    qr, qp = sp.Function("qr")(t), sp.Function("qp")(t)
    q = sp.Matrix([qr, qp])
    qd = q.diff(t)
    M = sp.Matrix([
        [mr * lr ** 2 / 12 + mp * lr ** 2 + mp * lp ** 2 / 4 * sp.sin(qp) ** 2, mp * lp * lr / 2 * sp.cos(qp)],
        [mp * lp * lr / 2 * sp.cos(qp), mp * lp ** 2 / 3],
    ])
    L = (qd.T * M * qd)[0] / 2 - mp * lp * g / 2 * (1 - sp.cos(qp))
    damp = [dr * qd[0], dp * qd[1]]
    eqs = [sp.diff(L.diff(qd[i]), t) - L.diff(q[i]) + damp[i] for i in range(2)]
    a_r, a_p, w_r, w_p, th_r, th_p = sp.symbols("a_r a_p w_r w_p th_r th_p")
    subs = {qr.diff(t, 2): a_r, qp.diff(t, 2): a_p}
    eqs = [e.subs(subs) for e in eqs]
    subs = {qr.diff(t): w_r, qp.diff(t): w_p}
    eqs = [e.subs(subs).subs({qr: th_r, qp: th_p}) for e in eqs]
    sol = sp.solve(eqs, [a_r, a_p], dict=True)[0]
    args = (g, lr, mr, lp, mp, dr, dp, th_r, th_p, w_r, w_p)
    return sp.lambdify(args, [sol[a_r], sol[a_p]], "numpy")


def test_accelerations_match_symbolic_euler_lagrange():
    acc = _sympy_accelerations()
    gen = np.random.default_rng(0)
    params = FURUTA_LOWER + gen.random((20, 5)) * (FURUTA_UPPER - FURUTA_LOWER)
    states = gen.normal(scale=2.0, size=(20, 4))
    damping = (0.003, 0.0007)
    ours = furuta_accelerations(params, states, damping)
    ref = np.array([acc(*p, *damping, *s) for p, s in zip(params, states)])
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-10)


def test_mass_matrix_at_rest_angle():
    g, lr, mr, lp, mp = FURUTA_GT
    M = furuta_mass_matrix(FURUTA_GT, np.array([0.0]))[0]
    expected = [[mr * lr ** 2 / 12 + mp * lr ** 2, 0.5 * mp * lp * lr], [0.5 * mp * lp * lr, mp * lp ** 2 / 3]]
    np.testing.assert_allclose(M, expected, rtol=1e-15)


def test_mass_matrix_spd_over_prior():
    prior = BoxUniform(FURUTA_LOWER, FURUTA_UPPER)
    params = prior.sample(10_000, RngStream(0))
    angles = np.random.default_rng(1).uniform(-np.pi, np.pi, 10_000)
    M = furuta_mass_matrix(params, angles)
    np.testing.assert_array_equal(M, np.swapaxes(M, 1, 2))
    assert np.all(np.linalg.eigvalsh(M)[:, 0] > 0)


def test_equilibrium_is_fixed():
    traj = furuta_rollout(FURUTA_GT, np.zeros((1, 4)))
    assert np.all(traj == 0.0)
    assert np.all(furuta_accelerations(FURUTA_GT, np.zeros((1, 4))) == 0.0)


def test_energy_conserved_without_damping():
    x0 = furuta_initial_states(20, np.random.default_rng(2), FurutaConfig(init_std=(0.5, 0.5, 0.5, 0.5)))
    traj = furuta_rollout(FURUTA_GT, x0)
    e0 = furuta_energy(FURUTA_GT, x0)
    drift = np.abs(furuta_energy(FURUTA_GT, traj[:, -1]) - e0) / e0
    assert drift.max() < 1e-6


def test_rk4_matches_fine_step_reference():
    x0 = furuta_initial_states(5, np.random.default_rng(3))
    coarse = furuta_rollout(FURUTA_GT, x0)
    fine = furuta_rollout(FURUTA_GT, x0, dt=1e-4, substeps=100)
    assert np.max(np.abs(coarse - fine)) < 1e-6


def _numpy_rk4(params, x0, cfg=FurutaConfig()):
    """Vectorized RK4 driven by the symbolically checked accelerations."""
    x = np.array(x0, dtype=float)

    def f(state):
        return np.concatenate([state[:, 2:], furuta_accelerations(params, state, cfg.damping)], axis=1)

    frames = []
    for _ in range(cfg.frames):
        for _ in range(cfg.substeps):
            k1 = f(x)
            k2 = f(x + 0.5 * cfg.dt * k1)
            k3 = f(x + 0.5 * cfg.dt * k2)
            k4 = f(x + cfg.dt * k3)
            x = x + cfg.dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        frames.append(x)
    return np.stack(frames, axis=1)


@pytest.mark.parametrize("damping", [(0.0, 0.0), (0.003, 0.001)])
def test_compiled_rollout_matches_vectorized_rk4(damping):
    cfg = FurutaConfig(damping=damping, frames=20)
    gen = np.random.default_rng(6)
    params = FURUTA_LOWER + gen.random((6, 5)) * (FURUTA_UPPER - FURUTA_LOWER)
    x0 = furuta_initial_states(6, gen, FurutaConfig(init_std=(0.5,) * 4))
    np.testing.assert_allclose(furuta_rollout(params, x0, cfg), _numpy_rk4(params, x0, cfg), rtol=1e-10, atol=1e-12)


def test_damping_dissipates_energy():
    cfg = FurutaConfig(damping=(0.002, 0.002))
    x0 = furuta_initial_states(5, np.random.default_rng(4), FurutaConfig(init_std=(0.5,) * 4))
    e = furuta_energy(FURUTA_GT, furuta_rollout(FURUTA_GT, x0, cfg)[:, -1])
    assert np.all(e < furuta_energy(FURUTA_GT, x0))


def test_observation_layout():
    x = furuta_simulate(FURUTA_GT, 3, RngStream(0))
    assert x.shape == (3, 600)
    frames = x.reshape(3, 100, 6)
    np.testing.assert_allclose(frames[..., 0] ** 2 + frames[..., 1] ** 2, 1.0, atol=1e-12)
    assert furuta(FurutaConfig(encoding="raw")).simulate(FURUTA_GT, 2, RngStream(0)).shape == (2, 400)


def test_synced_rollouts_reproduce_reference_exactly():
    states = furuta_initial_states(8, np.random.default_rng(5))
    ref = furuta_simulate_synced(FURUTA_GT, states)
    err = furuta_sync_error(PointMass(FURUTA_GT), states, ref, 24, RngStream(0))
    assert err == 0.0


def test_sync_error_grows_with_gravity_offset():
    states = furuta_initial_states(4, np.random.default_rng(6))
    ref = furuta_simulate_synced(FURUTA_GT, states)
    errors = []
    for dg in (0.1, 0.5, 1.0):
        xi = FURUTA_GT + np.array([dg, 0, 0, 0, 0])
        errors.append(furuta_sync_error(PointMass(xi), states, ref, 4, RngStream(0)))
    assert 0 < errors[0] < errors[1] < errors[2]


def test_singular_mass_matrix_guard():
    with pytest.raises(SingularMassMatrixError):
        furuta_rollout([9.81, 0.085, 0.095, 0.129, 0.0], np.zeros((1, 4)))


def test_upright_option_perturbs_around_pi():
    s = furuta_initial_states(1000, np.random.default_rng(7), FurutaConfig(upright=True))
    assert abs(s[:, 1].mean() - np.pi) < 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        FurutaConfig(encoding="quaternion")
    with pytest.raises(ValueError):
        FurutaConfig(damping=(0.0,))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(1, 7))
def test_rollout_independent_of_batch_layout(n, chunk):
    gen = np.random.default_rng(n)
    states = furuta_initial_states(n, gen)
    params = FURUTA_LOWER + gen.random((n, 5)) * (FURUTA_UPPER - FURUTA_LOWER)
    cfg = FurutaConfig(frames=5)
    whole = furuta(cfg).transform(params[:, None].reshape(n, 5), states[:, None])
    chunked = furuta(FurutaConfig(frames=5, chunk=chunk)).transform(params, states[:, None])
    np.testing.assert_array_equal(whole, chunked)
