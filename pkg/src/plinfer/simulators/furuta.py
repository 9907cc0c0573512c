"""Rotary inverted (Furuta) pendulum with RK4 integration.

Parameters are ``(g, l_r, m_r, l_p, m_p)``. The state is
``(theta_r, theta_p, dtheta_r, dtheta_p)``; the motor torque is fixed to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..distributions import BoxUniform
from .base import TaskSpec

FURUTA_GT = np.array([9.81, 0.085, 0.095, 0.129, 0.024])
FURUTA_LOWER = np.array([9.0, 0.08, 0.08, 0.12, 0.02])
FURUTA_UPPER = np.array([11.0, 0.09, 0.1, 0.135, 0.03])
CHANNELS = {"sincos": 6, "raw": 4}


class SingularMassMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class FurutaConfig:
    damping: tuple = (0.0, 0.0)
    init_std: tuple = (0.05, 0.05, 0.05, 0.05)
    encoding: str = "sincos"
    dt: float = 1e-3
    substeps: int = 10
    frames: int = 100
    # perturb around the pendulum-up state theta_p = pi instead of theta_p = 0
    upright: bool = False
    chunk: int = 8192

    def __post_init__(self):
        if self.encoding not in CHANNELS:
            raise ValueError(f"unknown Furuta encoding {self.encoding!r}")
        object.__setattr__(self, "damping", tuple(float(d) for d in self.damping))
        object.__setattr__(self, "init_std", tuple(float(s) for s in self.init_std))
        if len(self.damping) != 2 or len(self.init_std) != 4:
            raise ValueError("damping needs 2 entries and init_std 4")

    @property
    def obs_dim(self) -> int:
        return CHANNELS[self.encoding] * self.frames


class _Coefficients:
    """Parameter combinations that appear in the equations of motion."""

    def __init__(self, params):
        p = np.atleast_2d(np.asarray(params, dtype=float))
        g, lr, mr, lp, mp = p.T
        self.a = mr * lr * lr / 12.0 + mp * lr * lr
        self.b = 0.25 * mp * lp * lp
        self.h = 0.5 * mp * lp * lr
        self.j = mp * lp * lp / 3.0
        self.grav = 0.5 * mp * lp * g


def furuta_mass_matrix(params, theta_p) -> np.ndarray:
    """``(R, 2, 2)`` mass matrices at pendulum angles ``theta_p``."""
    c = _Coefficients(params)
    s, co = np.sin(theta_p), np.cos(theta_p)
    m11 = c.a + c.b * s * s
    m12 = c.h * co
    m22 = np.broadcast_to(c.j, np.shape(m11))
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def _check_conditioning(c, theta_p):
    s = np.sin(theta_p)
    m11 = c.a + c.b * s * s
    m12 = c.h * np.cos(theta_p)
    half_tr = 0.5 * (m11 + c.j)
    rad = np.sqrt(0.25 * (m11 - c.j) ** 2 + m12 * m12)
    lo, hi = half_tr - rad, half_tr + rad
    if np.any(lo <= 0) or np.any(hi > 1e12 * lo):
        raise SingularMassMatrixError("singular mass matrix")


def _derivative(c, damping, state):
    th_p, w_r, w_p = state[1], state[2], state[3]
    s, co = np.sin(th_p), np.cos(th_p)
    s2 = 2.0 * s * co
    m11 = c.a + c.b * s * s
    m12 = c.h * co
    rhs1 = -damping[0] * w_r - (c.b * s2 * w_r * w_p - c.h * s * w_p * w_p)
    rhs2 = -damping[1] * w_p - (-0.5 * c.b * s2 * w_r * w_r + c.grav * s)
    det = m11 * c.j - m12 * m12
    acc_r = (c.j * rhs1 - m12 * rhs2) / det
    acc_p = (m11 * rhs2 - m12 * rhs1) / det
    return np.stack([w_r, w_p, acc_r, acc_p])


def furuta_accelerations(params, states, damping=(0.0, 0.0)) -> np.ndarray:
    """``(R, 2)`` joint accelerations for stacked states ``(R, 4)``."""
    c = _Coefficients(params)
    return _derivative(c, damping, np.atleast_2d(states).T)[2:].T


def furuta_energy(params, states) -> np.ndarray:
    """Kinetic energy from the mass matrix plus the pendulum's potential energy."""
    states = np.atleast_2d(states)
    c = _Coefficients(params)
    th_p, w_r, w_p = states[..., 1], states[..., 2], states[..., 3]
    s = np.sin(th_p)
    m11 = c.a + c.b * s * s
    m12 = c.h * np.cos(th_p)
    kinetic = 0.5 * (m11 * w_r * w_r + 2.0 * m12 * w_r * w_p + c.j * w_p * w_p)
    return kinetic + c.grav * (1.0 - np.cos(th_p))


@njit(cache=True)
def _rk4_kernel(a, b, h, j, grav, d_r, d_p, x0, dt, substeps, frames, out):
    """Scalar RK4 per rollout; returns the index of the first ill-conditioned rollout or -1.

    Each rollout is integrated on its own, so results do not depend on how
    rollouts are batched.
    """
    bad = -1
    half = 0.5 * dt
    sixth = dt / 6.0
    for r in range(x0.shape[0]):
        ar, br, hr, jr, gr = a[r], b[r], h[r], j[r], grav[r]
        x = np.empty(4)
        for i in range(4):
            x[i] = x0[r, i]
        k = np.empty((4, 4))
        y = np.empty(4)
        for frame in range(frames):
            for _ in range(substeps):
                for stage in range(4):
                    if stage == 0:
                        for i in range(4):
                            y[i] = x[i]
                    else:
                        step = dt if stage == 3 else half
                        for i in range(4):
                            y[i] = x[i] + step * k[stage - 1, i]
                    s = math.sin(y[1])
                    co = math.cos(y[1])
                    w_r, w_p = y[2], y[3]
                    bsc = br * s * co
                    m11 = ar + br * s * s
                    m12 = hr * co
                    rhs1 = -d_r * w_r - (2.0 * bsc * w_r * w_p - hr * s * w_p * w_p)
                    rhs2 = -d_p * w_p - (-bsc * w_r * w_r + gr * s)
                    det = m11 * jr - m12 * m12
                    k[stage, 0] = w_r
                    k[stage, 1] = w_p
                    k[stage, 2] = (jr * rhs1 - m12 * rhs2) / det
                    k[stage, 3] = (m11 * rhs2 - m12 * rhs1) / det
                for i in range(4):
                    x[i] = x[i] + sixth * (k[0, i] + 2.0 * k[1, i] + 2.0 * k[2, i] + k[3, i])
            s = math.sin(x[1])
            m11 = ar + br * s * s
            m12 = hr * math.cos(x[1])
            half_tr = 0.5 * (m11 + jr)
            rad = math.sqrt(0.25 * (m11 - jr) ** 2 + m12 * m12)
            lo, hi = half_tr - rad, half_tr + rad
            if bad < 0 and (not lo > 0.0 or hi > 1e12 * lo):
                bad = r
            for i in range(4):
                out[r, frame, i] = x[i]
    return bad


def furuta_rollout(params, initial_states, cfg: FurutaConfig = FurutaConfig(),
                   dt: float | None = None, substeps: int | None = None) -> np.ndarray:
    """Integrate each row of ``initial_states`` with its parameter row.

    Returns recorded states ``(R, frames, 4)`` at times ``k * dt * substeps``
    for ``k = 1..frames``. ``dt``/``substeps`` override the config, e.g. for a
    finer reference integration over the same horizon.
    """
    dt = cfg.dt if dt is None else dt
    substeps = cfg.substeps if substeps is None else substeps
    params = np.atleast_2d(np.asarray(params, dtype=float))
    x0 = np.ascontiguousarray(np.atleast_2d(np.asarray(initial_states, dtype=float)))
    if params.shape[0] == 1 and x0.shape[0] > 1:
        params = np.broadcast_to(params, (x0.shape[0], params.shape[1]))
    c = _Coefficients(params)
    _check_conditioning(c, x0[:, 1])
    coef = [np.ascontiguousarray(np.broadcast_to(v, (x0.shape[0],)), dtype=float)
            for v in (c.a, c.b, c.h, c.j, c.grav)]
    out = np.empty((x0.shape[0], cfg.frames, 4))
    bad = _rk4_kernel(*coef, float(cfg.damping[0]), float(cfg.damping[1]), x0, float(dt), int(substeps),
                      int(cfg.frames), out)
    if bad >= 0:
        raise SingularMassMatrixError("singular mass matrix")
    return out


def furuta_encode(trajectories, encoding: str = "sincos") -> np.ndarray:
    """Flatten ``(R, frames, 4)`` recorded states to ``(R, frames * channels)``."""
    th_r, th_p = trajectories[..., 0], trajectories[..., 1]
    w_r, w_p = trajectories[..., 2], trajectories[..., 3]
    if encoding == "sincos":
        feats = [np.sin(th_r), np.cos(th_r), np.sin(th_p), np.cos(th_p), w_r, w_p]
    elif encoding == "raw":
        feats = [th_r, th_p, w_r, w_p]
    else:
        raise ValueError(f"unknown Furuta encoding {encoding!r}")
    return np.stack(feats, axis=-1).reshape(trajectories.shape[0], -1)


def furuta_initial_states(M: int, gen: np.random.Generator, cfg: FurutaConfig = FurutaConfig()) -> np.ndarray:
    base = np.array([0.0, np.pi if cfg.upright else 0.0, 0.0, 0.0])
    return base + gen.standard_normal((M, 4)) * np.asarray(cfg.init_std)


def furuta_simulate_synced(xi, initial_states, cfg: FurutaConfig = FurutaConfig()) -> np.ndarray:
    """Deterministic rollouts of one parameter from given initial states, ``(M, obs_dim)``."""
    states = np.atleast_2d(initial_states)
    return furuta_observe(np.broadcast_to(np.atleast_2d(xi), (states.shape[0], 5)), states, cfg)


def furuta_observe(params, states, cfg: FurutaConfig = FurutaConfig()) -> np.ndarray:
    """Encoded observations ``(R, obs_dim)`` for stacked parameters and initial states."""
    params = np.atleast_2d(params)
    states = np.atleast_2d(states)
    out = np.empty((states.shape[0], cfg.obs_dim))
    for start in range(0, states.shape[0], cfg.chunk):
        sl = slice(start, start + cfg.chunk)
        out[sl] = furuta_encode(furuta_rollout(params[sl], states[sl], cfg), cfg.encoding)
    return out


def furuta(cfg: FurutaConfig = FurutaConfig()) -> TaskSpec:
    """Furuta pendulum task; the per-parameter noise is the batch of initial states."""

    def transform(thetas, states):
        K, M = states.shape[:2]
        params = np.repeat(thetas, M, axis=0)
        return furuta_observe(params, states.reshape(K * M, 4), cfg).reshape(K, M, cfg.obs_dim)

    return TaskSpec(
        name="furuta",
        param_dim=5,
        obs_dim=cfg.obs_dim,
        prior=BoxUniform(FURUTA_LOWER, FURUTA_UPPER),
        ground_truth=FURUTA_GT,
        noise=lambda M, gen: furuta_initial_states(M, gen, cfg),
        transform=transform,
        options={"config": cfg},
    )
