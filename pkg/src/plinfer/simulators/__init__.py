"""Benchmark simulators and the task registry."""

from .base import TaskSpec
from .benchmarks import (
    gaussian_location,
    gaussian_location_simulate,
    gmm_task,
    gmm_task_log_likelihood,
    sir,
    sir_infected_fraction,
    sir_integrate,
    slcp,
)
from .furuta import (
    FurutaConfig,
    SingularMassMatrixError,
    furuta,
    furuta_accelerations,
    furuta_encode,
    furuta_energy,
    furuta_initial_states,
    furuta_mass_matrix,
    furuta_observe,
    furuta_rollout,
    furuta_simulate_synced,
)

TASKS = {
    "gaussian_location": gaussian_location,
    "gmm": gmm_task,
    "slcp": slcp,
    "sir": sir,
    "furuta": lambda **kw: furuta(FurutaConfig(**kw)),
}


def get_task(name: str, **options) -> TaskSpec:
    try:
        factory = TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; known: {sorted(TASKS)}") from None
    return factory(**options)


def gmm_task_simulate(xi, M, rng):
    return gmm_task().simulate(xi, M, rng)


def slcp_simulate(xi, M, rng):
    return slcp().simulate(xi, M, rng)


def sir_simulate(xi, M, rng, n_bins: int = 10):
    return sir(n_bins).simulate(xi, M, rng)


def furuta_simulate(xi, M, rng, cfg: FurutaConfig = FurutaConfig()):
    return furuta(cfg).simulate(xi, M, rng)
