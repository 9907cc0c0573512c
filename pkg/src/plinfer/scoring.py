"""Simulate-and-score for a population of parameters."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import RngStream
from .ipm import Metric
from .simulators import TaskSpec

DEFAULT_CHUNK = 64


def score_particles(task: TaskSpec, reference, metric: Metric, thetas, M: int, rng: RngStream,
                    threads: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Discrepancy between the reference set and ``M`` simulations at each parameter.

    Particle ``k`` always simulates from ``rng.split(k)``, so the result does
    not depend on ``threads`` or ``chunk``. Parameters outside the prior
    support are not simulated and score ``+inf``.
    """
    thetas = np.atleast_2d(thetas)
    reference = np.atleast_2d(reference)
    K = thetas.shape[0]
    scores = np.full(K, np.inf)
    valid = np.flatnonzero(task.prior.in_support(thetas))

    def work(block):
        idx = valid[block]
        out = np.empty(idx.size)
        # contiguous runs keep the per-particle stream index equal to the global one
        for run in np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1):
            if run.size == 0:
                continue
            sims = task.simulate_batch(thetas[run], M, rng, start=int(run[0]))
            out[np.searchsorted(idx, run)] = metric.batch(reference, sims)
        return block, out

    blocks = [slice(s, s + chunk) for s in range(0, valid.size, chunk)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    for block, out in results:
        scores[valid[block]] = out
    return scores
