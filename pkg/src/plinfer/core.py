"""Random streams and small numerical helpers shared by every module."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

Label = Union[int, str]

_MASK64 = (1 << 64) - 1


def _as_label(label: Label) -> int:
    if isinstance(label, str):
        digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        return int(label) & _MASK64
    raise TypeError(f"rng label must be int or str, got {type(label).__name__}")


@dataclass(frozen=True)
class RngStream:
    """A counter-based random stream keyed by ``(seed, path)``.

    Streams never advance: asking the same stream for a generator twice yields
    the same draws. Independent randomness is obtained by splitting with a
    distinct label, which is order-insensitive because a child is a pure
    function of its full path.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "path", tuple(_as_label(p) for p in self.path))

    def split(self, label: Label) -> "RngStream":
        return RngStream(self.seed, self.path + (_as_label(label),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


def split_rng(parent: RngStream, label: Label) -> RngStream:
    return parent.split(label)


def log_sum_exp(values, axis=None):
    """Stable ``log(sum(exp(values)))``.

    All ``-inf`` entries give ``-inf``; an empty reduction raises ``ValueError``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty reduction")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise ValueError("log_sum_exp needs entries in [-inf, +inf)")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def cholesky_spd(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("not positive definite") from exc


def effective_sample_size(weights) -> float:
    """``1 / sum(w**2)`` for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def normalize_log_weights(log_w) -> np.ndarray:
    """Self-normalize log weights; raises when every entry is ``-inf``."""
    log_w = np.asarray(log_w, dtype=float)
    total = log_sum_exp(log_w)
    if not np.isfinite(total):
        raise ValueError("degenerate weights")
    return np.exp(log_w - total)
