"""Deterministic random streams, distribution sampling, and resampling.

Every random quantity in the library is a pure function of a master seed and
a path of labels.  Streams are derived by labeled splitting (never by
sequential consumption), so replications, bootstrap draws, and worker
processes stay order-independent.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngState",
    "LatentDraws",
    "open_uniform",
    "standard_logistic_quantile",
    "standard_logistic_cdf",
    "draw_standard_logistic",
    "draw_standard_normal",
    "cholesky_lower",
    "draw_mvn",
    "resample_rows",
]

_ALGORITHM = "philox"
_MASK64 = (1 << 64) - 1


def _label_key(label) -> int:
    """Stable 32-bit key for a stream label (int, str, or tuple of those)."""
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(repr(label).encode("utf-8"))


@dataclass(frozen=True)
class RngState:
    """Immutable handle on one random stream.

    Identical (algorithm, seed, path) produces the identical output sequence
    on every platform; sibling children are independent streams.
    """

    seed: int
    path: tuple[int, ...] = ()
    algorithm: str = _ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.algorithm != _ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")

    def child(self, label) -> "RngState":
        """Derive the labeled child stream."""
        return dataclasses.replace(self, path=self.path + (_label_key(label),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def open_uniform(gen: np.random.Generator, size=None) -> np.ndarray:
    """Uniform draws strictly inside (0, 1) so quantile transforms never hit 0 or 1."""
    return (gen.integers(0, 1 << 53, size=size) + 0.5) * 2.0**-53


def standard_logistic_quantile(u):
    """Inverse CDF of the standard logistic law, log(u / (1 - u)).

    Raises ValueError outside the open interval (0, 1).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("logistic quantile requires 0 < u < 1")
    out = np.log(u) - np.log1p(-u)
    return float(out) if out.ndim == 0 else out


def standard_logistic_cdf(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                   np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))
    return float(out) if out.ndim == 0 else out


def draw_standard_logistic(state: RngState, n: int) -> np.ndarray:
    return standard_logistic_quantile(open_uniform(state.generator(), n))


def draw_standard_normal(state: RngState, shape) -> np.ndarray:
    return state.generator().standard_normal(shape)


def cholesky_lower(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor with explicit pivot checks.

    Zero-variance coordinates are allowed (the factor column is zeroed);
    an indefinite matrix raises with the index of the offending leading minor.
    """
    cov = np.asarray(cov, dtype=float)
    k = cov.shape[0]
    if cov.shape != (k, k):
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
        raise ValueError("covariance must be symmetric")
    L = np.zeros((k, k))
    for j in range(k):
        pivot = cov[j, j] - np.dot(L[j, :j], L[j, :j])
        if pivot < -tol:
            raise ValueError(
                f"covariance is not positive semidefinite: leading minor {j + 1} fails"
            )
        if pivot <= tol:
            off = cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
            if np.any(np.abs(off) > np.sqrt(tol)):
                raise ValueError(
                    f"covariance is not positive semidefinite: leading minor {j + 2} fails"
                )
            L[j, j] = 0.0
        else:
            L[j, j] = np.sqrt(pivot)
            L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def draw_mvn(state: RngState, mean, cov, n: int) -> np.ndarray:
    """n i.i.d. rows from N(mean, cov); deterministic given the stream."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky_lower(cov)
    z = state.generator().standard_normal((n, mean.size))
    return mean + z @ L.T


@dataclass(frozen=True)
class LatentDraws:
    """Fixed m-by-q matrix of latent shocks, shared by every theta in one estimation."""

    matrix: np.ndarray
    origin: RngState

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1:
            raise ValueError("latent draws must form a nonempty 2-D matrix")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def q(self) -> int:
        return self.matrix.shape[1]


def resample_rows(state: RngState, data):
    """Uniform with-replacement row bootstrap of a dataset-like dataclass.

    Works on any frozen dataclass carrying a ``rows`` array (shape and column
    metadata are preserved via dataclasses.replace).
    """
    rows = np.asarray(data.rows)
    n = rows.shape[0]
    if n == 0:
        raise ValueError("cannot resample an empty dataset")
    idx = state.generator().integers(0, n, size=n)
    return dataclasses.replace(data, rows=rows[idx].copy())
