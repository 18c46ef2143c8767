from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Sequence, Union

import numpy as np
from scipy import linalg

from fbmlab import pathio
from fbmlab.defaults import CHOLESKY_MAX_STEPS, EIGENVALUE_CLIP_TOLERANCE, MIN_COVARIANCE_PATHS, Z_SCORE_LIMIT
from fbmlab.errors import (
    DomainError,
    EmbeddingError,
    InsufficientSamplesError,
    MismatchedGridError,
    OutOfRangeError,
    ResourceError,
)
from fbmlab.seeds import check_seed, substream

logger = logging.getLogger(__name__)


class SamplingMethod(Enum):
    CHOLESKY = "cholesky"
    DAVIES_HARTE = "davies_harte"
    # deterministic control B_t = t - t_start in every component
    LINEAR = "linear"


@dataclass(frozen=True)
class HurstParameter:
    h: float

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.h}")

    def supports_local_time(self, dim: int) -> bool:
        return dim * self.h < 1

    def supports_regularity(self, dim: int) -> bool:
        return dim == 1 and 0.25 < self.h < 0.5


Hurst = Union[float, HurstParameter]


def hurst_value(h: Hurst) -> float:
    if isinstance(h, HurstParameter):
        return h.h
    return HurstParameter(float(h)).h


@dataclass(frozen=True)
class TimeGrid:
    t_start: float = 0.0
    t_end: float = 1.0
    n_steps: int = 1024

    def __post_init__(self):
        if self.t_start < 0:
            raise DomainError(f"t_start must be >= 0, got {self.t_start}")
        if not self.t_end > self.t_start:
            raise DomainError(f"t_end must exceed t_start, got [{self.t_start}, {self.t_end}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def nearest_index(self, t: float) -> int:
        if not self.t_start - 1e-12 * self.span <= t <= self.t_end + 1e-12 * self.span:
            raise OutOfRangeError(f"time {t} outside [{self.t_start}, {self.t_end}]")
        return int(round((t - self.t_start) / self.step))

    def coarsen(self, factor: int) -> TimeGrid:
        if self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.t_start, self.t_end, self.n_steps // factor)


def fbm_covariance(s, t, h: Hurst):
    """R(s, t) = (s^2H + t^2H - |t - s|^2H) / 2; accepts scalars or broadcastable arrays."""
    h = hurst_value(h)
    s_arr, t_arr = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    if np.any(s_arr < 0) or np.any(t_arr < 0):
        raise DomainError("fBm covariance is defined for nonnegative times only")
    value = 0.5 * (s_arr ** (2 * h) + t_arr ** (2 * h) - np.abs(t_arr - s_arr) ** (2 * h))
    return float(value) if value.ndim == 0 else value


def fgn_autocovariance(lag, h: Hurst, step: float = 1.0):
    """Covariance of two fBm increments of length ``step`` that are ``lag`` steps apart."""
    h = hurst_value(h)
    k = np.abs(np.asarray(lag, dtype=float))
    value = 0.5 * step ** (2 * h) * (np.abs(k + 1) ** (2 * h) - 2 * k ** (2 * h) + np.abs(k - 1) ** (2 * h))
    return float(value) if value.ndim == 0 else value


def fgn_autocorrelation(lag, h: Hurst):
    return fgn_autocovariance(lag, h, 1.0)


@lru_cache(maxsize=32)
def _circulant_scale(h: float, n_steps: int) -> np.ndarray:
    """sqrt(lambda / m) for the 2n circulant embedding of unit-step fGn."""
    gamma = fgn_autocovariance(np.arange(n_steps + 1), h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigenvalues = np.fft.fft(row).real
    smallest = float(eigenvalues.min())
    if smallest < -EIGENVALUE_CLIP_TOLERANCE:
        raise EmbeddingError(smallest)
    if smallest < 0:
        logger.warning(f"Clipping {int(np.sum(eigenvalues < 0))} circulant eigenvalues down to {smallest:.2e}")
        eigenvalues = np.maximum(eigenvalues, 0.0)
    scale = np.sqrt(eigenvalues / row.size)
    scale.flags.writeable = False
    return scale


@lru_cache(maxsize=8)
def _cholesky_factor(h: float, n_steps: int) -> np.ndarray:
    times = np.arange(1, n_steps + 1, dtype=float)
    factor = linalg.cholesky(fbm_covariance(times[:, None], times[None, :], h), lower=True)
    factor.flags.writeable = False
    return factor


def sample_fbm_paths(
    h: Hurst,
    grid: TimeGrid,
    dim: int = 1,
    seed: int = 0,
    replications: Sequence[int] = (0,),
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE,
    cholesky_cap: int = CHOLESKY_MAX_STEPS,
) -> np.ndarray:
    """Values of shape (len(replications), dim, n_steps + 1); replication r, component i draws from
    the substream (seed, r, i), so any subset of replications reproduces the same paths."""
    h = hurst_value(h)
    method = SamplingMethod(method)
    seed = check_seed(seed)
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    n = grid.n_steps
    if method is SamplingMethod.LINEAR:
        return np.tile(grid.times - grid.t_start, (len(replications), dim, 1))
    generators = [substream(seed, r, i) for r in replications for i in range(dim)]
    values = np.zeros((len(generators), n + 1))
    if method is SamplingMethod.DAVIES_HARTE:
        scale = _circulant_scale(h, n)
        noise = np.empty((len(generators), scale.size), dtype=complex)
        for row, rng in enumerate(generators):
            real, imag = rng.standard_normal((2, scale.size))
            noise[row] = real + 1j * imag
        increments = np.fft.fft(scale * noise, axis=1).real[:, :n]
        values[:, 1:] = np.cumsum(increments, axis=1)
    else:
        if n > cholesky_cap:
            raise ResourceError(f"cholesky sampling is capped at {cholesky_cap} steps, got {n}")
        factor = _cholesky_factor(h, n)
        normals = np.stack([rng.standard_normal(n) for rng in generators])
        values[:, 1:] = normals @ factor.T
    values *= grid.step**h
    return values.reshape(len(replications), dim, n + 1)


@dataclass
class FbmPath:
    grid: TimeGrid
    dim: int
    values: np.ndarray
    seed: int
    method: SamplingMethod
    h: float
    replication: int = 0

    def __post_init__(self):
        if self.values.shape != (self.dim, self.grid.n_steps + 1):
            raise ValueError(f"values shape {self.values.shape} does not match dim and grid")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def header(self) -> dict:
        return {
            "kind": "fbm",
            "h": self.h,
            "seed": self.seed,
            "replication": self.replication,
            "method": self.method.value,
            "t_start": self.grid.t_start,
            "t_end": self.grid.t_end,
            "n_steps": self.grid.n_steps,
        }

    def to_csv(self, path: pathio.PathLike):
        pathio.write_path_csv(path, self.times, self.values)

    def to_binary(self, path: pathio.PathLike):
        pathio.write_binary(path, self.header(), self.values)

    @classmethod
    def from_binary(cls, path: pathio.PathLike) -> FbmPath:
        header, values = pathio.read_binary(path)
        grid = TimeGrid(header["t_start"], header["t_end"], header["n_steps"])
        return cls(
            grid,
            values.shape[0],
            values,
            header["seed"],
            SamplingMethod(header["method"]),
            header["h"],
            header.get("replication", 0),
        )


def sample_fbm(
    h: Hurst,
    grid: TimeGrid,
    dim: int = 1,
    seed: int = 0,
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE,
    replication: int = 0,
    cholesky_cap: int = CHOLESKY_MAX_STEPS,
) -> FbmPath:
    """One d-dimensional fBm path started at 0 at ``grid.t_start`` (increments are stationary, so the law is that
    of B_{t - t_start})."""
    method = SamplingMethod(method)
    values = sample_fbm_paths(h, grid, dim, seed, [replication], method, cholesky_cap)[0]
    return FbmPath(grid, dim, values, seed, method, hurst_value(h), replication)


@dataclass
class IncrementCovarianceReport:
    empirical: np.ndarray
    exact: np.ndarray
    z_scores: np.ndarray
    max_abs_error: float
    max_abs_z: float
    n_samples: int
    h: float
    z_limit: float = Z_SCORE_LIMIT

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.z_limit

    def empirical_lag_correlation(self, lag: int) -> float:
        return float(np.mean(np.diagonal(self.empirical, offset=lag)) / np.mean(np.diagonal(self.empirical)))

    def exact_lag_correlation(self, lag: int) -> float:
        return fgn_autocorrelation(lag, self.h)

    def summary(self) -> dict:
        return {
            "max_abs_error": self.max_abs_error,
            "max_abs_z": self.max_abs_z,
            "n_samples": self.n_samples,
            "lag1_correlation": self.empirical_lag_correlation(1),
            "lag1_correlation_exact": self.exact_lag_correlation(1),
            "passed": self.passed,
        }


def increment_covariance_check(paths: List[FbmPath], z_limit: float = Z_SCORE_LIMIT) -> IncrementCovarianceReport:
    """Empirical increment covariance (mean known to be zero) against the exact fGn covariance.

    Components of d-dimensional paths are pooled as extra samples. Standard errors use the Gaussian fourth-moment
    identity Var(X_j X_k) = S_jj S_kk + S_jk^2 evaluated at the exact covariance S.
    """
    if len(paths) < MIN_COVARIANCE_PATHS:
        raise InsufficientSamplesError(f"need at least {MIN_COVARIANCE_PATHS} paths, got {len(paths)}")
    first = paths[0]
    for path in paths[1:]:
        if path.grid != first.grid or path.h != first.h:
            raise MismatchedGridError("all paths must share grid and Hurst parameter")
    increments = np.concatenate([np.diff(path.values, axis=1) for path in paths])
    n_samples = increments.shape[0]
    empirical = increments.T @ increments / n_samples
    lags = np.arange(first.grid.n_steps)
    exact = fgn_autocovariance(lags[:, None] - lags[None, :], first.h, first.grid.step)
    variance = np.diagonal(exact)
    stderr = np.sqrt((variance[:, None] * variance[None, :] + exact**2) / n_samples)
    z_scores = (empirical - exact) / stderr
    return IncrementCovarianceReport(
        empirical=empirical,
        exact=exact,
        z_scores=z_scores,
        max_abs_error=float(np.max(np.abs(empirical - exact))),
        max_abs_z=float(np.max(np.abs(z_scores))),
        n_samples=n_samples,
        h=first.h,
        z_limit=z_limit,
    )
