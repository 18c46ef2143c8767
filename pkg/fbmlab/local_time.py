"""Occupation measures and the epsilon-ball occupation density L^a(t, x).

Paths are treated as piecewise linear between grid points, so occupation times of intervals and balls are
computed exactly segment by segment (linear in-cell crossing times).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special

from fbmlab import pathio
from fbmlab.defaults import (
    CUTOFF_FRACTION,
    EPSILON_FACTOR,
    FLAT_SEGMENT_TOLERANCE,
    NOISE_FLOOR_RATIO,
    T_GRID_POINTS,
    X_GRID_SUBDIVISIONS,
)
from fbmlab.errors import DimensionMismatchError, DomainError, OutOfRangeError, ResolutionError
from fbmlab.fbm import FbmPath, TimeGrid
from fbmlab.sde import SolutionPath

logger = logging.getLogger(__name__)

AnyPath = Union[FbmPath, SolutionPath]


class Kernel(Enum):
    INDICATOR = "indicator"
    EPANECHNIKOV = "epanechnikov"


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]; empty when lo > hi."""

    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return self.lo > self.hi


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(np.atleast_1d(np.asarray(self.center, dtype=float)).tolist()))


Region = Union[Interval, Ball, None]


@dataclass(frozen=True)
class OccupationQuery:
    """Time window [a, t] and a region; ``region=None`` stands for all of R^d."""

    a: float
    t: float
    region: Region = None

    def __post_init__(self):
        if not self.a < self.t:
            raise OutOfRangeError(f"occupation window needs a < t, got [{self.a}, {self.t}]")


def ball_constant(dim: int) -> float:
    """Volume of the unit ball in R^d (2 for d = 1)."""
    return math.pi ** (dim / 2) / special.gamma(dim / 2 + 1)


def default_epsilon(h: float, step: float, factor: float = EPSILON_FACTOR) -> float:
    return factor * step**h


def default_cutoff(grid: TimeGrid) -> float:
    return grid.t_start + CUTOFF_FRACTION * grid.span


def _check_window(grid: TimeGrid, a: float, t: float):
    tol = 1e-12 * grid.span
    if not (grid.t_start - tol <= a < t <= grid.t_end + tol):
        raise OutOfRangeError(f"window [{a}, {t}] not inside [{grid.t_start}, {grid.t_end}] with a < t")


def path_knots(grid: TimeGrid, values: np.ndarray, a: float, t: float, extra: Sequence[float] = ()):
    """Knot times in [a, t] (grid points, a, t and ``extra``) with linearly interpolated values (d, k)."""
    times = grid.times
    inside = times[(times > a) & (times < t)]
    knot_t = np.unique(np.concatenate([[a, t], inside, np.asarray(extra, dtype=float)]))
    knot_x = np.stack([np.interp(knot_t, times, component) for component in values])
    return knot_t, knot_x


def _interval_fraction(p: np.ndarray, q: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fraction of each linear segment p -> q spent in [lo, hi]."""
    if lo > hi:
        return np.zeros_like(p)
    span = q - p
    flat = np.abs(span) <= FLAT_SEGMENT_TOLERANCE * max(hi - lo, 1.0)
    safe = np.where(flat, 1.0, span)
    theta_lo, theta_hi = (lo - p) / safe, (hi - p) / safe
    start = np.clip(np.minimum(theta_lo, theta_hi), 0.0, 1.0)
    stop = np.clip(np.maximum(theta_lo, theta_hi), 0.0, 1.0)
    inside = ((p >= lo) & (p <= hi)).astype(float)
    return np.where(flat, inside, stop - start)


def _ball_fraction(w: np.ndarray, v: np.ndarray, radius: float) -> np.ndarray:
    """Fraction of theta in [0, 1] with |w + theta v| <= radius; w, v of shape (d, ...)."""
    aa = np.sum(v * v, axis=0)
    bb = np.sum(w * v, axis=0)
    cc = np.sum(w * w, axis=0) - radius**2
    flat = aa <= (FLAT_SEGMENT_TOLERANCE * radius) ** 2
    safe = np.where(flat, 1.0, aa)
    disc = np.maximum(bb * bb - safe * cc, 0.0)
    root = np.sqrt(disc)
    start = np.clip((-bb - root) / safe, 0.0, 1.0)
    stop = np.clip((-bb + root) / safe, 0.0, 1.0)
    crossing = np.where(bb * bb - safe * cc > 0, stop - start, 0.0)
    return np.where(flat, (cc <= 0).astype(float), crossing)


def occupation_measure(path: AnyPath, a: float, t: float, region: Region = None) -> float:
    """Lebesgue time of {s in [a, t] : X_s in region}."""
    query = OccupationQuery(a, t, region)
    _check_window(path.grid, query.a, query.t)
    if region is None:
        return t - a
    knot_t, knot_x = path_knots(path.grid, path.values, a, t)
    dt = np.diff(knot_t)
    if isinstance(region, Interval):
        if path.values.shape[0] != 1:
            raise DimensionMismatchError("interval regions need a one-dimensional path")
        fraction = _interval_fraction(knot_x[0, :-1], knot_x[0, 1:], region.lo, region.hi)
    else:
        center = np.asarray(region.center)
        if center.size != path.values.shape[0]:
            raise DimensionMismatchError(f"ball center has {center.size} coordinates, path has {path.values.shape[0]}")
        fraction = _ball_fraction(knot_x[:, :-1] - center[:, None], np.diff(knot_x, axis=1), region.radius)
    return float(np.sum(fraction * dt))


def local_time_ball(path: AnyPath, a: float, t: float, x, epsilon: float) -> float:
    """Occupation of B(x, epsilon) divided by C_d epsilon^d."""
    dim = path.values.shape[0]
    center = np.atleast_1d(np.asarray(x, dtype=float))
    if dim == 1:
        region: Region = Interval(center[0] - epsilon, center[0] + epsilon)
        if not epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
    else:
        region = Ball(tuple(center), epsilon)
    return occupation_measure(path, a, t, region) / (ball_constant(dim) * epsilon**dim)


def ball_occupation_batch(
    times: np.ndarray, values: np.ndarray, centers: np.ndarray, radius: float, lo: int, hi: int
) -> np.ndarray:
    """Occupation of B(centers[j], radius) by path j over grid indices [lo, hi].

    ``values`` has shape (m, d, n + 1) and ``centers`` shape (m, d); returns (m,).
    """
    segment = values[:, :, lo : hi + 1]
    w = (segment[:, :, :-1] - centers[:, :, None]).transpose(1, 0, 2)
    v = np.diff(segment, axis=2).transpose(1, 0, 2)
    fraction = _ball_fraction(w, v, radius)
    return fraction @ np.diff(times[lo : hi + 1])


def covering_x_grid(
    lo: float, hi: float, epsilon: float, subdivisions: int = X_GRID_SUBDIVISIONS
) -> np.ndarray:
    """Uniform grid with spacing epsilon / subdivisions covering [lo - epsilon, hi + epsilon] with one spare
    point at each end; on it the trapezoidal integral of an indicator field equals the occupation time."""
    spacing = epsilon / subdivisions
    first = math.floor((lo - epsilon) / spacing) - 1
    last = math.ceil((hi + epsilon) / spacing) + 1
    return np.arange(first, last + 1) * spacing


def default_t_grid(grid: TimeGrid, a: float, max_points: int = T_GRID_POINTS) -> np.ndarray:
    """Path grid times at or after ``a``, thinned by a constant stride to at most ``max_points`` points."""
    times = grid.times
    first = int(np.searchsorted(times, a - 1e-12 * grid.span))
    stride = max(1, math.ceil((times.size - first) / max_points))
    return times[first::stride]


def _uniform_kernel_mass(lo, hi, dt, flat, x, epsilon):
    def below(level):
        ramp = np.clip((level - lo) / np.where(flat, 1.0, hi - lo), 0.0, 1.0)
        return dt * np.where(flat, (lo <= level).astype(float), ramp)

    return (below(x + epsilon) - below(x - epsilon)) / (2.0 * epsilon)


def _epanechnikov_cdf(z):
    z = np.clip(z, -1.0, 1.0)
    return 0.5 + 0.75 * z - 0.25 * z**3


def _epanechnikov_kernel_mass(lo, hi, dt, flat, x, epsilon):
    z_lo, z_hi = (lo - x) / epsilon, (hi - x) / epsilon
    ramp = (_epanechnikov_cdf(z_hi) - _epanechnikov_cdf(z_lo)) / np.where(flat, 1.0, hi - lo)
    at_point = 0.75 * np.clip(1.0 - z_lo**2, 0.0, None) / epsilon
    return dt * np.where(flat, at_point, ramp)


_KERNEL_MASS = {Kernel.INDICATOR: _uniform_kernel_mass, Kernel.EPANECHNIKOV: _epanechnikov_kernel_mass}


@dataclass
class LocalTimeField:
    """values[j, i] = L^a(t_grid[j], x_grid[i]); ``epsilon = 0`` marks an analytic (exact) field."""

    a: float
    t_grid: np.ndarray
    x_grid: np.ndarray
    epsilon: float
    values: np.ndarray
    ball_constant: float = 2.0
    kernel: Kernel = Kernel.INDICATOR

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        if self.values.shape != (self.t_grid.size, self.x_grid.size):
            raise ValueError(f"values shape {self.values.shape} does not match t_grid and x_grid")

    @staticmethod
    def _uniform_step(grid: np.ndarray, name: str) -> float:
        steps = np.diff(grid)
        if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ResolutionError(f"{name} is not uniform")
        return float(steps[0])

    @property
    def t_step(self) -> float:
        return self._uniform_step(self.t_grid, "t_grid")

    @property
    def x_step(self) -> float:
        return self._uniform_step(self.x_grid, "x_grid")

    def occupation_totals(self) -> np.ndarray:
        return integrate.trapezoid(self.values, self.x_grid, axis=1)

    def identity_errors(self) -> np.ndarray:
        """|int L(t, x) dx - (t - a)| / (t - a) per t (absolute where t = a)."""
        elapsed = self.t_grid - self.a
        error = np.abs(self.occupation_totals() - elapsed)
        return np.where(elapsed > 0, error / np.where(elapsed > 0, elapsed, 1.0), error)

    def is_nondecreasing_in_t(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=0) >= 0))

    def header(self) -> dict:
        return {
            "kind": "local_time",
            "a": self.a,
            "epsilon": self.epsilon,
            "ball_constant": self.ball_constant,
            "kernel": self.kernel.value,
            "t_grid": self.t_grid,
            "x_grid": self.x_grid,
        }

    def to_csv(self, path: pathio.PathLike):
        pathio.write_field_csv(path, self.t_grid, self.x_grid, self.values)

    def to_binary(self, path: pathio.PathLike):
        pathio.write_binary(path, self.header(), self.values)

    @classmethod
    def from_binary(cls, path: pathio.PathLike) -> LocalTimeField:
        header, values = pathio.read_binary(path)
        return cls(
            header["a"],
            np.asarray(header["t_grid"]),
            np.asarray(header["x_grid"]),
            header["epsilon"],
            values,
            header["ball_constant"],
            Kernel(header["kernel"]),
        )


def local_time_field(
    path: AnyPath,
    a: Optional[float] = None,
    t_grid: Optional[Sequence[float]] = None,
    x_grid: Optional[Sequence[float]] = None,
    epsilon: Optional[float] = None,
    kernel: Kernel = Kernel.INDICATOR,
    chunk_cells: int = 1 << 22,
) -> LocalTimeField:
    """L^a(t, x) on a (t, x) grid in one pass over the path.

    Defaults: a = t_start + 0.1 T, t_grid from ``default_t_grid``, epsilon = 0.5 step^h (needs ``path.h``) and the
    covering x grid of the path's range on [a, t_end].
    """
    if path.values.shape[0] != 1:
        raise DimensionMismatchError(f"local-time fields need d = 1, got d = {path.values.shape[0]}")
    kernel = Kernel(kernel)
    grid = path.grid
    a = default_cutoff(grid) if a is None else float(a)
    t_grid = default_t_grid(grid, a) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(np.diff(t_grid) <= 0):
        raise OutOfRangeError("t_grid must be nonempty and strictly increasing")
    _check_window(grid, a, max(t_grid[-1], a + grid.step))
    if t_grid[0] < a - 1e-12 * grid.span:
        raise OutOfRangeError(f"t_grid starts at {t_grid[0]} before the cutoff {a}")
    if epsilon is None:
        if path.h is None:
            raise ValueError("epsilon is required when the path carries no Hurst parameter")
        epsilon = default_epsilon(path.h, grid.step)
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return _field_on_grid(path, a, t_grid, x_grid, float(epsilon), kernel, chunk_cells)


def _spacing(x_grid: np.ndarray) -> float:
    return float(np.max(np.diff(x_grid))) if x_grid.size > 1 else 0.0


def _field_on_grid(
    path: AnyPath,
    a: float,
    t_grid: np.ndarray,
    x_grid: Optional[Sequence[float]],
    epsilon: float,
    kernel: Kernel,
    chunk_cells: int = 1 << 22,
    require_resolution: bool = True,
) -> LocalTimeField:
    grid = path.grid
    t_end = max(t_grid[-1], a)
    knot_t, knot_x = path_knots(grid, path.values, a, t_end, extra=t_grid[t_grid > a])
    x_path = knot_x[0]
    if x_grid is None:
        x_grid = covering_x_grid(float(x_path.min()), float(x_path.max()), epsilon)
    x_grid = np.asarray(x_grid, dtype=float)
    if require_resolution and _spacing(x_grid) > epsilon * (1 + 1e-9):
        raise ResolutionError(f"x_grid spacing {_spacing(x_grid):.3e} exceeds epsilon {epsilon:.3e}")

    lo, hi = np.minimum(x_path[:-1], x_path[1:]), np.maximum(x_path[:-1], x_path[1:])
    dt = np.diff(knot_t)
    flat = hi - lo <= FLAT_SEGMENT_TOLERANCE * epsilon
    # last segment ending at or before each t_grid point (-1: none)
    picks = np.searchsorted(knot_t[1:], t_grid, side="right") - 1
    mass = _KERNEL_MASS[kernel]

    values = np.zeros((t_grid.size, x_grid.size))
    running = np.zeros(x_grid.size)
    chunk = max(1, chunk_cells // max(1, x_grid.size))
    for start in range(0, dt.size, chunk):
        stop = min(start + chunk, dt.size)
        sl = slice(start, stop)
        contributions = mass(
            lo[sl, None], hi[sl, None], dt[sl, None], flat[sl, None], x_grid[None, :], epsilon
        )
        cumulative = running + np.cumsum(contributions, axis=0)
        rows = np.nonzero((picks >= start) & (picks < stop))[0]
        values[rows] = cumulative[picks[rows] - start]
        running = cumulative[-1]
    logger.debug(f"local-time field {t_grid.size}x{x_grid.size}, eps={epsilon:.3e}, {dt.size} segments")
    return LocalTimeField(a, t_grid, x_grid, float(epsilon), values, ball_constant(1), kernel)


@dataclass
class EpsilonRung:
    epsilon: float
    snapshot: np.ndarray
    sup_difference: float
    resolution_ratio: float
    below_noise_floor: bool
    # x grid coarser than epsilon: exact at the grid points, but the trapezoid identity no longer holds
    undersampled: bool = False


@dataclass
class EpsilonConvergenceTable:
    a: float
    t: float
    x_grid: np.ndarray
    rungs: List[EpsilonRung] = field(default_factory=list)
    atomic: bool = False

    @property
    def ladder(self) -> List[float]:
        return [r.epsilon for r in self.rungs]

    def differences(self) -> np.ndarray:
        return np.array([r.sup_difference for r in self.rungs[1:]])

    def rows(self) -> List[dict]:
        return [
            {
                "epsilon": r.epsilon,
                "sup_difference": r.sup_difference,
                "resolution_ratio": r.resolution_ratio,
                "below_noise_floor": r.below_noise_floor,
                "undersampled": r.undersampled,
            }
            for r in self.rungs
        ]


def epsilon_convergence_study(
    path: AnyPath,
    a: float,
    t: float,
    eps_ladder: Sequence[float],
    x_grid: Optional[Sequence[float]] = None,
    kernel: Kernel = Kernel.INDICATOR,
) -> EpsilonConvergenceTable:
    """Successive sup_x |L_{eps_{k+1}}(t, x) - L_{eps_k}(t, x)| along a decreasing ladder.

    The x grid (default: covering grid at the finest rung) is shared by every rung; rungs finer than its spacing
    are flagged undersampled. Rungs with epsilon below NOISE_FLOOR_RATIO times the mean per-step movement are
    flagged; a path that does not move on [a, t] is flagged atomic (its local time diverges like (t - a) / (2 eps)).
    """
    if path.values.shape[0] != 1:
        raise DimensionMismatchError(f"local-time fields need d = 1, got d = {path.values.shape[0]}")
    ladder = [float(e) for e in eps_ladder]
    if len(ladder) < 2 or any(e <= 0 for e in ladder) or np.any(np.diff(ladder) >= 0):
        raise ValueError(f"eps_ladder must be a strictly decreasing list of positive radii, got {ladder}")
    _check_window(path.grid, a, t)
    knot_t, knot_x = path_knots(path.grid, path.values, a, t)
    movement = float(np.mean(np.abs(np.diff(knot_x[0]))))
    if x_grid is None:
        x_grid = covering_x_grid(float(knot_x[0].min()), float(knot_x[0].max()), ladder[-1])
    x_grid = np.asarray(x_grid, dtype=float)
    spacing = _spacing(x_grid)
    kernel = Kernel(kernel)

    table = EpsilonConvergenceTable(a, t, x_grid, atomic=movement == 0.0)
    previous = None
    for epsilon in ladder:
        field_ = _field_on_grid(path, float(a), np.array([float(t)]), x_grid, epsilon, kernel, require_resolution=False)
        snapshot = field_.values[0]
        difference = math.nan if previous is None else float(np.max(np.abs(snapshot - previous)))
        ratio = math.inf if movement == 0.0 else epsilon / movement
        undersampled = spacing > epsilon * (1 + 1e-9)
        table.rungs.append(EpsilonRung(epsilon, snapshot, difference, ratio, ratio < NOISE_FLOOR_RATIO, undersampled))
        previous = snapshot
    coarse = [r.epsilon for r in table.rungs if r.undersampled]
    if coarse:
        logger.warning(f"x grid spacing {spacing:.3e} is coarser than ladder rungs {coarse}")
    floor = [r.epsilon for r in table.rungs if r.below_noise_floor]
    if floor:
        logger.warning(f"{len(floor)} ladder rungs lie below the path noise floor: {floor}")
    if table.atomic:
        logger.warning("path is constant on the window: occupation measure is atomic, no finite local time")
    return table
