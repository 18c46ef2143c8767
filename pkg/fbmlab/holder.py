"""Hoelder exponents of local-time fields and paths from log-log regressions over dyadic increment ladders.

For each lag delta the increments |F(u + delta) - F(u)| are maximized over the other coordinate (x for time
regularity, t for space regularity), then aggregated into M(delta). The mean statistic (default) averages the
maxima of disjoint windows of delta, each sampled at a fixed number of equally spaced starts; the max statistic
takes the sup over every start. The exponent is the slope of log M against log delta.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, stats

from fbmlab.defaults import (
    BOOTSTRAP_RESAMPLES,
    LADDER_LOW_STEPS,
    MIN_SCALES,
    MIN_WINDOWS,
    PREFERRED_SCALES,
    WINDOW_STARTS,
)
from fbmlab.errors import DegenerateFitError, MismatchedGridError, OutOfRangeError, ResolutionError
from fbmlab.fbm import FbmPath, TimeGrid, sample_fbm
from fbmlab.local_time import LocalTimeField, path_knots
from fbmlab.sde import SolutionPath
from fbmlab.seeds import substream
from fbmlab.storable import Storable

logger = logging.getLogger(__name__)

RESOLUTION_CAP = 0.95
LOWER_BOUND_TOLERANCE = 0.05
MOMENT_TOLERANCE = 0.1


class HolderMode(Enum):
    TIME_UNIFORM_IN_X = "time_uniform_in_x"
    SPACE = "space"
    PATH = "path"


class WindowStatistic(Enum):
    MEAN = "mean"
    MAX = "max"


@dataclass
class HolderEstimate(Storable):
    exponent: float
    slope_stderr: float
    r_squared: float
    delta_range: Tuple[float, float]
    n_scales: int
    mode: HolderMode
    intercept: float = 0.0
    deltas: List[float] = field(default_factory=list)
    moduli: List[float] = field(default_factory=list)
    statistic: WindowStatistic = WindowStatistic.MEAN
    two_sided: bool = False

    @property
    def resolution_capped(self) -> bool:
        """Slopes this close to 1 only say the field is Lipschitz at the ladder's resolution."""
        return self.exponent >= RESOLUTION_CAP

    def to_record(self) -> dict:
        return {**super().to_record(), "resolution_capped": self.resolution_capped}

    @classmethod
    def from_record(cls, record: dict) -> HolderEstimate:
        record = dict(record)
        record.pop("resolution_capped", None)
        record["mode"] = HolderMode(record["mode"])
        record["statistic"] = WindowStatistic(record.get("statistic", "mean"))
        record["delta_range"] = tuple(record["delta_range"])
        return cls(**record)


def _lags(delta_ladder: Sequence[float], step: float) -> List[int]:
    lags = []
    for delta in delta_ladder:
        k = int(round(delta / step))
        if k < 1 or abs(k * step - delta) > 1e-9 * delta:
            raise ResolutionError(f"delta {delta} is not a multiple of the grid spacing {step}")
        lags.append(k)
    return lags


def dyadic_lags(n_points: int, low: int, two_sided: bool = False, min_windows: int = MIN_WINDOWS) -> List[int]:
    """Powers-of-two multiples of ``low`` (rounded up to a power of two) keeping at least ``min_windows`` disjoint
    windows; extended below ``low`` (down to lag 1) until PREFERRED_SCALES lags are available."""
    reach = 2 if two_sided else 1
    k = 1 << max(0, math.ceil(math.log2(max(1, low))))
    lags = []
    while (n_points - reach * k) // k >= min_windows:
        lags.append(k)
        k *= 2
    smallest = lags[0] if lags else k
    while len(lags) < PREFERRED_SCALES and smallest > 1:
        smallest //= 2
        if (n_points - reach * smallest) // smallest >= min_windows:
            lags.insert(0, smallest)
    if len(lags) < MIN_SCALES:
        raise ResolutionError(f"{n_points} grid points leave only {len(lags)} usable scales")
    return lags


def default_time_ladder(field: LocalTimeField, h: Optional[float] = None, two_sided: bool = False) -> List[float]:
    """Dyadic ladder starting at max(8 t_step, (4 eps)^(1/h)), the scale where the eps-ball smoothing stops
    dominating the increments."""
    step = field.t_step
    low = LADDER_LOW_STEPS * step
    if h is not None and field.epsilon > 0:
        low = max(low, (4.0 * field.epsilon) ** (1.0 / h))
    return [k * step for k in dyadic_lags(field.t_grid.size, math.ceil(low / step - 1e-9), two_sided)]


def default_space_ladder(field: LocalTimeField, two_sided: bool = False) -> List[float]:
    step = field.x_step
    return [k * step for k in dyadic_lags(field.x_grid.size, LADDER_LOW_STEPS, two_sided)]


def default_path_ladder(grid: TimeGrid, two_sided: bool = False) -> List[float]:
    return [k * grid.step for k in dyadic_lags(grid.n_steps + 1, LADDER_LOW_STEPS, two_sided)]


def _increments(values: np.ndarray, k: int, two_sided: bool) -> np.ndarray:
    """|F(u + k) - F(u)| along axis 0, or |F(u + k) - F(u - k)| when two-sided."""
    if two_sided:
        return np.abs(values[2 * k :] - values[: -2 * k])
    return np.abs(values[k:] - values[:-k])


def _window_modulus(sup_increments: np.ndarray, k: int, statistic: WindowStatistic) -> float:
    """MAX is the sup over every start. MEAN averages over windows of k starts, each contributing the max over
    WINDOW_STARTS equally spaced starts (all k when k < WINDOW_STARTS), which keeps it exactly self-similar
    for self-similar inputs."""
    n_windows = sup_increments.size // k
    if n_windows < 1:
        raise ResolutionError(f"lag {k} leaves no complete window")
    if statistic is WindowStatistic.MAX:
        return float(sup_increments.max())
    stride = max(1, k // WINDOW_STARTS)
    blocks = sup_increments[: n_windows * k].reshape(n_windows, k)
    return float(blocks[:, ::stride][:, :WINDOW_STARTS].max(axis=1).mean())


def _fit(
    deltas: Sequence[float],
    moduli: Sequence[float],
    mode: HolderMode,
    statistic: WindowStatistic,
    two_sided: bool,
) -> HolderEstimate:
    deltas, moduli = np.asarray(deltas, dtype=float), np.asarray(moduli, dtype=float)
    if not np.any(moduli > 0):
        raise DegenerateFitError("every modulus is zero (empty-range field)")
    keep = moduli > 0
    if not np.all(keep):
        logger.warning(f"Dropping {int(np.sum(~keep))} zero moduli from the {mode.value} regression")
    deltas, moduli = deltas[keep], moduli[keep]
    if deltas.size < MIN_SCALES:
        raise DegenerateFitError(f"need at least {MIN_SCALES} scales with nonzero moduli, got {deltas.size}")
    fit = stats.linregress(np.log(deltas), np.log(moduli))
    return HolderEstimate(
        exponent=float(fit.slope),
        slope_stderr=float(fit.stderr),
        r_squared=float(fit.rvalue**2),
        delta_range=(float(deltas[0]), float(deltas[-1])),
        n_scales=int(deltas.size),
        mode=mode,
        intercept=float(fit.intercept),
        deltas=deltas.tolist(),
        moduli=moduli.tolist(),
        statistic=statistic,
        two_sided=two_sided,
    )


def _estimate(
    values: np.ndarray,
    step: float,
    delta_ladder: Sequence[float],
    mode: HolderMode,
    statistic: WindowStatistic,
    two_sided: bool,
    reduce: Callable[[np.ndarray], np.ndarray],
) -> HolderEstimate:
    statistic = WindowStatistic(statistic)
    lags = _lags(delta_ladder, step)
    moduli = []
    for k in lags:
        increments = _increments(values, k, two_sided)
        if increments.shape[0] // k < MIN_WINDOWS:
            raise ResolutionError(f"delta {k * step} admits fewer than {MIN_WINDOWS} increment windows")
        moduli.append(_window_modulus(reduce(increments), k, statistic))
    return _fit([k * step for k in lags], moduli, mode, statistic, two_sided)


def estimate_holder_time(
    field: LocalTimeField,
    delta_ladder: Optional[Sequence[float]] = None,
    h: Optional[float] = None,
    statistic: WindowStatistic = WindowStatistic.MEAN,
    two_sided: bool = False,
) -> HolderEstimate:
    """Exponent of delta -> sup_x |L(t + delta, x) - L(t, x)| over t windows.

    ``h`` only shapes the default ladder (see ``default_time_ladder``).
    """
    ladder = default_time_ladder(field, h, two_sided) if delta_ladder is None else delta_ladder
    return _estimate(
        field.values,
        field.t_step,
        ladder,
        HolderMode.TIME_UNIFORM_IN_X,
        statistic,
        two_sided,
        lambda increments: increments.max(axis=1),
    )


def estimate_holder_space(
    field: LocalTimeField,
    x_delta_ladder: Optional[Sequence[float]] = None,
    statistic: WindowStatistic = WindowStatistic.MEAN,
    two_sided: bool = False,
) -> HolderEstimate:
    """Exponent of delta -> sup_t |L(t, x + delta) - L(t, x)| over x windows. Diagnostic only."""
    ladder = default_space_ladder(field, two_sided) if x_delta_ladder is None else x_delta_ladder
    return _estimate(
        field.values.T,
        field.x_step,
        ladder,
        HolderMode.SPACE,
        statistic,
        two_sided,
        lambda increments: increments.max(axis=1),
    )


def estimate_path_holder(
    path: Union[FbmPath, SolutionPath],
    delta_ladder: Optional[Sequence[float]] = None,
    statistic: WindowStatistic = WindowStatistic.MEAN,
    two_sided: bool = False,
) -> HolderEstimate:
    """Exponent of delta -> max_t |X_{t + delta} - X_t| (Euclidean norm across components)."""
    ladder = default_path_ladder(path.grid, two_sided) if delta_ladder is None else delta_ladder
    return _estimate(
        path.values.T,
        path.grid.step,
        ladder,
        HolderMode.PATH,
        statistic,
        two_sided,
        lambda increments: np.sqrt(np.sum(increments**2, axis=1)),
    )


@dataclass
class LowerBoundRung:
    delta: float
    lhs: float
    sup_increment: float
    oscillation: float
    rhs: float
    ratio: float
    integral: float
    integral_error: float
    holds: bool


@dataclass
class LowerBoundReport:
    t: float
    epsilon: float
    rungs: List[LowerBoundRung]

    @property
    def passed(self) -> bool:
        return all(r.holds for r in self.rungs)

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rungs), default=math.nan)

    def rows(self) -> List[dict]:
        return [vars(r) for r in self.rungs]


def _t_index(field: LocalTimeField, t: float) -> int:
    j = int(np.argmin(np.abs(field.t_grid - t)))
    if abs(field.t_grid[j] - t) > 1e-9 * max(1.0, abs(t)):
        raise OutOfRangeError(f"time {t} is not a point of the field's t grid")
    return j


def lower_bound_check(
    path: Union[FbmPath, SolutionPath],
    field: LocalTimeField,
    t: float,
    delta_ladder: Optional[Sequence[float]] = None,
    tolerance: float = LOWER_BOUND_TOLERANCE,
) -> LowerBoundReport:
    """delta <= 2 sup_x (L(t + delta, x) - L(t, x)) (osc(X; [t, t + delta]) + eps) on every rung.

    The local time vanishes off the range of X on [t, t + delta], so its integral (= delta) is at most the
    support length times the sup; eps widens the support of the eps-ball field. Failed rungs are flagged.
    """
    if delta_ladder is None:
        reach = field.t_grid[-1] - t + 1e-9 * field.t_step
        delta_ladder = [delta for delta in default_time_ladder(field, path.h) if delta <= reach]
    start = _t_index(field, t)
    rungs = []
    for delta in delta_ladder:
        end = _t_index(field, t + delta)
        increment = field.values[end] - field.values[start]
        sup_increment = float(np.max(increment))
        _, knot_x = path_knots(path.grid, path.values, t, t + delta)
        oscillation = float(np.max(knot_x[0]) - np.min(knot_x[0]))
        rhs = 2.0 * sup_increment * (oscillation + field.epsilon)
        integral = float(integrate.trapezoid(increment, field.x_grid))
        rungs.append(
            LowerBoundRung(
                delta=float(delta),
                lhs=float(delta),
                sup_increment=sup_increment,
                oscillation=oscillation,
                rhs=rhs,
                ratio=delta / rhs if rhs > 0 else math.inf,
                integral=integral,
                integral_error=abs(integral - delta) / delta,
                holds=delta <= rhs * (1 + tolerance),
            )
        )
    return LowerBoundReport(float(t), field.epsilon, rungs)


@dataclass
class PooledEstimate(Storable):
    median: float
    low: float
    high: float
    n_estimates: int
    exponents: List[float]
    confidence: float = 0.95


def pool_estimates(
    estimates: Sequence[HolderEstimate], confidence: float = 0.95, seed: int = 0
) -> PooledEstimate:
    """Median of per-path exponents with a percentile bootstrap interval."""
    exponents = np.array([e.exponent for e in estimates], dtype=float)
    if exponents.size == 0:
        raise ValueError("nothing to pool")
    median = float(np.median(exponents))
    if exponents.size == 1 or np.all(exponents == exponents[0]):
        return PooledEstimate(median, median, median, int(exponents.size), exponents.tolist(), confidence)
    interval = stats.bootstrap(
        (exponents,),
        np.median,
        n_resamples=BOOTSTRAP_RESAMPLES,
        confidence_level=confidence,
        method="percentile",
        random_state=substream(seed),
    ).confidence_interval
    return PooledEstimate(
        median, float(interval.low), float(interval.high), int(exponents.size), exponents.tolist(), confidence
    )


def unit_speed_field(t_grid: Sequence[float], x_grid: Sequence[float], a: float = 0.0) -> LocalTimeField:
    """Exact local time of X_s = s: L^a(t, x) = 1 for a < x < t, else 0."""
    t_grid, x_grid = np.asarray(t_grid, dtype=float), np.asarray(x_grid, dtype=float)
    values = ((x_grid[None, :] > a) & (x_grid[None, :] < t_grid[:, None])).astype(float)
    return LocalTimeField(a, t_grid, x_grid, 0.0, values)


def _planted_fbm(beta: float, n_points: int, seed: int) -> np.ndarray:
    return sample_fbm(beta, TimeGrid(0.0, 1.0, n_points - 1), 1, seed).values[0]


def planted_time_field(
    beta: float,
    t_grid: Sequence[float],
    x_grid: Sequence[float],
    seed: int = 0,
    profile: Callable[[np.ndarray], np.ndarray] = lambda x: np.exp(-(x**2)),
) -> LocalTimeField:
    """L(t, x) = g(x) (1 + W(t)) with W a Hurst-beta fBm sample: time exponent beta by construction."""
    t_grid, x_grid = np.asarray(t_grid, dtype=float), np.asarray(x_grid, dtype=float)
    w = _planted_fbm(beta, t_grid.size, seed)
    return LocalTimeField(t_grid[0], t_grid, x_grid, 0.0, (1.0 + w)[:, None] * profile(x_grid)[None, :])


def planted_space_field(
    beta: float,
    t_grid: Sequence[float],
    x_grid: Sequence[float],
    seed: int = 0,
) -> LocalTimeField:
    """L(t, x) = f(x) t with f a Hurst-beta fBm sample along x: space exponent beta by construction."""
    t_grid, x_grid = np.asarray(t_grid, dtype=float), np.asarray(x_grid, dtype=float)
    f = _planted_fbm(beta, x_grid.size, seed)
    return LocalTimeField(t_grid[0], t_grid, x_grid, 0.0, t_grid[:, None] * f[None, :])


@dataclass
class MomentScaling:
    order: int
    fitted_exponent: float
    stderr: float
    lower_bound: float
    passed: bool


@dataclass
class MomentScalingReport:
    h: float
    dim: int
    deltas: List[float]
    moments: List[List[float]]
    rows: List[MomentScaling]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def time_moment_scaling(
    fields: Sequence[LocalTimeField],
    h: float,
    orders: Sequence[int] = (2, 3),
    delta_ladder: Optional[Sequence[float]] = None,
    dim: int = 1,
    tolerance: float = MOMENT_TOLERANCE,
) -> MomentScalingReport:
    """E|L(t + delta, x) - L(t, x)|^n (averaged over fields, t and x) decays at least like
    delta^((1 - dH)(n - 1) + 1); a fitted exponent counts as passing when it is above that bound minus
    ``tolerance``."""
    if not fields:
        raise ValueError("no fields given")
    first = fields[0]
    for other in fields[1:]:
        if not (np.array_equal(other.t_grid, first.t_grid) and np.array_equal(other.x_grid, first.x_grid)):
            raise MismatchedGridError("moment scaling needs fields on a common (t, x) grid")
    ladder = default_time_ladder(first, h) if delta_ladder is None else list(delta_ladder)
    lags = _lags(ladder, first.t_step)
    moments = np.array(
        [
            [np.mean([np.mean(_increments(f.values, k, False) ** n) for f in fields]) for k in lags]
            for n in orders
        ]
    )
    rows = []
    for n, moment in zip(orders, moments):
        keep = moment > 0
        if keep.sum() < 2:
            raise DegenerateFitError(f"order {n}: fewer than two nonzero moments")
        fit = stats.linregress(np.log(np.asarray(ladder)[keep]), np.log(moment[keep]))
        bound = (1 - dim * h) * (n - 1) + 1
        rows.append(MomentScaling(n, float(fit.slope), float(fit.stderr), bound, fit.slope >= bound - tolerance))
    return MomentScalingReport(h, dim, [float(d) for d in ladder], moments.tolist(), rows)
