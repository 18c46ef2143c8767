"""Monte Carlo estimates of the solution's increment densities, tails and occupation behaviour."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, stats

from fbmlab.defaults import (
    BANDWIDTH_SCALE,
    BANDWIDTH_SENSITIVITY,
    GAMMA_FRACTION,
    GROWTH_TOLERANCE,
    KDE_GRID_POINTS,
    MIN_KDE_SAMPLES,
    MIN_TAIL_COUNT,
)
from fbmlab.errors import (
    DegenerateSampleError,
    DimensionMismatchError,
    DomainError,
    InsufficientSamplesError,
    InsufficientTailSamplesError,
)
from fbmlab.fbm import TimeGrid, fbm_covariance
from fbmlab.local_time import ball_occupation_batch, default_cutoff
from fbmlab.sde import SimulationSettings
from fbmlab.seeds import substream
from fbmlab.storable import Storable
from fbmlab.vector_fields import VectorFieldSet

logger = logging.getLogger(__name__)

SCALING_TOLERANCE = 0.05
TAIL_TOLERANCE = 0.1
MIN_GAP_DECADES = 1.5
MIN_TAIL_THRESHOLDS = 3
# substream component reserved for the random time pairs of the smoothed density modulus
TIME_PAIR_COMPONENT = 1 << 16


@dataclass
class KdeEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n_samples: int

    @property
    def integral(self) -> float:
        return float(integrate.trapezoid(self.density, self.grid))

    @property
    def sup(self) -> float:
        return float(self.density.max())


def _checked_samples(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < MIN_KDE_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_KDE_SAMPLES} samples, got {samples.size}")
    if np.var(samples) == 0:
        raise DegenerateSampleError("samples have zero variance")
    return samples


def kde_increment_density(
    samples: Sequence[float],
    bandwidth: Union[float, str] = "auto",
    grid: Optional[Sequence[float]] = None,
    n_points: int = KDE_GRID_POINTS,
) -> KdeEstimate:
    """Gaussian KDE; ``bandwidth`` is the kernel standard deviation, "auto" means Silverman's rule.

    The default grid spans the sample range widened by five bandwidths on each side.
    """
    samples = _checked_samples(samples)
    std = float(np.std(samples, ddof=1))
    if bandwidth == "auto":
        kde = stats.gaussian_kde(samples, bw_method="silverman")
    else:
        if not float(bandwidth) > 0:
            raise DomainError(f"bandwidth must be positive, got {bandwidth}")
        kde = stats.gaussian_kde(samples, bw_method=float(bandwidth) / std)
    width = float(kde.factor * std)
    if grid is None:
        grid = np.linspace(samples.min() - 5 * width, samples.max() + 5 * width, n_points)
    grid = np.asarray(grid, dtype=float)
    return KdeEstimate(grid, kde(grid), width, samples.size)


def silverman_bandwidth(samples: Sequence[float]) -> float:
    samples = np.asarray(samples, dtype=float).ravel()
    kde = stats.gaussian_kde(samples, bw_method="silverman")
    return float(kde.factor * np.std(samples, ddof=1))


def gaussian_sup_density(gap: float, h: float, sigma: float = 1.0) -> float:
    """Peak of the N(0, sigma^2 gap^2H) density of an fBm increment over ``gap``."""
    return 1.0 / math.sqrt(2 * math.pi * sigma**2 * gap ** (2 * h))


def _scalar_only(vf: VectorFieldSet):
    if vf.dim != 1:
        raise DimensionMismatchError(f"this estimator needs d = 1, got d = {vf.dim}")


def _snap(grid: TimeGrid, t: float) -> int:
    return grid.nearest_index(t)


def default_gap_ladder(grid: TimeGrid, s: float, low_steps: int = 4) -> List[float]:
    """Dyadic multiples of ``low_steps`` grid steps that fit in [s, t_end]."""
    gaps = []
    k = low_steps
    while s + k * grid.step <= grid.t_end + 1e-12 * grid.span:
        gaps.append(k * grid.step)
        k *= 2
    return gaps


@dataclass
class DensityScalingReport(Storable):
    h: float
    dim: int
    gaps: List[Tuple[float, float]]
    sup_density: List[float]
    fitted_slope: float
    theoretical_slope: float
    stderr: float
    intercept: float
    bandwidths: List[float]
    sensitivity_factors: List[float] = field(default_factory=list)
    sensitivity: List[List[float]] = field(default_factory=list)
    n_paths: int = 0
    field_id: str = ""
    seed: int = 0

    @property
    def gap_lengths(self) -> np.ndarray:
        return np.array([u - s for s, u in self.gaps])

    def passed(self, tolerance: float = SCALING_TOLERANCE) -> bool:
        """|fitted - theoretical| <= max(2 stderr, tolerance)."""
        return abs(self.fitted_slope - self.theoretical_slope) <= max(2 * self.stderr, tolerance)

    def rows(self) -> List[dict]:
        rows = []
        for (s, u), sup, width, sens in zip(self.gaps, self.sup_density, self.bandwidths, self.sensitivity):
            row = {"s": s, "u": u, "gap": u - s, "sup_density": sup, "bandwidth": width}
            row.update({f"sup_bw_x{factor:g}": value for factor, value in zip(self.sensitivity_factors, sens)})
            rows.append(row)
        return rows


def sup_density_scaling(
    vf: VectorFieldSet,
    h: float,
    x0: float,
    gap_ladder: Optional[Sequence[float]] = None,
    n_paths: int = 100_000,
    s: Optional[float] = None,
    seed: int = 0,
    settings: SimulationSettings = SimulationSettings(),
    bandwidth_scale: float = BANDWIDTH_SCALE,
    sensitivity_factors: Sequence[float] = BANDWIDTH_SENSITIVITY,
) -> DensityScalingReport:
    """Slope of log sup_x p_{s,u}(x) against log(u - s); the density bound predicts -d h.

    The sup is the maximum over the grid of a Gaussian KDE with Silverman's bandwidth times ``bandwidth_scale``;
    the sups at ``sensitivity_factors`` times that bandwidth are kept for every gap.
    """
    _scalar_only(vf)
    grid = settings.grid
    s = default_cutoff(grid) if s is None else s
    i_s = _snap(grid, s)
    ladder = default_gap_ladder(grid, grid.times[i_s]) if gap_ladder is None else list(gap_ladder)
    i_u = sorted({_snap(grid, grid.times[i_s] + gap) for gap in ladder})
    if not i_u or i_u[0] <= i_s:
        raise ValueError("every gap must span at least one grid step")
    times = grid.times
    gaps = [(float(times[i_s]), float(times[j])) for j in i_u]
    lengths = np.array([u - t for t, u in gaps])
    if math.log10(lengths[-1] / lengths[0]) < MIN_GAP_DECADES:
        raise ValueError(f"gaps must span at least {MIN_GAP_DECADES} decades, got {lengths[0]:.3g}..{lengths[-1]:.3g}")

    states = settings.simulate(vf, x0, h, n_paths, seed, [i_s] + i_u)[:, 0, :]
    sups, widths, sensitivity = [], [], []
    for column, (t, u) in enumerate(gaps, start=1):
        increments = states[:, column] - states[:, 0]
        width = bandwidth_scale * silverman_bandwidth(_checked_samples(increments))
        by_factor = {f: kde_increment_density(increments, width * f).sup for f in (1.0, *sensitivity_factors)}
        sup = by_factor[1.0]
        sups.append(sup)
        widths.append(width)
        sensitivity.append([by_factor[f] for f in sensitivity_factors])
        logger.debug(f"gap {u - t:.4g}: sup density {sup:.4g} (bandwidth {width:.3g})")
    fit = stats.linregress(np.log(lengths), np.log(sups))
    report = DensityScalingReport(
        h=h,
        dim=vf.dim,
        gaps=gaps,
        sup_density=sups,
        fitted_slope=float(fit.slope),
        theoretical_slope=-vf.dim * h,
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        bandwidths=widths,
        sensitivity_factors=list(sensitivity_factors),
        sensitivity=sensitivity,
        n_paths=n_paths,
        field_id=vf.field_id,
        seed=seed,
    )
    logger.info(f"density scaling: slope {report.fitted_slope:.4f} +- {report.stderr:.4f} vs {-vf.dim * h:.4f}")
    return report


def _tail_fit(thresholds: np.ndarray, survival: np.ndarray):
    return stats.linregress(np.log(thresholds), np.log(-np.log(survival)))


@dataclass
class TailReport(Storable):
    gamma: float
    gap: float
    thresholds: List[float]
    survival: List[float]
    log_survival: List[float]
    fitted_tail_exponent: float
    stderr: float
    gaussian_reference_exponent: float
    n_paths: int
    field_id: str = ""
    seed: int = 0

    @property
    def bound(self) -> float:
        return 2 * self.gamma

    def passed(self, tolerance: float = TAIL_TOLERANCE) -> bool:
        """One-sided: the tail decays at least like exp(-c r^(2 gamma))."""
        return self.fitted_tail_exponent >= self.bound - tolerance


def default_tail_thresholds(magnitudes: np.ndarray, count: int = 8) -> np.ndarray:
    """Quantiles of |X_u - X_s| at survival levels log-spaced between 1/2 and MIN_TAIL_COUNT / n."""
    levels = np.geomspace(0.5, MIN_TAIL_COUNT / magnitudes.size, count)
    return np.quantile(magnitudes, 1.0 - levels)


def tail_decay_check(
    vf: VectorFieldSet,
    h: float,
    gamma: Optional[float] = None,
    gap: float = 0.5,
    thresholds: Optional[Sequence[float]] = None,
    n_paths: int = 100_000,
    x0: float = 0.0,
    s: Optional[float] = None,
    seed: int = 0,
    settings: SimulationSettings = SimulationSettings(),
) -> TailReport:
    """Fits log(-log P(|X_u - X_s| > r)) against log r over thresholds whose survival lies in
    [MIN_TAIL_COUNT / n_paths, 1/2]. The Gaussian reference is the same fit on the exact survival of a centered
    normal with the sample's variance."""
    _scalar_only(vf)
    gamma = GAMMA_FRACTION * h if gamma is None else float(gamma)
    if not 0 < gamma < h:
        raise DomainError(f"gamma must lie in (0, h) = (0, {h}), got {gamma}")
    grid = settings.grid
    s = default_cutoff(grid) if s is None else s
    i_s, i_u = _snap(grid, s), _snap(grid, s + gap)
    if i_u <= i_s:
        raise ValueError(f"gap {gap} is shorter than one grid step")
    states = settings.simulate(vf, x0, h, n_paths, seed, [i_s, i_u])[:, 0, :]
    increments = states[:, 1] - states[:, 0]
    magnitudes = np.abs(increments)

    candidates = default_tail_thresholds(magnitudes) if thresholds is None else np.asarray(thresholds, dtype=float)
    survival = np.array([np.mean(magnitudes > r) for r in candidates])
    usable = (survival >= MIN_TAIL_COUNT / n_paths) & (survival <= 0.5) & (candidates > 0)
    if usable.sum() < MIN_TAIL_THRESHOLDS:
        raise InsufficientTailSamplesError(
            f"only {int(usable.sum())} thresholds have survival in [{MIN_TAIL_COUNT / n_paths:.2g}, 0.5]"
        )
    kept, kept_survival = candidates[usable], survival[usable]
    fit = _tail_fit(kept, kept_survival)
    sigma = float(np.sqrt(np.mean(increments**2)))
    reference = _tail_fit(kept, 2.0 * stats.norm.sf(kept / sigma)).slope
    return TailReport(
        gamma=gamma,
        gap=float(grid.times[i_u] - grid.times[i_s]),
        thresholds=kept.tolist(),
        survival=kept_survival.tolist(),
        log_survival=np.log(kept_survival).tolist(),
        fitted_tail_exponent=float(fit.slope),
        stderr=float(fit.stderr),
        gaussian_reference_exponent=float(reference),
        n_paths=n_paths,
        field_id=vf.field_id,
        seed=seed,
    )


@dataclass
class ExistenceRung:
    epsilon: float
    value: float
    stderr: float


@dataclass
class ExistenceReport(Storable):
    h: float
    dim: int
    u: float
    interval: Tuple[float, float]
    rungs: List[ExistenceRung]
    growth_exponent: float
    growth_stderr: float
    bounded: bool
    n_paths: int

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rungs])

    def rows(self) -> List[dict]:
        return [vars(r) for r in self.rungs]


def default_eps_ladder(count: int = 4, start: float = 0.1) -> List[float]:
    return [start / 2**k for k in range(count)]


def existence_criterion_estimate(
    vf: VectorFieldSet,
    h: float,
    u: float,
    interval: Tuple[float, float],
    eps_ladder: Optional[Sequence[float]] = None,
    n_paths: int = 10_000,
    x0: Union[float, Sequence[float]] = 0.0,
    dim: Optional[int] = None,
    seed: int = 0,
    settings: SimulationSettings = SimulationSettings(),
    growth_tolerance: float = GROWTH_TOLERANCE,
) -> ExistenceReport:
    """eps^-d int_I P(|X_s - X_u| <= eps) ds along an eps ladder.

    Growth is the negated slope of log value against log eps; the criterion counts as bounded when that exponent
    is within 2 standard errors plus ``growth_tolerance`` of zero.
    """
    d = vf.dim
    if dim is not None and dim != d:
        raise DimensionMismatchError(f"field set has d = {d}, got dim = {dim}")
    ladder = default_eps_ladder() if eps_ladder is None else [float(e) for e in eps_ladder]
    if any(e <= 0 for e in ladder):
        raise DomainError("eps ladder must be positive")
    grid = settings.grid
    lo, hi = _snap(grid, interval[0]), _snap(grid, interval[1])
    i_u = _snap(grid, u)
    if hi <= lo:
        raise ValueError(f"interval {interval} is shorter than one grid step")
    times = grid.times

    def occupations(states: np.ndarray) -> np.ndarray:
        centers = states[:, :, i_u]
        return np.stack([ball_occupation_batch(times, states, centers, e, lo, hi) for e in ladder], axis=1)

    samples = np.concatenate(settings.chunks(vf, x0, h, n_paths, seed, occupations), axis=0)
    scale = np.array([e**d for e in ladder])
    values = samples.mean(axis=0) / scale
    errors = samples.std(axis=0, ddof=1) / math.sqrt(n_paths) / scale if n_paths > 1 else np.zeros(len(ladder))
    rungs = [ExistenceRung(e, float(v), float(se)) for e, v, se in zip(ladder, values, errors)]

    if len(ladder) >= 2 and np.all(values > 0):
        fit = stats.linregress(np.log(ladder), np.log(values))
        growth, growth_stderr = float(-fit.slope), float(fit.stderr)
    else:
        growth, growth_stderr = math.inf, math.nan
    bounded = bool(growth <= 2 * (0.0 if math.isnan(growth_stderr) else growth_stderr) + growth_tolerance)
    logger.info(f"existence criterion: growth exponent {growth:.4f} +- {growth_stderr:.4f}, bounded={bounded}")
    return ExistenceReport(
        h, d, float(times[i_u]), (float(times[lo]), float(times[hi])), rungs, growth, growth_stderr, bounded, n_paths
    )


def gaussian_pair_density_integral(
    x: float, h: float, interval: Tuple[float, float], sigma: float = 1.0, x0: float = 0.0
) -> float:
    """v(x) = int_I int_I p_{s,u}(x, x) ds du for X = x0 + sigma B with B an fBm.

    The diagonal singularity |u - s|^-h is removed by the substitution u - s = w^(1 / (1 - h)).
    """
    a, b = interval
    y = x - x0
    power = 1.0 / (1.0 - h)

    def integrand(w: float, s: float) -> float:
        r = w**power
        u = s + r
        var_s, var_u = sigma**2 * s ** (2 * h), sigma**2 * u ** (2 * h)
        cov = sigma**2 * fbm_covariance(s, u, h)
        det = var_s * var_u - cov**2
        if det <= 0 or w == 0:
            # p ~ r^-h near the diagonal; the Jacobian power * w^(power - 1) ~ r^h cancels it
            det_scaled = sigma**4 * s ** (2 * h)
            return power * math.exp(-(y**2) / (2 * var_s)) / (2 * math.pi * math.sqrt(det_scaled))
        quad = y**2 * (var_s + var_u - 2 * cov) / det
        density = math.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(det))
        return density * power * w ** (power - 1)

    half, _ = integrate.dblquad(integrand, a, b, 0.0, lambda s: (b - s) ** (1.0 - h), epsabs=1e-10, epsrel=1e-8)
    return 2.0 * half


@dataclass
class ModulusRow:
    x: float
    y: float
    distance: float
    v_x: float
    v_y: float
    difference: float
    gaussian_difference: Optional[float] = None


@dataclass
class DensityModulusReport:
    h: float
    interval: Tuple[float, float]
    rows: List[ModulusRow]
    bandwidth: float
    n_paths: int

    def differences(self) -> np.ndarray:
        return np.array([r.difference for r in self.rows])


def default_x_pairs(center: float = 0.0, widest: float = 0.5, count: int = 6) -> List[Tuple[float, float]]:
    """(center, center + g) along a halving ladder of g, ending with g = 0."""
    return [(center, center + widest / 2**k) for k in range(count)] + [(center, center)]


def smoothed_density_modulus(
    vf: VectorFieldSet,
    h: float,
    n_paths: int = 10_000,
    x_pairs: Optional[Sequence[Tuple[float, float]]] = None,
    x0: float = 0.0,
    interval: Optional[Tuple[float, float]] = None,
    seed: int = 0,
    settings: SimulationSettings = SimulationSettings(TimeGrid(0.0, 1.0, 256)),
    bandwidth: Union[float, str] = "scott",
) -> DensityModulusReport:
    """Modulus table of v(x) = int_I int_I p_{s,u}(x, x) ds du.

    Each path contributes one pair (X_S, X_U) with S, U independent uniform grid times in I; v(x) is |I|^2 times
    the 2-d Gaussian KDE of the pairs at (x, x). For the constant-coefficient field the closed-form Gaussian
    differences are reported alongside.
    """
    _scalar_only(vf)
    if not 0 < h < 0.5:
        raise DomainError(f"the pair-density integral is finite only for h in (0, 1/2), got {h}")
    grid = settings.grid
    interval = (default_cutoff(grid), grid.t_end) if interval is None else interval
    lo, hi = _snap(grid, interval[0]), _snap(grid, interval[1])
    if hi <= lo:
        raise ValueError(f"interval {interval} is shorter than one grid step")
    pairs = default_x_pairs(x0) if x_pairs is None else [tuple(p) for p in x_pairs]

    rng = substream(seed, 0, TIME_PAIR_COMPONENT)
    picks = rng.integers(lo, hi + 1, size=(n_paths, 2))
    states = settings.simulate(vf, x0, h, n_paths, seed)[:, 0, :]
    samples = np.stack([states[np.arange(n_paths), picks[:, 0]], states[np.arange(n_paths), picks[:, 1]]])
    if np.any(np.var(samples, axis=1) == 0):
        raise DegenerateSampleError("time-uniformized samples have zero variance")
    kde = stats.gaussian_kde(samples, bw_method=bandwidth)
    length = grid.times[hi] - grid.times[lo]

    def v(x: float) -> float:
        return float(length**2 * kde([[x], [x]])[0])

    closed_form = None
    if vf.field_id == "const_sigma" and not vf.has_drift:
        sigma = vf.params["sigma"]
        span = (float(grid.times[lo]), float(grid.times[hi]))
        closed_form = lambda x: gaussian_pair_density_integral(x, h, span, sigma, x0)  # noqa: E731

    rows = []
    for x, y in pairs:
        v_x, v_y = v(x), v(y)
        reference = None if closed_form is None else abs(closed_form(x) - closed_form(y))
        rows.append(ModulusRow(x, y, abs(x - y), v_x, v_y, abs(v_x - v_y), reference))
    return DensityModulusReport(
        h, (float(grid.times[lo]), float(grid.times[hi])), rows, float(np.sqrt(kde.covariance[0, 0])), n_paths
    )
