from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, TypeVar, Union

import numpy as np
from scipy import optimize, stats
from scipy.special import roots_legendre

from fbmlab import pathio
from fbmlab.defaults import SIMULATION_CHUNK_SIZE, WONG_ZAKAI_SUBSTEPS
from fbmlab.errors import BlowUpError, DimensionMismatchError, OracleUnavailableError
from fbmlab.fbm import FbmPath, Hurst, SamplingMethod, TimeGrid, hurst_value, sample_fbm, sample_fbm_paths
from fbmlab.storable import Storable
from fbmlab.vector_fields import VectorFieldSet

logger = logging.getLogger(__name__)

_Reduced = TypeVar("_Reduced")


class Scheme(Enum):
    EULER = "euler"
    MILSTEIN_1D = "milstein_1d"
    WONG_ZAKAI = "wong_zakai"


@dataclass
class SolutionPath:
    grid: TimeGrid
    x0: np.ndarray
    values: np.ndarray
    scheme: Scheme
    substeps: int = 1
    driver_seed: int = 0
    h: Optional[float] = None
    field_id: str = "custom"

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.values.shape != (self.x0.size, self.grid.n_steps + 1):
            raise ValueError(f"values shape {self.values.shape} does not match x0 and grid")

    @property
    def dim(self) -> int:
        return self.x0.size

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def header(self) -> dict:
        return {
            "kind": "solution",
            "h": self.h,
            "seed": self.driver_seed,
            "scheme": self.scheme.value,
            "substeps": self.substeps,
            "field_id": self.field_id,
            "x0": self.x0,
            "t_start": self.grid.t_start,
            "t_end": self.grid.t_end,
            "n_steps": self.grid.n_steps,
        }

    def to_csv(self, path: pathio.PathLike):
        pathio.write_path_csv(path, self.times, self.values)

    def to_binary(self, path: pathio.PathLike):
        pathio.write_binary(path, self.header(), self.values)

    @classmethod
    def from_binary(cls, path: pathio.PathLike) -> SolutionPath:
        header, values = pathio.read_binary(path)
        return cls(
            TimeGrid(header["t_start"], header["t_end"], header["n_steps"]),
            np.asarray(header["x0"]),
            values,
            Scheme(header["scheme"]),
            header["substeps"],
            header["seed"],
            header["h"],
            header["field_id"],
        )


def _check_finite(state: np.ndarray, step: int, path_offset: int):
    if not np.all(np.isfinite(state)):
        bad = int(np.argmax(~np.all(np.isfinite(state), axis=0)))
        raise BlowUpError(step, path_offset + bad)


def _integrate_batch(
    vf: VectorFieldSet,
    x0: np.ndarray,
    increments: np.ndarray,
    dt: float,
    scheme: Scheme,
    substeps: int,
    path_offset: int = 0,
) -> np.ndarray:
    """increments (d, m, n) -> states (d, m, n + 1)."""
    d, m, n = increments.shape
    state = np.repeat(x0[:, None], m, axis=1)
    out = np.empty((d, m, n + 1))
    out[:, :, 0] = state

    def velocity(x: np.ndarray, db: np.ndarray) -> np.ndarray:
        v = np.einsum("ijm,jm->im", vf.diffusion_at(x), db)
        return v + vf.drift_at(x) * dt if vf.has_drift else v

    h = 1.0 / substeps
    for k in range(n):
        db = increments[:, :, k]
        if scheme is Scheme.EULER:
            state = state + velocity(state, db)
        elif scheme is Scheme.MILSTEIN_1D:
            sigma = vf.diffusion_at(state)[0, 0]
            dsigma = vf.diffusion_jacobians_at(state)[0][0, 0]
            state = state + velocity(state, db) + 0.5 * sigma * dsigma * db**2
        else:
            for _ in range(substeps):
                k1 = velocity(state, db)
                k2 = velocity(state + 0.5 * h * k1, db)
                k3 = velocity(state + 0.5 * h * k2, db)
                k4 = velocity(state + h * k3, db)
                state = state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(state, k + 1, path_offset)
        out[:, :, k + 1] = state
    return out


def _integrate_scalar(vf: VectorFieldSet, x0: float, increments: np.ndarray, dt: float, scheme: Scheme, substeps: int):
    """Single one-dimensional path with float arithmetic; same recursions as ``_integrate_batch``."""
    drift, sigma, dsigma = vf.scalar_form
    out = np.empty(increments.size + 1)
    x = out[0] = float(x0)
    h = 1.0 / substeps

    def velocity(y: float, db: float) -> float:
        v = sigma(y) * db
        return v + drift(y) * dt if drift is not None else v

    for k, db in enumerate(increments.tolist()):
        if scheme is Scheme.EULER:
            x = x + velocity(x, db)
        elif scheme is Scheme.MILSTEIN_1D:
            x = x + velocity(x, db) + 0.5 * sigma(x) * dsigma(x) * db * db
        else:
            for _ in range(substeps):
                k1 = velocity(x, db)
                k2 = velocity(x + 0.5 * h * k1, db)
                k3 = velocity(x + 0.5 * h * k2, db)
                k4 = velocity(x + h * k3, db)
                x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(x):
            raise BlowUpError(k + 1)
        out[k + 1] = x
    return out


def _check_scheme(vf: VectorFieldSet, scheme: Scheme, substeps: int):
    if scheme is Scheme.MILSTEIN_1D and vf.dim != 1:
        raise DimensionMismatchError(f"milstein_1d requires d = 1, got d = {vf.dim}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")


def solve_sde(
    vf: VectorFieldSet,
    x0: Union[float, Sequence[float]],
    driver: FbmPath,
    scheme: Scheme = Scheme.WONG_ZAKAI,
    substeps: Optional[int] = None,
) -> SolutionPath:
    """Geometric (Stratonovich-type) solution of X = x0 + int V_0(X) dt + sum_i int V_i(X) dB^i on the driver's grid.

    wong_zakai solves, on every cell, the ODE driven by the linear interpolation of B with ``substeps`` RK4 steps.
    """
    scheme = Scheme(scheme)
    if substeps is None:
        substeps = WONG_ZAKAI_SUBSTEPS if scheme is Scheme.WONG_ZAKAI else 1
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if driver.dim != vf.dim or x0.size != vf.dim:
        raise DimensionMismatchError(f"field dim {vf.dim}, driver dim {driver.dim}, x0 size {x0.size}")
    _check_scheme(vf, scheme, substeps)
    increments = np.diff(driver.values, axis=1)
    dt = driver.grid.step
    if vf.scalar_form is not None:
        values = _integrate_scalar(vf, x0[0], increments[0], dt, scheme, substeps)[None, :]
    else:
        values = _integrate_batch(vf, x0, increments[:, None, :], dt, scheme, substeps)[:, 0, :]
    return SolutionPath(driver.grid, x0, values, scheme, substeps, driver.seed, driver.h, vf.field_id)


def simulate_chunks(
    vf: VectorFieldSet,
    x0: Union[float, Sequence[float]],
    h: Hurst,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    reduce: Callable[[np.ndarray], _Reduced],
    scheme: Scheme = Scheme.WONG_ZAKAI,
    substeps: Optional[int] = None,
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE,
    threads: int = 1,
    chunk_size: int = SIMULATION_CHUNK_SIZE,
) -> List[_Reduced]:
    """Monte Carlo solutions in fixed blocks of ``chunk_size`` replications of ``seed``.

    ``reduce`` maps a block of states (m, d, n + 1) to whatever the caller keeps; the result is the list of reduced
    blocks in replication order. Blocks never depend on ``threads``, so results are identical for any thread count.
    """
    scheme = Scheme(scheme)
    if substeps is None:
        substeps = WONG_ZAKAI_SUBSTEPS if scheme is Scheme.WONG_ZAKAI else 1
    _check_scheme(vf, scheme, substeps)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != vf.dim:
        raise DimensionMismatchError(f"field dim {vf.dim}, x0 size {x0.size}")
    starts = list(range(0, n_paths, chunk_size))

    def run(start: int) -> _Reduced:
        replications = range(start, min(start + chunk_size, n_paths))
        driver = sample_fbm_paths(h, grid, vf.dim, seed, replications, method)
        increments = np.diff(driver, axis=2).transpose(1, 0, 2)
        states = _integrate_batch(vf, x0, increments, grid.step, scheme, substeps, path_offset=start)
        return reduce(states.transpose(1, 0, 2))

    if threads <= 1 or len(starts) == 1:
        return [run(start) for start in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, starts))


def simulate_values(
    vf: VectorFieldSet,
    x0: Union[float, Sequence[float]],
    h: Hurst,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    indices: Optional[Sequence[int]] = None,
    **kwargs,
) -> np.ndarray:
    """States of shape (n_paths, d, len(indices)) (all grid points when ``indices`` is None)."""
    picks = slice(None) if indices is None else np.asarray(indices)
    blocks = simulate_chunks(vf, x0, h, grid, n_paths, seed, lambda states: states[:, :, picks], **kwargs)
    return np.concatenate(blocks, axis=0)


@dataclass
class SimulationSettings:
    """How Monte Carlo estimators simulate their solution samples."""

    grid: TimeGrid = TimeGrid(0.0, 1.0, 1024)
    scheme: Scheme = Scheme.WONG_ZAKAI
    substeps: Optional[int] = None
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE
    threads: int = 1
    chunk_size: int = SIMULATION_CHUNK_SIZE

    def simulate(
        self,
        vf: VectorFieldSet,
        x0: Union[float, Sequence[float]],
        h: Hurst,
        n_paths: int,
        seed: int,
        indices: Optional[Sequence[int]] = None,
    ) -> np.ndarray:
        return simulate_values(
            vf,
            x0,
            h,
            self.grid,
            n_paths,
            seed,
            indices,
            scheme=self.scheme,
            substeps=self.substeps,
            method=self.method,
            threads=self.threads,
            chunk_size=self.chunk_size,
        )

    def chunks(self, vf, x0, h: Hurst, n_paths: int, seed: int, reduce: Callable[[np.ndarray], _Reduced]):
        return simulate_chunks(
            vf,
            x0,
            h,
            self.grid,
            n_paths,
            seed,
            reduce,
            scheme=self.scheme,
            substeps=self.substeps,
            method=self.method,
            threads=self.threads,
            chunk_size=self.chunk_size,
        )


@dataclass
class EllipticityReport(Storable):
    min_singular_value: float
    elliptic: bool
    threshold: float
    argmin_point: List[float]
    n_samples: int


def check_ellipticity(vf: VectorFieldSet, sample_points, threshold: float = 0.0) -> EllipticityReport:
    """Smallest singular value of [V_1 ... V_d] over the sample points; elliptic iff it exceeds ``threshold``."""
    points = np.asarray(sample_points, dtype=float).reshape(-1, vf.dim)
    if points.shape[0] == 0:
        raise ValueError("ellipticity check needs at least one sample point")
    matrices = vf.diffusion_at(points.T).transpose(2, 0, 1)
    singular = np.linalg.svd(matrices, compute_uv=False).min(axis=1)
    worst = int(np.argmin(singular))
    smallest = float(singular[worst])
    return EllipticityReport(smallest, smallest > threshold, threshold, points[worst].tolist(), points.shape[0])


class ScaleMap:
    """phi(x) = int_origin^x du / sigma(u) for a positive scalar sigma, with its inverse.

    phi uses composite Gauss-Legendre quadrature (panels no longer than ``panel``); the inverse starts from
    interpolation in a tabulated phi and finishes with Newton's method (phi' = 1 / sigma).
    """

    def __init__(self, sigma: Callable[[np.ndarray], np.ndarray], origin: float = 0.0, panel: float = 0.25, order=20):
        self.sigma = sigma
        self.origin = float(origin)
        self.panel = panel
        self.nodes, self.weights = roots_legendre(order)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        length = flat - self.origin
        panels = max(1, int(np.ceil(np.max(np.abs(length), initial=0.0) / self.panel)))
        width = length / panels
        starts = self.origin + np.arange(panels)[:, None] * width[None, :]
        points = starts[:, :, None] + 0.5 * width[None, :, None] * (self.nodes + 1.0)
        integrand = 1.0 / self.sigma(points.ravel()).reshape(points.shape)
        total = 0.5 * width * np.einsum("pmk,k->m", integrand, self.weights)
        return total.reshape(x.shape)

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        radius = 1.0
        while True:
            table_x = np.linspace(self.origin - radius, self.origin + radius, 2049)
            table_y = self(table_x)
            if table_y[0] <= flat.min() and table_y[-1] >= flat.max():
                break
            radius *= 2.0
        guess = np.interp(flat, table_y, table_x)
        root = optimize.newton(
            lambda x: self(x) - flat,
            guess,
            fprime=lambda x: 1.0 / self.sigma(x),
            tol=1e-13,
            maxiter=100,
        )
        return np.asarray(root).reshape(y.shape)


def _scalar_sigma(vf: VectorFieldSet) -> Callable[[np.ndarray], np.ndarray]:
    if vf.dim != 1:
        raise OracleUnavailableError(f"closed-form oracle needs d = 1, got d = {vf.dim}")
    if vf.has_drift:
        raise OracleUnavailableError("closed-form oracle needs V_0 = 0")
    diffusion = vf.diffusion[0]
    return lambda u: diffusion.value(np.asarray(u, dtype=float).reshape(1, -1))[0]


def doss_sussmann_solution(vf: VectorFieldSet, x0: float, driver: FbmPath) -> np.ndarray:
    """X_t = phi^{-1}(phi(x0) + B_t) with phi' = 1 / V_1, on the driver's grid."""
    scale_map = ScaleMap(_scalar_sigma(vf), origin=float(np.atleast_1d(x0)[0]))
    return scale_map.inverse(driver.values[0])


@dataclass
class ConvergenceRung:
    n_steps: int
    step: float
    sup_error: float


@dataclass
class ConvergenceTable(Storable):
    scheme: Scheme
    h: float
    rungs: List[ConvergenceRung] = field(default_factory=list)
    fitted_order: float = math.nan
    fitted_order_stderr: float = math.nan

    def errors(self) -> np.ndarray:
        return np.array([r.sup_error for r in self.rungs])

    def non_increasing(self, noise: float = 0.1) -> bool:
        errors = self.errors()
        return bool(np.all(errors[1:] <= errors[:-1] * (1 + noise)))


def convergence_study(
    vf: VectorFieldSet,
    x0: float,
    h: Hurst,
    scheme: Scheme,
    step_ladder: Sequence[int],
    seed: int = 0,
    t_end: float = 1.0,
    substeps: Optional[int] = None,
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE,
) -> ConvergenceTable:
    """Sup-error against the Doss-Sussmann oracle on a common driver, sampled at the finest resolution of the ladder
    and subsampled for coarser rungs. The order is the slope of log error against log step."""
    _scalar_sigma(vf)
    scheme = Scheme(scheme)
    ladder = sorted(int(n) for n in step_ladder)
    finest = ladder[-1]
    if any(finest % n for n in ladder):
        raise ValueError(f"every rung must divide the finest resolution {finest}: {ladder}")
    fine = sample_fbm(h, TimeGrid(0.0, t_end, finest), 1, seed, method)
    oracle = doss_sussmann_solution(vf, x0, fine)
    table = ConvergenceTable(scheme, hurst_value(h))
    for n in ladder:
        factor = finest // n
        driver = FbmPath(fine.grid.coarsen(factor), 1, fine.values[:, ::factor], seed, fine.method, fine.h)
        solution = solve_sde(vf, x0, driver, scheme, substeps)
        error = float(np.max(np.abs(solution.values[0] - oracle[::factor])))
        table.rungs.append(ConvergenceRung(n, driver.grid.step, error))
        logger.debug(f"{scheme.value} n={n}: sup error {error:.3e}")
    errors, steps = table.errors(), np.array([r.step for r in table.rungs])
    usable = errors > 1e-14
    if usable.sum() >= 2:
        fit = stats.linregress(np.log(steps[usable]), np.log(errors[usable]))
        table.fitted_order, table.fitted_order_stderr = float(fit.slope), float(fit.stderr)
    return table
