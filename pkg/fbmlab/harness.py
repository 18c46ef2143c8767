"""End-to-end experiments: one pipeline per experiment kind, replicated over paths.

Path j of an experiment uses the seed ``child_seeds(master_seed, n_paths)[j]`` (see fbmlab.seeds). Monte Carlo
kinds that simulate in batches use ``master_seed`` with replication indices instead. Either way the per-path
results do not depend on the number of worker threads.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from tqdm import tqdm

from fbmlab import __version__
from fbmlab.config import ExperimentConfig, ExperimentKind, config_record, load_manifest, parse_config
from fbmlab.density import existence_criterion_estimate, sup_density_scaling, tail_decay_check
from fbmlab.errors import ConfigError, FbmLabError, ReplicationError
from fbmlab.fbm import TimeGrid, increment_covariance_check, sample_fbm
from fbmlab.holder import (
    HolderEstimate,
    estimate_holder_space,
    estimate_holder_time,
    estimate_path_holder,
    lower_bound_check,
    planted_time_field,
    pool_estimates,
)
from fbmlab.local_time import LocalTimeField, default_epsilon, local_time_field
from fbmlab.reports import ExperimentReport, append_experiment_log, flatten, write_summary
from fbmlab.sde import SimulationSettings, SolutionPath, convergence_study, solve_sde
from fbmlab.seeds import child_seeds
from fbmlab.vector_fields import VectorFieldSet, build_vector_fields

logger = logging.getLogger(__name__)

_Result = TypeVar("_Result")

IDENTITY_TOLERANCE = 1e-2
HOLDER_TOLERANCE = 0.1
PATH_HOLDER_TOLERANCE = 0.05
EXISTENCE_VALUE_TOLERANCE = 1e-9
CONVERGENCE_ERROR_LIMIT = 1e-2
CONVERGENCE_NOISE = 0.1
DEFAULT_STEP_LADDER = [2**k for k in range(10, 15)]
# states at which the declared field bounds are verified before a run
BOUND_CHECK_STATES = np.linspace(-10.0, 10.0, 401)

Outcome = Tuple[List[Dict[str, Any]], Dict[str, Any], Dict[str, bool]]


@dataclass
class RunContext:
    config: ExperimentConfig
    seeds: List[int]
    threads: int = 1
    progress: bool = False
    log_dir: Optional[Path] = None

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.config.t_end, self.config.n_steps)

    def vector_fields(self) -> VectorFieldSet:
        return build_vector_fields(self.config.field_id, self.config.d, **self.config.field_params)

    def x0(self) -> np.ndarray:
        x0 = np.asarray(self.config.x0, dtype=float)
        return np.repeat(x0, self.config.d) if x0.size == 1 else x0

    def settings(self) -> SimulationSettings:
        return SimulationSettings(
            self.grid, self.config.scheme, self.config.substeps, self.config.sampling_method, self.threads
        )

    def replicate(self, task: Callable[[int, int], _Result]) -> List[_Result]:
        """task(path_index, seed) over all paths, in path order."""

        def run(j: int) -> _Result:
            try:
                return task(j, self.seeds[j])
            except (FbmLabError, ArithmeticError) as e:
                raise ReplicationError(j, e) from e

        indices = range(len(self.seeds))
        label = self.config.label
        if self.threads <= 1:
            return [run(j) for j in tqdm(indices, desc=label, disable=not self.progress)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(tqdm(pool.map(run, indices), total=len(indices), desc=label, disable=not self.progress))

    def solution(self, seed: int) -> SolutionPath:
        config = self.config
        driver = sample_fbm(config.h, self.grid, config.d, seed, config.sampling_method)
        return solve_sde(self.vector_fields(), self.x0(), driver, config.scheme, config.substeps)

    def local_time(self, path: SolutionPath) -> LocalTimeField:
        config = self.config
        epsilon = config.epsilon or default_epsilon(config.h, self.grid.step, config.epsilon_factor)
        return local_time_field(path, config.cutoff, epsilon=epsilon)

    def log_estimates(self, records: List[Dict[str, Any]], estimates: Sequence[HolderEstimate]):
        """Appends one experiment-log row per estimate when the run writes its outputs."""
        if self.log_dir is None:
            return
        config = self.config
        identity = {
            "name": config.label,
            "kind": config.kind.value,
            "h": config.h,
            "field_id": config.field_id,
            "master_seed": config.master_seed,
            "version": __version__,
        }
        rows = [
            {
                **identity,
                **record,
                "mode": estimate.mode.value,
                "statistic": estimate.statistic.value,
                "delta_min": estimate.delta_range[0],
                "delta_max": estimate.delta_range[1],
                "n_scales": estimate.n_scales,
                "resolution_capped": estimate.resolution_capped,
            }
            for record, estimate in zip(records, estimates)
        ]
        append_experiment_log(self.log_dir, rows)


def _expected(config: ExperimentConfig, default: float) -> float:
    return default if config.expected is None else config.expected


def _tolerance(config: ExperimentConfig, default: float) -> float:
    return default if config.tolerance is None else config.tolerance


def _fbm_validate(ctx: RunContext) -> Outcome:
    config = ctx.config
    paths = ctx.replicate(lambda j, seed: sample_fbm(config.h, ctx.grid, config.d, seed, config.method))
    report = increment_covariance_check(paths)
    per_path = [
        {"path": j, "seed": p.seed, "increment_variance": float(np.mean(np.diff(p.values, axis=1) ** 2))}
        for j, p in enumerate(paths)
    ]
    return per_path, report.summary(), {"covariance_within_z_limit": report.passed}


def _sde_converge(ctx: RunContext) -> Outcome:
    config = ctx.config
    ladder = config.step_ladder or DEFAULT_STEP_LADDER
    x0 = float(ctx.x0()[0])

    def task(j: int, seed: int) -> Dict[str, Any]:
        table = convergence_study(
            ctx.vector_fields(), x0, config.h, config.scheme, ladder, seed, config.t_end, config.substeps, config.method
        )
        record = {"path": j, "seed": seed, "fitted_order": table.fitted_order}
        record.update({f"error_n{r.n_steps}": r.sup_error for r in table.rungs})
        record["non_increasing"] = table.non_increasing(CONVERGENCE_NOISE)
        record["finest_error"] = table.rungs[-1].sup_error
        return record

    per_path = ctx.replicate(task)
    limit = _tolerance(config, CONVERGENCE_ERROR_LIMIT)
    finest = [r["finest_error"] for r in per_path]
    orders = [r["fitted_order"] for r in per_path]
    pooled = {"median_fitted_order": float(np.nanmedian(orders)), "max_finest_error": max(finest)}
    acceptance = {
        "errors_non_increasing": all(r["non_increasing"] for r in per_path),
        "finest_error_below_limit": max(finest) < limit,
    }
    return per_path, pooled, acceptance


def _localtime_identity(ctx: RunContext) -> Outcome:
    def task(j: int, seed: int) -> Dict[str, Any]:
        field_ = ctx.local_time(ctx.solution(seed))
        return {
            "path": j,
            "seed": seed,
            "epsilon": field_.epsilon,
            "n_t": field_.t_grid.size,
            "n_x": field_.x_grid.size,
            "max_identity_error": float(np.max(field_.identity_errors())),
            "nondecreasing": field_.is_nondecreasing_in_t(),
        }

    per_path = ctx.replicate(task)
    tolerance = _tolerance(ctx.config, IDENTITY_TOLERANCE)
    worst = max(r["max_identity_error"] for r in per_path)
    acceptance = {
        "occupation_identity": worst < tolerance,
        "nondecreasing_in_t": all(r["nondecreasing"] for r in per_path),
    }
    return per_path, {"max_identity_error": worst}, acceptance


def _holder_time(ctx: RunContext) -> Outcome:
    config = ctx.config

    def task(j: int, seed: int):
        path = ctx.solution(seed)
        field_ = ctx.local_time(path)
        estimate = estimate_holder_time(field_, config.delta_ladder, config.h, config.statistic, config.two_sided)
        bound = lower_bound_check(path, field_, float(field_.t_grid[0]))
        record = {
            "path": j,
            "seed": seed,
            "exponent": estimate.exponent,
            "slope_stderr": estimate.slope_stderr,
            "r_squared": estimate.r_squared,
            "delta_min": estimate.delta_range[0],
            "delta_max": estimate.delta_range[1],
            "n_scales": estimate.n_scales,
            "lower_bound_passed": bound.passed,
            "lower_bound_max_ratio": bound.max_ratio,
            "max_identity_error": float(np.max(field_.identity_errors())),
        }
        return record, estimate

    results = ctx.replicate(task)
    per_path = [record for record, _ in results]
    estimates = [estimate for _, estimate in results]
    ctx.log_estimates(per_path, estimates)
    pooled = pool_estimates(estimates, seed=config.master_seed)
    expected = _expected(config, 1.0 - config.h)
    tolerance = _tolerance(config, HOLDER_TOLERANCE)
    acceptance = {
        "pooled_exponent": abs(pooled.median - expected) <= tolerance,
        "lower_bound_inequality": all(r["lower_bound_passed"] for r in per_path),
        "occupation_identity": all(r["max_identity_error"] < IDENTITY_TOLERANCE for r in per_path),
    }
    return per_path, {**pooled.to_record(), "expected": expected}, acceptance


def _holder_space(ctx: RunContext) -> Outcome:
    config = ctx.config

    def task(j: int, seed: int):
        estimate = estimate_holder_space(
            ctx.local_time(ctx.solution(seed)), config.delta_ladder, config.statistic, config.two_sided
        )
        record = {
            "path": j,
            "seed": seed,
            "exponent": estimate.exponent,
            "slope_stderr": estimate.slope_stderr,
            "r_squared": estimate.r_squared,
            "resolution_capped": estimate.resolution_capped,
        }
        return record, estimate

    results = ctx.replicate(task)
    per_path = [record for record, _ in results]
    estimates = [estimate for _, estimate in results]
    ctx.log_estimates(per_path, estimates)
    pooled = pool_estimates(estimates, seed=config.master_seed)
    # one-sided diagnostic: only checked when an expected exponent is declared
    acceptance = {}
    if config.expected is not None:
        lowest = config.expected - _tolerance(config, HOLDER_TOLERANCE)
        acceptance["pooled_exponent_lower_side"] = pooled.median >= lowest
    return per_path, pooled.to_record(), acceptance


def _path_holder(ctx: RunContext) -> Outcome:
    config = ctx.config

    def task(j: int, seed: int):
        estimate = estimate_path_holder(ctx.solution(seed), config.delta_ladder, config.statistic, config.two_sided)
        record = {
            "path": j,
            "seed": seed,
            "exponent": estimate.exponent,
            "slope_stderr": estimate.slope_stderr,
            "r_squared": estimate.r_squared,
            "resolution_capped": estimate.resolution_capped,
        }
        return record, estimate

    results = ctx.replicate(task)
    per_path = [record for record, _ in results]
    estimates = [estimate for _, estimate in results]
    ctx.log_estimates(per_path, estimates)
    pooled = pool_estimates(estimates, seed=config.master_seed)
    expected = _expected(config, config.h)
    acceptance = {"pooled_exponent": abs(pooled.median - expected) <= _tolerance(config, PATH_HOLDER_TOLERANCE)}
    return per_path, {**pooled.to_record(), "expected": expected}, acceptance


def _density_scaling(ctx: RunContext) -> Outcome:
    config = ctx.config
    report = sup_density_scaling(
        ctx.vector_fields(),
        config.h,
        float(ctx.x0()[0]),
        config.gap_ladder,
        config.n_paths,
        config.cutoff,
        config.master_seed,
        ctx.settings(),
    )
    tolerance = _tolerance(config, 0.05)
    pooled = {
        "fitted_slope": report.fitted_slope,
        "theoretical_slope": report.theoretical_slope,
        "stderr": report.stderr,
    }
    return report.rows(), pooled, {"slope_matches": report.passed(tolerance)}


def _tail_check(ctx: RunContext) -> Outcome:
    config = ctx.config
    report = tail_decay_check(
        ctx.vector_fields(),
        config.h,
        config.gamma,
        config.gap,
        config.thresholds,
        config.n_paths,
        float(ctx.x0()[0]),
        config.cutoff,
        config.master_seed,
        ctx.settings(),
    )
    rows = [
        {"threshold": r, "survival": p, "log_survival": lp}
        for r, p, lp in zip(report.thresholds, report.survival, report.log_survival)
    ]
    pooled = {
        "gamma": report.gamma,
        "fitted_tail_exponent": report.fitted_tail_exponent,
        "stderr": report.stderr,
        "bound": report.bound,
        "gaussian_reference_exponent": report.gaussian_reference_exponent,
    }
    return rows, pooled, {"tail_at_least_bound": report.passed(_tolerance(config, 0.1))}


def _existence(ctx: RunContext) -> Outcome:
    config = ctx.config
    interval = tuple(config.interval) if config.interval else (config.cutoff, config.t_end)
    u = 0.5 * (interval[0] + interval[1]) if config.u is None else config.u
    report = existence_criterion_estimate(
        ctx.vector_fields(),
        config.h,
        u,
        interval,
        config.eps_ladder,
        config.n_paths,
        ctx.x0(),
        config.d,
        config.master_seed,
        ctx.settings(),
    )
    expected_bounded = config.d * config.h < 1
    pooled = {
        "growth_exponent": report.growth_exponent,
        "growth_stderr": report.growth_stderr,
        "bounded": report.bounded,
        "expected_bounded": expected_bounded,
    }
    acceptance = {"boundedness_as_expected": report.bounded == expected_bounded}
    if config.expected is not None:
        # e.g. 2 / sigma on every rung for the linear driver
        tolerance = _tolerance(config, EXISTENCE_VALUE_TOLERANCE)
        acceptance["values_match_expected"] = bool(np.all(np.abs(report.values() - config.expected) <= tolerance))
    return report.rows(), pooled, acceptance


def _holder_calibration(ctx: RunContext) -> Outcome:
    config = ctx.config
    t_grid = np.linspace(config.cutoff, config.t_end, config.n_steps + 1)
    x_grid = np.linspace(-2.0, 2.0, 41)

    def task(j: int, seed: int):
        return [
            estimate_holder_time(planted_time_field(beta, t_grid, x_grid, seed), statistic=config.statistic)
            for beta in config.betas
        ]

    results = ctx.replicate(task)
    per_path = []
    for j, (seed, estimates) in enumerate(zip(ctx.seeds, results)):
        record = {"path": j, "seed": seed}
        record.update({f"exponent_beta{beta:g}": e.exponent for beta, e in zip(config.betas, estimates)})
        per_path.append(record)
    tolerance = _tolerance(config, HOLDER_TOLERANCE)
    pooled, acceptance = {}, {}
    for i, beta in enumerate(config.betas):
        median = pool_estimates([estimates[i] for estimates in results], seed=config.master_seed).median
        pooled[f"median_beta{beta:g}"] = median
        acceptance[f"recovers_beta{beta:g}"] = abs(median - beta) <= tolerance
    return per_path, pooled, acceptance


PIPELINES: Dict[ExperimentKind, Callable[[RunContext], Outcome]] = {
    ExperimentKind.FBM_VALIDATE: _fbm_validate,
    ExperimentKind.SDE_CONVERGE: _sde_converge,
    ExperimentKind.LOCALTIME_IDENTITY: _localtime_identity,
    ExperimentKind.HOLDER_TIME: _holder_time,
    ExperimentKind.HOLDER_SPACE: _holder_space,
    ExperimentKind.DENSITY_SCALING: _density_scaling,
    ExperimentKind.TAIL_CHECK: _tail_check,
    ExperimentKind.EXISTENCE: _existence,
    ExperimentKind.HOLDER_CALIBRATION: _holder_calibration,
    ExperimentKind.PATH_HOLDER: _path_holder,
}

# kinds that simulate in batches keyed by master_seed and replication index
BATCHED_KINDS = (ExperimentKind.DENSITY_SCALING, ExperimentKind.TAIL_CHECK, ExperimentKind.EXISTENCE)


def run_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> ExperimentReport:
    """Runs the pipeline for ``config.kind``; writes report.json and per_path.csv under ``out_dir`` when given.

    Hoelder kinds also append their per-path estimates to the experiment log (experiments.csv) in ``out_dir``.
    """
    started = time.perf_counter()
    batched = config.kind in BATCHED_KINDS
    seeds = [config.master_seed] if batched else child_seeds(config.master_seed, config.n_paths)
    ctx = RunContext(config, seeds, threads, progress, None if out_dir is None else Path(out_dir))
    ctx.vector_fields().verify_bounds(np.tile(BOUND_CHECK_STATES, (config.d, 1)))
    logger.info(f"Running {config.label} ({config.kind.value}), {config.n_paths} paths, {threads} threads")
    per_path, pooled, acceptance = PIPELINES[config.kind](ctx)
    report = ExperimentReport(
        kind=config.kind.value,
        config=config_record(config),
        version=__version__,
        seeds=seeds,
        per_path=per_path,
        pooled=pooled,
        acceptance=acceptance,
        passed=all(acceptance.values()),
        wall_clock=time.perf_counter() - started,
    )
    report = ExperimentReport.from_record(report.to_record())
    logger.info(f"{config.label}: {'pass' if report.passed else 'FAIL'} {acceptance} in {report.wall_clock:.1f}s")
    if out_dir is not None:
        report.write(out_dir)
    return report


def replay(
    report_path: Union[str, Path],
    threads: int = 1,
    overrides: Optional[Dict[str, Any]] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """Re-runs the config embedded in a report. Configs are immutable on replay: any override is rejected."""
    if overrides:
        raise ConfigError([f"{key}: configs are immutable on replay" for key in overrides])
    original = ExperimentReport.read(report_path)
    if original.version != __version__:
        logger.warning(f"Report was produced by fbmlab {original.version}, replaying with {__version__}")
    config = parse_config(original.config)
    report = run_experiment(config, threads, out_dir)
    if report.seeds != original.seeds:
        logger.warning("Replayed seeds differ from the recorded ones")
    return report


@dataclass
class SuiteResult:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    reports: Dict[str, ExperimentReport] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if all(row["status"] == "pass" for row in self.rows) else 1


def suite(
    manifest: Union[str, Path, Sequence[Tuple[str, Dict[str, Any]]]],
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> SuiteResult:
    """Runs every manifest entry in order; an invalid or failing entry is recorded and the rest still run."""
    entries = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    result = SuiteResult()
    for name, mapping in entries:
        row = {"name": name, "kind": mapping.get("kind", ""), "status": "pass", "message": ""}
        try:
            config = parse_config({k: v for k, v in mapping.items() if k != "name"} | {"name": name})
            target = None if out_dir is None else Path(out_dir) / name
            report = run_experiment(config, threads, target, progress)
            result.reports[name] = report
            row.update(flatten("", {"pooled": report.pooled}))
            if not report.passed:
                row["status"] = "fail"
                row["message"] = ", ".join(key for key, ok in report.acceptance.items() if not ok)
        except ConfigError as e:
            row.update(status="invalid", message=str(e))
        except FbmLabError as e:
            row.update(status="error", message=str(e))
        logger.info(f"suite: {name} -> {row['status']}")
        result.rows.append(row)
    if out_dir is not None:
        write_summary(out_dir, result.rows)
    return result
