import math

import numpy as np
import pytest
from scipy import integrate, stats

from fbmlab.density import (
    ExistenceReport,
    default_gap_ladder,
    default_x_pairs,
    existence_criterion_estimate,
    gaussian_pair_density_integral,
    gaussian_sup_density,
    kde_increment_density,
    smoothed_density_modulus,
    sup_density_scaling,
    tail_decay_check,
)
from fbmlab.errors import (
    DegenerateSampleError,
    DimensionMismatchError,
    DomainError,
    InsufficientSamplesError,
    InsufficientTailSamplesError,
)
from fbmlab.fbm import SamplingMethod, TimeGrid
from fbmlab.sde import Scheme, SimulationSettings
from fbmlab.seeds import substream
from fbmlab.vector_fields import const_sigma, two_plus_sin

ADDITIVE = SimulationSettings(TimeGrid(0.0, 1.0, 256), Scheme.EULER)
LINEAR = SimulationSettings(TimeGrid(0.0, 1.0, 1000), Scheme.EULER, method=SamplingMethod.LINEAR)


def test_kde_of_standard_normal():
    samples = substream(0).standard_normal(100_000)
    estimate = kde_increment_density(samples, grid=np.linspace(-4.0, 4.0, 801))
    assert np.max(np.abs(estimate.density - stats.norm.pdf(estimate.grid))) < 0.02
    assert estimate.bandwidth == pytest.approx(1.06 * 100_000 ** (-0.2), rel=0.05)
    assert estimate.n_samples == 100_000


def test_kde_is_normalized():
    samples = substream(1).exponential(size=5000)
    estimate = kde_increment_density(samples)
    assert estimate.integral == pytest.approx(1.0, abs=0.01)
    assert np.all(estimate.density >= 0)


def test_kde_mirror_symmetry():
    samples = substream(2).gamma(2.0, size=3000)
    grid = np.linspace(-5.0, 5.0, 1001)
    forward = kde_increment_density(samples, 0.2, grid)
    mirrored = kde_increment_density(-samples, 0.2, -grid)
    np.testing.assert_allclose(mirrored.density, forward.density, rtol=1e-10, atol=1e-15)


def test_kde_fixed_bandwidth():
    samples = substream(3).standard_normal(2000)
    assert kde_increment_density(samples, 0.3).bandwidth == pytest.approx(0.3)
    with pytest.raises(DomainError):
        kde_increment_density(samples, -0.3)


def test_kde_rejects_bad_samples():
    with pytest.raises(InsufficientSamplesError):
        kde_increment_density(np.arange(999.0))
    with pytest.raises(DegenerateSampleError):
        kde_increment_density(np.ones(5000))


def test_gaussian_sup_density():
    assert gaussian_sup_density(0.25, 0.5) == pytest.approx(1.0 / math.sqrt(2 * math.pi * 0.25))
    assert gaussian_sup_density(1.0, 0.3, sigma=2.0) == pytest.approx(1.0 / (2.0 * math.sqrt(2 * math.pi)))


def test_default_gap_ladder():
    grid = TimeGrid(0.0, 1.0, 256)
    gaps = default_gap_ladder(grid, 0.1)
    assert gaps[0] == pytest.approx(4 / 256)
    assert all(later == pytest.approx(2 * earlier) for earlier, later in zip(gaps, gaps[1:]))
    assert 0.1 + gaps[-1] <= 1.0


@pytest.mark.parametrize("h", [0.5, 0.3])
def test_additive_density_scaling(h):
    report = sup_density_scaling(const_sigma(), h, 0.0, n_paths=10_000, settings=ADDITIVE)
    assert report.theoretical_slope == -h
    assert (report.field_id, report.seed) == ("const_sigma", 0)
    assert report.passed()
    assert math.log10(report.gap_lengths[-1] / report.gap_lengths[0]) >= 1.5
    assert len(report.rows()) == len(report.gaps)
    assert len(report.sensitivity[0]) == 3


def test_density_scaling_needs_wide_gaps():
    with pytest.raises(ValueError):
        sup_density_scaling(const_sigma(), 0.3, 0.0, [0.1, 0.2, 0.4], n_paths=2000, settings=ADDITIVE)


def test_density_estimators_are_one_dimensional():
    with pytest.raises(DimensionMismatchError):
        sup_density_scaling(const_sigma(2), 0.3, 0.0, settings=ADDITIVE)
    with pytest.raises(DimensionMismatchError):
        tail_decay_check(const_sigma(2), 0.3, settings=ADDITIVE)


def test_brownian_tail_is_gaussian():
    report = tail_decay_check(const_sigma(), 0.5, 0.4, n_paths=100_000, settings=ADDITIVE)
    assert report.fitted_tail_exponent == pytest.approx(report.gaussian_reference_exponent, abs=0.1)
    assert report.passed()
    assert report.bound == pytest.approx(0.8)
    assert report.gap == pytest.approx(0.5)
    assert all(0.0 < p <= 0.5 for p in report.survival)


@pytest.mark.slow
def test_fbm_tail_meets_the_bound():
    report = tail_decay_check(const_sigma(), 0.3, 0.25, n_paths=100_000, seed=9, settings=ADDITIVE)
    assert report.passed()
    assert report.fitted_tail_exponent >= 0.5 - 0.1
    assert (report.field_id, report.seed) == ("const_sigma", 9)


def test_tail_needs_thresholds_in_the_tail():
    with pytest.raises(InsufficientTailSamplesError):
        tail_decay_check(const_sigma(), 0.5, 0.4, thresholds=[0.01, 0.02, 0.03], n_paths=5000, settings=ADDITIVE)
    with pytest.raises(DomainError):
        tail_decay_check(const_sigma(), 0.3, 0.3, n_paths=5000, settings=ADDITIVE)


def test_existence_on_linear_driver():
    report = existence_criterion_estimate(
        const_sigma(), 0.3, 0.55, (0.1, 1.0), [0.1, 0.05, 0.025, 0.0125], n_paths=3, settings=LINEAR
    )
    np.testing.assert_allclose(report.values(), 2.0, atol=1e-9)
    assert report.bounded
    assert report.u == pytest.approx(0.55)
    assert ExistenceReport.from_store(report.to_store()).to_record() == report.to_record()


def test_existence_dimension_check():
    with pytest.raises(DimensionMismatchError):
        existence_criterion_estimate(const_sigma(), 0.3, 0.5, (0.1, 1.0), dim=2, n_paths=2, settings=LINEAR)


@pytest.mark.slow
def test_existence_bounded_in_one_dimension():
    settings = SimulationSettings(TimeGrid(0.0, 1.0, 1024), Scheme.EULER)
    report = existence_criterion_estimate(const_sigma(), 0.3, 0.55, (0.1, 1.0), n_paths=4000, settings=settings)
    assert report.bounded


@pytest.mark.slow
def test_existence_grows_when_local_time_fails():
    settings = SimulationSettings(TimeGrid(0.0, 1.0, 1024), Scheme.EULER, chunk_size=512)
    report = existence_criterion_estimate(
        const_sigma(2), 0.6, 0.55, (0.1, 1.0), n_paths=4000, x0=[0.0, 0.0], settings=settings
    )
    assert not report.bounded
    assert report.growth_exponent > 0.1


def test_pair_density_is_symmetric_and_peaked():
    interval = (0.1, 1.0)
    center = gaussian_pair_density_integral(0.0, 0.5, interval)
    assert gaussian_pair_density_integral(0.3, 0.5, interval) == pytest.approx(
        gaussian_pair_density_integral(-0.3, 0.5, interval), rel=1e-7
    )
    assert gaussian_pair_density_integral(0.3, 0.5, interval) < center
    assert gaussian_pair_density_integral(1.3, 0.5, interval, x0=1.0) == pytest.approx(
        gaussian_pair_density_integral(0.3, 0.5, interval), rel=1e-7
    )


@pytest.mark.slow
def test_pair_density_integrates_to_increment_density_at_zero():
    h, interval = 0.4, (0.1, 1.0)
    length = interval[1] - interval[0]
    total, _ = integrate.quad(lambda x: gaussian_pair_density_integral(x, h, interval), -8.0, 8.0, epsrel=1e-5)
    expected = 2 * length ** (2 - h) / ((1 - h) * (2 - h) * math.sqrt(2 * math.pi))
    assert total == pytest.approx(expected, rel=1e-3)


def test_default_x_pairs():
    pairs = default_x_pairs(0.5)
    assert pairs[0] == (0.5, 1.0)
    assert pairs[-1] == (0.5, 0.5)


def test_smoothed_modulus_table():
    report = smoothed_density_modulus(
        two_plus_sin(), 0.4, n_paths=2000, settings=SimulationSettings(TimeGrid(0.0, 1.0, 128))
    )
    assert report.rows[-1].difference == 0.0
    assert all(row.gaussian_difference is None for row in report.rows)
    assert report.interval[0] == pytest.approx(0.1, abs=1 / 128)
    assert all(row.v_x > 0 for row in report.rows)


@pytest.mark.slow
def test_smoothed_modulus_matches_gaussian_closed_form():
    report = smoothed_density_modulus(
        const_sigma(), 0.45, n_paths=20_000, x_pairs=[(0.0, 0.5), (0.0, 1.0)], settings=ADDITIVE
    )
    for row in report.rows:
        assert row.difference == pytest.approx(row.gaussian_difference, rel=0.3, abs=0.05)


@pytest.mark.slow
def test_smoothed_modulus_shrinks_with_distance():
    pairs = [(0.0, 0.5), (0.0, 0.125), (0.0, 0.03125), (0.0, 0.0)]
    report = smoothed_density_modulus(const_sigma(), 0.3, n_paths=20_000, x_pairs=pairs, settings=ADDITIVE)
    differences = report.differences()
    assert np.all(np.diff(differences) < 0)
    assert differences[-1] == 0.0
    references = [row.gaussian_difference for row in report.rows]
    assert np.all(np.diff(references) < 0)


def test_smoothed_modulus_needs_rough_driver():
    for h in (0.5, 0.7):
        with pytest.raises(DomainError):
            smoothed_density_modulus(const_sigma(), h, n_paths=2000, settings=ADDITIVE)
