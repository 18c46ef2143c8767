import math

import numpy as np
import pytest

from fbmlab.errors import BlowUpError, DimensionMismatchError, DomainError, OracleUnavailableError
from fbmlab.fbm import SamplingMethod, TimeGrid, sample_fbm, sample_fbm_paths
from fbmlab.sde import (
    ScaleMap,
    Scheme,
    SimulationSettings,
    SolutionPath,
    check_ellipticity,
    convergence_study,
    doss_sussmann_solution,
    simulate_values,
    solve_sde,
)
from fbmlab.vector_fields import (
    FieldBounds,
    VectorFieldSet,
    const_sigma,
    diagonal_field,
    scalar_field_set,
    tanh_elliptic,
    two_plus_sin,
)

from tests.conftest import linear_path


def _sup_distance(a: SolutionPath, b: SolutionPath, factor: int) -> float:
    return float(np.max(np.abs(a.values[0] - b.values[0, ::factor])))


def _coarse(driver, factor):
    values = driver.values[:, ::factor]
    return type(driver)(driver.grid.coarsen(factor), driver.dim, values, driver.seed, driver.method, driver.h)


@pytest.mark.parametrize("scheme", list(Scheme))
def test_additive_noise_is_exact(scheme):
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 512), seed=1)
    solution = solve_sde(const_sigma(sigma=0.7), 1.5, driver, scheme)
    np.testing.assert_allclose(solution.values[0], 1.5 + 0.7 * driver.values[0], atol=1e-10)


@pytest.mark.parametrize("scheme", list(Scheme))
def test_unit_field_on_linear_driver(scheme):
    driver = linear_path(200)
    solution = solve_sde(const_sigma(), 0.25, driver, scheme)
    np.testing.assert_allclose(solution.values[0], 0.25 + driver.times, atol=1e-12)


def test_linear_driver_matches_ode_solution():
    vf = two_plus_sin()
    driver = linear_path(256)
    solution = solve_sde(vf, 0.3, driver)
    np.testing.assert_allclose(solution.values[0], doss_sussmann_solution(vf, 0.3, driver), atol=1e-8)


def test_scale_map_matches_closed_form():
    scale_map = ScaleMap(lambda u: 2.0 + np.sin(u))
    x = np.array([-2.0, -0.5, 0.0, 1.0, 2.5])
    root3 = math.sqrt(3.0)
    exact = [2 / root3 * (math.atan((2 * math.tan(v / 2) + 1) / root3) - math.pi / 6) for v in x]
    np.testing.assert_allclose(scale_map(x), exact, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(scale_map.inverse(scale_map(x)), x, atol=1e-10)


def test_scale_map_constant_sigma():
    scale_map = ScaleMap(lambda u: np.full_like(u, 2.0), origin=1.0)
    x = np.linspace(-3.0, 5.0, 9)
    np.testing.assert_allclose(scale_map(x), (x - 1.0) / 2.0, atol=1e-13)
    np.testing.assert_allclose(scale_map.inverse(np.array([-4.0, 0.0, 7.5])), [-7.0, 1.0, 16.0], atol=1e-10)


def test_ellipticity_examples():
    points = np.linspace(-10.0, 10.0, 2001)
    report = check_ellipticity(two_plus_sin(), points)
    assert report.elliptic
    assert report.min_singular_value == pytest.approx(1.0, abs=1e-4)

    sine = scalar_field_set(np.sin, np.cos, lambda y: -np.sin(y))
    report = check_ellipticity(sine, np.append(points, 0.0))
    assert not report.elliptic
    assert report.min_singular_value == 0.0

    def constant(c):
        return lambda y: np.full_like(y, c)

    bounds = FieldBounds(3.0, 0.0, 0.0)
    diagonal = VectorFieldSet(
        2,
        [
            diagonal_field(2, 0, constant(3.0), np.zeros_like, np.zeros_like, bounds),
            diagonal_field(2, 1, constant(2.0), np.zeros_like, np.zeros_like, bounds),
        ],
    )
    report = check_ellipticity(diagonal, np.random.default_rng(0).normal(size=(50, 2)))
    assert report.min_singular_value == pytest.approx(2.0)


def test_oracle_convergence_on_smooth_field():
    table = convergence_study(two_plus_sin(), 0.0, 0.4, Scheme.WONG_ZAKAI, [2**k for k in range(8, 13)], seed=3)
    assert [r.n_steps for r in table.rungs] == [256, 512, 1024, 2048, 4096]
    assert table.non_increasing(0.1)
    assert table.errors()[-1] < 1e-2
    assert table.fitted_order > 0


def test_oracle_convergence_additive_is_exact():
    table = convergence_study(const_sigma(), 0.0, 0.3, Scheme.WONG_ZAKAI, [256, 512, 1024], seed=1)
    assert np.max(table.errors()) < 1e-10


def test_euler_convergence_table_records_order():
    table = convergence_study(two_plus_sin(), 0.0, 0.5, Scheme.EULER, [256, 512, 1024], seed=2)
    assert len(table.rungs) == 3
    assert math.isfinite(table.fitted_order)


def test_convergence_ladder_must_nest():
    with pytest.raises(ValueError):
        convergence_study(two_plus_sin(), 0.0, 0.4, Scheme.EULER, [300, 1024])


def test_oracle_unavailable():
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 64), 2)
    with pytest.raises(OracleUnavailableError):
        doss_sussmann_solution(two_plus_sin(2), [0.0, 0.0], driver)
    with pytest.raises(OracleUnavailableError):
        convergence_study(two_plus_sin(drift=0.5), 0.0, 0.4, Scheme.EULER, [64, 128])


def test_dimension_errors():
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 64), 2)
    with pytest.raises(DimensionMismatchError):
        solve_sde(two_plus_sin(2), [0.0, 0.0], driver, Scheme.MILSTEIN_1D)
    with pytest.raises(DimensionMismatchError):
        solve_sde(two_plus_sin(1), 0.0, driver)
    with pytest.raises(DimensionMismatchError):
        solve_sde(two_plus_sin(2), [0.0, 0.0, 0.0], driver)


def test_blow_up_is_reported():
    square = scalar_field_set(lambda y: y**2, lambda y: 2 * y, lambda y: 2 * np.ones_like(y))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(BlowUpError) as info:
            solve_sde(square, 2.0, linear_path(100))
    assert info.value.step > 1
    assert info.value.path == 0
    assert isinstance(info.value, ArithmeticError)


def test_flow_preserves_order():
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 1024), seed=8)
    lower = solve_sde(tanh_elliptic(), 0.0, driver)
    upper = solve_sde(tanh_elliptic(), 0.1, driver)
    assert np.all(upper.values > lower.values)


def test_second_order_schemes_agree_as_step_shrinks():
    fine = sample_fbm(0.4, TimeGrid(0.0, 1.0, 4096), seed=6)
    reference = solve_sde(two_plus_sin(), 0.0, fine, Scheme.WONG_ZAKAI)
    distances = [
        _sup_distance(solve_sde(two_plus_sin(), 0.0, _coarse(fine, factor), Scheme.MILSTEIN_1D), reference, factor)
        for factor in (16, 1)
    ]
    assert distances[1] < distances[0]


def test_euler_consistent_for_young_drivers():
    fine = sample_fbm(0.7, TimeGrid(0.0, 1.0, 4096), seed=6)
    reference = solve_sde(two_plus_sin(), 0.0, fine, Scheme.WONG_ZAKAI)
    distances = [
        _sup_distance(solve_sde(two_plus_sin(), 0.0, _coarse(fine, factor), Scheme.EULER), reference, factor)
        for factor in (16, 1)
    ]
    assert distances[1] < distances[0]


def test_batched_and_scalar_paths_agree():
    grid = TimeGrid(0.0, 1.0, 256)
    batch = simulate_values(two_plus_sin(), 0.2, 0.4, grid, 3, seed=4)
    for r in range(3):
        driver = sample_fbm(0.4, grid, 1, seed=4, replication=r)
        np.testing.assert_allclose(batch[r, 0], solve_sde(two_plus_sin(), 0.2, driver).values[0], atol=1e-9)


def test_solver_is_deterministic():
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 512), seed=2)
    first = solve_sde(tanh_elliptic(drift=0.5), -0.4, driver)
    second = solve_sde(tanh_elliptic(drift=0.5), -0.4, driver)
    np.testing.assert_array_equal(first.values, second.values)


def test_thread_count_does_not_change_samples():
    grid = TimeGrid(0.0, 1.0, 128)
    kwargs = dict(scheme=Scheme.EULER, chunk_size=16)
    single = simulate_values(two_plus_sin(), 0.0, 0.3, grid, 50, 9, [0, 64, 128], threads=1, **kwargs)
    pooled = simulate_values(two_plus_sin(), 0.0, 0.3, grid, 50, 9, [0, 64, 128], threads=4, **kwargs)
    assert single.shape == (50, 1, 3)
    np.testing.assert_array_equal(single, pooled)


def test_simulated_additive_values_match_drivers():
    grid = TimeGrid(0.0, 1.0, 64)
    settings = SimulationSettings(grid, Scheme.EULER, chunk_size=7)
    values = settings.simulate(const_sigma(2), [1.0, -1.0], 0.3, 20, 5, [64])
    drivers = sample_fbm_paths(0.3, grid, 2, 5, range(20))
    np.testing.assert_allclose(values[:, :, 0], np.array([1.0, -1.0]) + drivers[:, :, -1], atol=1e-12)


def test_linear_method_in_simulation():
    settings = SimulationSettings(TimeGrid(0.0, 1.0, 100), method=SamplingMethod.LINEAR)
    values = settings.simulate(const_sigma(), 0.0, 0.3, 4, 0, [100])
    np.testing.assert_allclose(values, 1.0, atol=1e-12)


def test_solution_binary_round_trip(tmp_path):
    driver = sample_fbm(0.3, TimeGrid(0.0, 1.0, 64), seed=12)
    solution = solve_sde(two_plus_sin(), 0.5, driver, Scheme.MILSTEIN_1D)
    solution.to_binary(tmp_path / "solution.bin")
    loaded = SolutionPath.from_binary(tmp_path / "solution.bin")
    np.testing.assert_array_equal(loaded.values, solution.values)
    assert loaded.scheme is Scheme.MILSTEIN_1D
    assert (loaded.field_id, loaded.driver_seed, loaded.h) == ("two_plus_sin", 12, 0.3)
    np.testing.assert_array_equal(loaded.x0, [0.5])


def _understated_bounds():
    return scalar_field_set(lambda y: 2.0 + np.sin(y), np.cos, lambda y: -np.sin(y), FieldBounds(1.0, 1.0, 1.0))


def test_debug_mode_asserts_declared_bounds():
    vf = _understated_bounds()
    x = np.array([[1.5]])
    assert vf.diffusion_at(x)[0, 0, 0] == pytest.approx(2.0 + math.sin(1.5))
    vf.debug = True
    with pytest.raises(AssertionError, match="exceeds declared bound"):
        vf.diffusion_at(x)


def test_verify_bounds():
    states = np.linspace(-10.0, 10.0, 401)[None, :]
    for vf in (const_sigma(sigma=2.0, drift=0.5), two_plus_sin(), tanh_elliptic()):
        vf.verify_bounds(states)
    const_sigma(2, drift=1.0).verify_bounds(np.tile(states, (2, 1)))
    with pytest.raises(DomainError, match="V_1 reaches 3"):
        _understated_bounds().verify_bounds(states)
    # the second derivative bound is checked too
    curved = scalar_field_set(
        lambda y: np.full_like(y, 1.0), np.zeros_like, lambda y: 5.0 * np.cos(y), FieldBounds(1.0, 0.0, 1.0)
    )
    with pytest.raises(DomainError, match="D2V_1"):
        curved.verify_bounds(states)
