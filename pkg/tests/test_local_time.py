import math

import numpy as np
import pandas as pd
import pytest

from fbmlab.errors import DimensionMismatchError, DomainError, OutOfRangeError, ResolutionError
from fbmlab.fbm import TimeGrid, sample_fbm
from fbmlab.local_time import (
    Ball,
    Interval,
    Kernel,
    LocalTimeField,
    OccupationQuery,
    ball_constant,
    covering_x_grid,
    default_t_grid,
    epsilon_convergence_study,
    local_time_ball,
    local_time_field,
    occupation_measure,
)
from fbmlab.sde import solve_sde
from fbmlab.vector_fields import two_plus_sin

from tests.conftest import constant_path, linear_path


def test_occupation_of_whole_space(rough_path):
    assert occupation_measure(rough_path, 0.2, 0.9) == pytest.approx(0.7)


def test_occupation_of_linear_path(unit_path):
    assert occupation_measure(unit_path, 0.0, 1.0, Interval(0.0, 0.5)) == pytest.approx(0.5, abs=1e-12)
    assert occupation_measure(unit_path, 0.0, 1.0, Interval(0.25, 0.3)) == pytest.approx(0.05, abs=1e-12)
    assert occupation_measure(unit_path, 0.0, 1.0, Interval(1.0, 0.0)) == 0.0


def test_local_time_of_linear_path(unit_path):
    assert local_time_ball(unit_path, 0.0, 1.0, 0.5, 0.1) == pytest.approx(1.0, abs=1e-12)
    assert local_time_ball(unit_path, 0.0, 1.0, 2.0, 0.1) == 0.0


def test_ball_occupation_in_the_plane():
    path = linear_path(1000, dim=2)
    inside = occupation_measure(path, 0.0, 1.0, Ball((0.5, 0.5), 0.1))
    assert inside == pytest.approx(0.2 / math.sqrt(2.0), abs=1e-12)
    assert local_time_ball(path, 0.0, 1.0, [0.5, 0.5], 0.1) == pytest.approx(inside / (math.pi * 0.01))


def test_ball_constants():
    assert ball_constant(1) == pytest.approx(2.0)
    assert ball_constant(2) == pytest.approx(math.pi)
    assert ball_constant(3) == pytest.approx(4.0 * math.pi / 3.0)


def test_occupation_is_additive(rough_path):
    region = Interval(-0.1, 0.2)
    whole = occupation_measure(rough_path, 0.1, 0.9, region)
    split = occupation_measure(rough_path, 0.1, 0.4321, region) + occupation_measure(rough_path, 0.4321, 0.9, region)
    assert whole == pytest.approx(split, abs=1e-12)

    ball = local_time_ball(rough_path, 0.1, 0.9, 0.05, 0.03)
    parts = local_time_ball(rough_path, 0.1, 0.5, 0.05, 0.03) + local_time_ball(rough_path, 0.5, 0.9, 0.05, 0.03)
    assert ball == pytest.approx(parts, rel=1e-12)


def test_local_time_is_translation_equivariant(rough_path):
    # generic shifts agree up to rounding
    shifted = type(rough_path)(
        rough_path.grid, 1, rough_path.values + 3.0, rough_path.seed, rough_path.method, rough_path.h
    )
    for x in (-0.2, 0.0, 0.15):
        original = local_time_ball(rough_path, 0.1, 1.0, x, 0.02)
        assert local_time_ball(shifted, 0.1, 1.0, x + 3.0, 0.02) == pytest.approx(original, rel=1e-9, abs=1e-12)


def test_dyadic_shift_is_bit_exact(rough_path):
    values = np.round(rough_path.values * 2**20) / 2**20
    path = type(rough_path)(rough_path.grid, 1, values, rough_path.seed, rough_path.method, rough_path.h)
    shifted = type(rough_path)(rough_path.grid, 1, values + 0.5, rough_path.seed, rough_path.method, rough_path.h)
    x_grid = np.arange(-256, 257) / 128
    t_grid = [0.25, 0.5, 0.75, 1.0]
    original = local_time_field(path, 0.125, t_grid, x_grid, 1 / 32)
    moved = local_time_field(shifted, 0.125, t_grid, x_grid + 0.5, 1 / 32)
    np.testing.assert_array_equal(moved.values, original.values)


def test_query_validation(unit_path):
    with pytest.raises(OutOfRangeError):
        OccupationQuery(0.5, 0.5)
    with pytest.raises(OutOfRangeError):
        occupation_measure(unit_path, 0.5, 1.5)
    with pytest.raises(DomainError):
        Ball((0.0,), 0.0)
    with pytest.raises(DomainError):
        local_time_ball(unit_path, 0.0, 1.0, 0.5, 0.0)
    with pytest.raises(DimensionMismatchError):
        occupation_measure(linear_path(10, dim=2), 0.0, 1.0, Interval(0.0, 1.0))


def test_field_occupation_identity_on_covering_grid(rough_path):
    field = local_time_field(rough_path)
    assert field.a == pytest.approx(0.1)
    assert field.epsilon == pytest.approx(0.5 * (1 / 4096) ** 0.3)
    assert np.max(field.identity_errors()) < 1e-9
    assert field.is_nondecreasing_in_t()
    assert np.all(field.values >= 0)


def test_field_matches_pointwise_local_time(rough_path):
    t_grid = [0.3, 0.6, 1.0]
    x_grid = np.linspace(-0.3, 0.3, 61)
    field = local_time_field(rough_path, 0.1, t_grid, x_grid, epsilon=0.02)
    for j, t in enumerate(t_grid):
        for i in (0, 17, 30, 45):
            expected = local_time_ball(rough_path, 0.1, t, x_grid[i], 0.02)
            assert field.values[j, i] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_epanechnikov_field_identity(rough_path):
    x_grid = np.arange(-6.0, 6.0, 0.0125)
    field = local_time_field(rough_path, kernel=Kernel.EPANECHNIKOV, epsilon=0.05, x_grid=x_grid)
    assert field.kernel is Kernel.EPANECHNIKOV
    assert np.max(field.identity_errors()) < 1e-2
    assert field.is_nondecreasing_in_t()


def test_field_resolution_and_dimension(rough_path):
    with pytest.raises(ResolutionError):
        local_time_field(rough_path, x_grid=np.linspace(-1.0, 1.0, 11), epsilon=0.01)
    with pytest.raises(DimensionMismatchError):
        local_time_field(linear_path(100, dim=2))
    with pytest.raises(OutOfRangeError):
        local_time_field(rough_path, a=0.5, t_grid=[0.2, 0.6])


def test_covering_grid():
    grid = covering_x_grid(-0.31, 0.47, 0.05, subdivisions=2)
    assert np.allclose(np.diff(grid), 0.025)
    assert grid[1] <= -0.36 and grid[-2] >= 0.52


def test_default_t_grid_is_thinned():
    grid = TimeGrid(0.0, 1.0, 10_000)
    t_grid = default_t_grid(grid, 0.1, max_points=1000)
    assert t_grid.size <= 1000
    assert t_grid[0] == pytest.approx(0.1)
    assert np.allclose(np.diff(t_grid), t_grid[1] - t_grid[0])


def test_epsilon_ladder_on_linear_path(unit_path):
    table = epsilon_convergence_study(unit_path, 0.0, 1.0, [0.1, 0.05, 0.025, 0.0125], np.linspace(0.3, 0.7, 41))
    assert table.ladder == [0.1, 0.05, 0.025, 0.0125]
    assert math.isnan(table.rungs[0].sup_difference)
    assert np.all(table.differences() < 1e-9)
    np.testing.assert_allclose(table.rungs[-1].snapshot, 1.0, atol=1e-9)
    assert not table.atomic
    assert not any(r.below_noise_floor for r in table.rungs)


def test_epsilon_ladder_on_constant_path():
    table = epsilon_convergence_study(constant_path(), 0.0, 1.0, [0.1, 0.05, 0.025], np.linspace(-0.05, 0.05, 101))
    assert table.atomic
    for rung in table.rungs:
        assert rung.snapshot[50] == pytest.approx(1.0 / (2.0 * rung.epsilon))
        assert rung.below_noise_floor is False
    assert np.all(table.differences() > 0)


def test_epsilon_ladder_on_fbm_path(rough_path, caplog):
    table = epsilon_convergence_study(rough_path, 0.1, 1.0, [0.1, 0.05, 0.025, 0.0125, 0.001])
    assert len(table.rows()) == 5
    assert table.rungs[-1].below_noise_floor
    assert "noise floor" in caplog.text
    assert np.all(np.isfinite(table.differences()))


def test_epsilon_ladder_converges_on_fbm():
    grid = TimeGrid(0.0, 1.0, 2**14)
    tables = [
        epsilon_convergence_study(sample_fbm(0.3, grid, seed=seed), 0.1, 1.0, [0.2, 0.1, 0.05, 0.025])
        for seed in range(4)
    ]
    assert not any(r.below_noise_floor or r.undersampled for table in tables for r in table.rungs)
    mean = np.mean([table.differences() for table in tables], axis=0)
    assert np.all(np.diff(mean) < 0)


def test_field_is_consistent_under_epsilon_halving():
    path = sample_fbm(0.3, TimeGrid(0.0, 1.0, 2**14), seed=5)
    x_grid = np.arange(-3.0, 3.0, 0.005)
    t_grid = [0.4, 0.7, 1.0]
    coarse = local_time_field(path, 0.1, t_grid, x_grid, 0.05).values
    fine = local_time_field(path, 0.1, t_grid, x_grid, 0.025).values
    assert np.max(np.abs(fine - coarse)) < 0.2 * np.max(coarse)


def test_epsilon_ladder_flags_coarse_x_grid(rough_path, caplog):
    table = epsilon_convergence_study(rough_path, 0.1, 1.0, [0.1, 0.05, 0.01], np.linspace(-1.0, 1.0, 81))
    assert [r.undersampled for r in table.rungs] == [False, False, True]
    assert "coarser than ladder rungs" in caplog.text
    assert all(row["undersampled"] == r.undersampled for row, r in zip(table.rows(), table.rungs))
    # still exact at the grid points
    expected = local_time_ball(rough_path, 0.1, 1.0, table.x_grid[40], 0.01)
    assert table.rungs[-1].snapshot[40] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_epsilon_ladder_must_decrease(unit_path):
    with pytest.raises(ValueError):
        epsilon_convergence_study(unit_path, 0.0, 1.0, [0.01, 0.02])
    with pytest.raises(ValueError):
        epsilon_convergence_study(unit_path, 0.0, 1.0, [0.01])


def test_field_io(rough_path, tmp_path):
    field = local_time_field(rough_path, 0.5, [0.5, 0.75, 1.0], np.linspace(-0.5, 0.5, 101), 0.02)
    field.to_binary(tmp_path / "field.bin")
    loaded = LocalTimeField.from_binary(tmp_path / "field.bin")
    np.testing.assert_array_equal(loaded.values, field.values)
    np.testing.assert_array_equal(loaded.x_grid, field.x_grid)
    assert (loaded.a, loaded.epsilon, loaded.kernel) == (0.5, 0.02, Kernel.INDICATOR)

    field.to_csv(tmp_path / "field.csv")
    frame = pd.read_csv(tmp_path / "field.csv")
    assert list(frame.columns) == ["t", "x", "value"]
    assert len(frame) == 3 * 101


def test_field_steps():
    field = LocalTimeField(0.0, [0.0, 0.5, 1.5], np.linspace(0.0, 1.0, 5), 0.1, np.zeros((3, 5)))
    assert field.x_step == pytest.approx(0.25)
    with pytest.raises(ResolutionError):
        field.t_step


def test_field_from_solution_path():
    driver = sample_fbm(0.35, TimeGrid(0.0, 1.0, 2048), seed=5)
    field = local_time_field(solve_sde(two_plus_sin(), 0.0, driver))
    assert np.max(field.identity_errors()) < 1e-9
