import numpy as np
import pytest

from fbmlab.fbm import FbmPath, SamplingMethod, TimeGrid, sample_fbm


def linear_path(n_steps: int = 1000, t_end: float = 1.0, dim: int = 1, h: float = 0.5) -> FbmPath:
    """X_s = s in every component."""
    return sample_fbm(h, TimeGrid(0.0, t_end, n_steps), dim, method=SamplingMethod.LINEAR)


def constant_path(n_steps: int = 1000, value: float = 0.0) -> FbmPath:
    grid = TimeGrid(0.0, 1.0, n_steps)
    return FbmPath(grid, 1, np.full((1, n_steps + 1), value), 0, SamplingMethod.LINEAR, 0.3)


@pytest.fixture
def unit_path() -> FbmPath:
    return linear_path()


@pytest.fixture
def rough_path() -> FbmPath:
    return sample_fbm(0.3, TimeGrid(0.0, 1.0, 4096), seed=11)


@pytest.fixture
def offset_x_grid() -> np.ndarray:
    """Grid of [0, 1] shifted by half a step, so every open cell (k / 1024, (k + j) / 1024) contains a point."""
    return np.linspace(0.0, 1.0, 1025) + 0.5 / 1024
