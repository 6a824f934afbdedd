import pytest
import logging

from wigner_chasm.phase_space import build_grid, init_gaussian


@pytest.fixture
def app_logger():
    """Fixture for a mock logger."""
    return logging.getLogger("test logger")


# Factory fixture for grids: 1-D by default, the harmonic oscillator box
@pytest.fixture
def make_grid():
    def _func(dim=1, x_extent=(-12.0, 12.0), nx=120, l_k=6.4, nk=64):
        return build_grid(dim, x_extent, nx, l_k, nk)

    return _func


# Factory fixture for a Gaussian wavepacket sampled on a grid
@pytest.fixture
def make_gaussian(make_grid):
    def _func(grid=None, center_x=None, center_k=None, **kwargs):
        grid = grid if grid is not None else make_grid()
        center_x = center_x if center_x is not None else (1.0,) + (0.0,) * (grid.dim - 1)
        center_k = center_k if center_k is not None else (0.0,) * grid.dim
        return init_gaussian(grid, center_x, center_k, **kwargs)

    return _func
