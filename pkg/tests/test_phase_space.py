import math

import numpy as np
import pytest

from wigner_chasm.errors import GridError, NumericalError
from wigner_chasm.phase_space import (
    PhaseSpaceGrid,
    WignerField,
    build_grid,
    error_metrics,
    init_hydrogen_1s,
    phase_space_moments,
    reduced_wigner,
    reflect_k,
    spatial_marginal,
    total_mass,
    x_projection,
)


def test_build_grid_geometry(make_grid):
    grid = make_grid(nx=240, nk=512)
    assert grid.h == pytest.approx(0.1)
    assert grid.dk == pytest.approx(0.025)
    assert grid.shape == (241, 512)
    k = grid.k_axis()
    assert k[0] == pytest.approx(-6.4)
    # +L_k is excluded
    assert k[-1] == pytest.approx(6.4 - 0.025)
    assert grid.x_axis()[-1] == pytest.approx(12.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dim": 2},
        {"nk": 15},
        {"nk": 2},
        {"nx": 3},
        {"x_extent": (1.0, 1.0)},
        {"l_k": -1.0},
        {"l_k": math.inf},
    ],
)
def test_build_grid_invalid(kwargs):
    args = {"dim": 1, "x_extent": (-1.0, 1.0), "nx": 8, "l_k": 1.0, "nk": 8}
    args.update(kwargs)
    with pytest.raises(GridError):
        build_grid(**args)


def test_grid_axis_out_of_range(make_grid):
    with pytest.raises(GridError):
        make_grid().k_axis(1)


def test_field_validation(make_grid):
    grid = make_grid(nx=8, nk=8)
    with pytest.raises(GridError):
        WignerField(grid, np.zeros((8, 8)))
    values = np.zeros(grid.shape)
    values[2, 3] = np.nan
    with pytest.raises(NumericalError):
        WignerField(grid, values)
    with pytest.raises(GridError):
        WignerField(grid, np.zeros(grid.shape, dtype=np.complex128))
    field = WignerField(grid, np.ones(grid.shape, dtype=int))
    assert field.values.dtype == np.float64


def test_gaussian_mass_and_moments(make_gaussian):
    field = make_gaussian()
    assert total_mass(field) == pytest.approx(1.0, abs=1e-10)
    mean_x, mean_k = phase_space_moments(field)
    assert mean_x[0] == pytest.approx(1.0, abs=1e-8)
    assert mean_k[0] == pytest.approx(0.0, abs=1e-8)


def test_gaussian_precision(make_gaussian):
    field = make_gaussian(dtype=np.float32)
    assert field.values.dtype == np.float32
    assert total_mass(field) == pytest.approx(1.0, abs=1e-5)


def test_gaussian_wrong_center(make_grid, make_gaussian):
    with pytest.raises(GridError):
        make_gaussian(center_x=(0.0, 0.0))


def test_moments_of_empty_field(make_grid):
    grid = make_grid(nx=8, nk=8)
    with pytest.raises(NumericalError):
        phase_space_moments(WignerField(grid, np.zeros(grid.shape)))


def test_reflect_k_is_grid_exact(make_grid, make_gaussian):
    field = make_gaussian(center_x=(0.5,), center_k=(0.0,))
    reflected = reflect_k(field.values, 1)
    np.testing.assert_allclose(reflected, field.values, rtol=1e-12, atol=1e-300)
    rng = np.random.default_rng(7)
    values = rng.standard_normal(field.grid.shape)
    np.testing.assert_array_equal(reflect_k(reflect_k(values, 1), 1), values)
    # index j maps to (Nk - j) mod Nk
    assert reflect_k(values, 1)[0, 1] == values[0, -1]
    assert reflect_k(values, 1)[0, 0] == values[0, 0]


@pytest.fixture
def small_3d(make_grid, make_gaussian):
    grid = make_grid(dim=3, x_extent=(-6.0, 6.0), nx=12, l_k=4.0, nk=8)
    return make_gaussian(grid=grid, center_x=(1.0, 0.0, 0.0))


def test_reductions_keep_the_mass(small_3d):
    field = small_3d
    grid = field.grid
    mass = total_mass(field)
    w1 = reduced_wigner(field, 0)
    assert w1.shape == (grid.nx + 1, grid.nk)
    assert w1.sum() * grid.h * grid.dk == pytest.approx(mass, rel=1e-12)
    marginal = spatial_marginal(field)
    assert marginal.shape == (grid.nx + 1, grid.nx + 1)
    assert marginal.sum() * grid.h**2 == pytest.approx(mass, rel=1e-12)
    projection = x_projection(field)
    assert projection.shape == (grid.nx + 1,)
    assert projection.sum() * grid.h == pytest.approx(mass, rel=1e-12)


def test_reductions_reject_1d(make_gaussian):
    field = make_gaussian(grid=build_grid(1, (-4.0, 4.0), 8, 2.0, 8))
    with pytest.raises(GridError):
        reduced_wigner(field, 0)
    with pytest.raises(GridError):
        spatial_marginal(field)


def test_reduced_wigner_axis_out_of_range(small_3d):
    with pytest.raises(GridError):
        reduced_wigner(small_3d, 3)


def test_error_metrics(make_gaussian):
    field = make_gaussian()
    same = error_metrics(field, field.copy(), total_mass(field))
    assert same.eps_inf == 0.0
    assert same.eps_2 == 0.0
    assert same.eps_mass == pytest.approx(0.0, abs=1e-15)

    shifted = field.copy()
    shifted.values[10, 10] += 1e-3
    report = error_metrics(shifted, field, total_mass(field))
    assert report.eps_inf == pytest.approx(1e-3)
    assert report.eps_2 == pytest.approx(1e-3 * math.sqrt(field.grid.cell_volume))
    assert report.eps_mass == pytest.approx(1e-3 * field.grid.cell_volume)


def test_error_metrics_grid_mismatch(make_grid, make_gaussian):
    a = make_gaussian(grid=make_grid(nx=120))
    b = make_gaussian(grid=make_grid(nx=60))
    with pytest.raises(GridError):
        error_metrics(a, b, 1.0)


def test_hydrogen_1s_peak_and_symmetry():
    grid = build_grid(3, (-9.0, 9.0), 20, 6.4, 16)
    field = init_hydrogen_1s(grid, ny=32)
    values = field.values
    center = values[10, 10, 10]
    # f_1s(0, 0) = pi^-3
    assert center[8, 8, 8] == pytest.approx(math.pi**-3, rel=0.1)
    assert values.max() <= 1.1 * math.pi**-3
    # even in k and in x
    np.testing.assert_allclose(
        reflect_k(values, 3)[..., 1:, 1:, 1:],
        values[..., 1:, 1:, 1:],
        atol=1e-12 * center.max(),
    )
    np.testing.assert_allclose(
        values[::-1, ::-1, ::-1], values, atol=1e-12 * center.max()
    )


@pytest.mark.parametrize("ny", [24, 8, 48])
def test_hydrogen_1s_invalid_ny(ny):
    grid = build_grid(3, (-9.0, 9.0), 20, 6.4, 16)
    with pytest.raises(GridError):
        init_hydrogen_1s(grid, ny=ny)


def test_hydrogen_1s_needs_3d(make_grid):
    with pytest.raises(GridError):
        init_hydrogen_1s(make_grid())


def test_grid_is_hashable_value_object(make_grid):
    assert make_grid() == make_grid()
    assert isinstance(make_grid(), PhaseSpaceGrid)
