import numpy as np
import pytest

from wigner_chasm.bspline import BoundaryCondition, solve_global_spline
from wigner_chasm.errors import PmbcError
from wigner_chasm.pmbc import (
    Side,
    assemble_local_spline,
    build_pmbc_table,
    global_interface_slope,
    interface_slopes,
    pmbc_contrib,
)

N, P = 128, 4


@pytest.fixture
def samples():
    return np.exp(0.02 * np.arange(N + 1))


@pytest.mark.parametrize(
    "n, p, n_nb, h",
    [
        (128, 3, 10, 1.0),
        (128, 4, 3, 1.0),
        (128, 4, 33, 1.0),
        (128, 4, 10, 0.0),
        (6, 3, 2, 1.0),
    ],
)
def test_table_rejects_bad_layout(n, p, n_nb, h):
    with pytest.raises(PmbcError):
        build_pmbc_table(n, p, n_nb, BoundaryCondition.natural(), h)


def test_table_shapes_and_antisymmetry():
    table = build_pmbc_table(N, P, 20, BoundaryCondition.natural())
    assert table.m == 32
    assert table.c0.shape == (P - 1,)
    assert table.c_minus.shape == table.c_plus.shape == (P - 1, 20)
    assert table.c_first.shape == table.c_last.shape == (21,)
    # far from the global ends the slope stencil is odd around the node
    np.testing.assert_allclose(table.c_plus[1], -table.c_minus[1], atol=1e-12)
    assert table.c0[1] == pytest.approx(0.0, abs=1e-12)


def test_hermite_table_has_no_end_closure():
    table = build_pmbc_table(N, P, 10, BoundaryCondition.hermite(0.7, -0.4))
    assert table.c_first is None
    assert table.c_last is None


def test_interface_slopes_converge_with_stencil(samples):
    bc = BoundaryCondition.natural()
    exact = [global_interface_slope(samples, 1.0, bc, i * 32) for i in range(1, P)]
    errors = []
    for n_nb in (5, 10, 15, 20, 30):
        slopes = interface_slopes(samples, build_pmbc_table(N, P, n_nb, bc))
        # patch l's right slope and patch l+1's left slope are the same number
        np.testing.assert_array_equal(slopes[:-1, 1], slopes[1:, 0])
        errors.append(float(np.abs(slopes[:-1, 1] - exact).max()))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[1] <= 1e-4
    assert errors[-1] <= 1e-10


def test_natural_end_closure(samples):
    bc = BoundaryCondition.natural()
    slopes = interface_slopes(samples, build_pmbc_table(N, P, 30, bc))
    assert slopes[0, 0] == pytest.approx(
        global_interface_slope(samples, 1.0, bc, 0), abs=1e-10
    )
    assert slopes[-1, 1] == pytest.approx(
        global_interface_slope(samples, 1.0, bc, N), abs=1e-10
    )


def test_hermite_edges_use_prescribed_slopes(samples):
    table = build_pmbc_table(N, P, 10, BoundaryCondition.hermite(0.7, -0.4))
    slopes = interface_slopes(samples, table)
    assert slopes[0, 0] == 0.7
    assert slopes[-1, 1] == -0.4
    plane = pmbc_contrib(np.zeros((33, 5)), table, Side.LEFT, 0)
    np.testing.assert_array_equal(plane, np.full(5, 0.7))


def test_local_spline_matches_global(samples):
    bc = BoundaryCondition.natural()
    table = build_pmbc_table(N, P, 30, bc)
    eta = solve_global_spline(samples, 1.0, bc).eta
    slopes = interface_slopes(samples, table)
    m = table.m
    for l in range(P):
        local = assemble_local_spline(
            samples[l * m : (l + 1) * m + 1], slopes[l, 0], slopes[l, 1], table, l
        )
        assert local.patch_id == l
        np.testing.assert_allclose(local.eta_local, eta[l * m : l * m + m + 3], atol=1e-9)


def test_contrib_wrong_patch_size():
    table = build_pmbc_table(N, P, 10, BoundaryCondition.natural())
    with pytest.raises(PmbcError):
        pmbc_contrib(np.zeros(32), table, Side.LEFT, 1)
    with pytest.raises(PmbcError):
        pmbc_contrib(np.zeros(33), table, Side.LEFT, P)


def test_contrib_along_axis(samples):
    table = build_pmbc_table(N, P, 10, BoundaryCondition.natural())
    rng = np.random.default_rng(11)
    patch = rng.standard_normal((3, 33, 2))
    for side in Side:
        batched = pmbc_contrib(patch, table, side, 1, axis=1)
        assert batched.shape == (3, 2)
        for i in range(3):
            for j in range(2):
                assert batched[i, j] == pytest.approx(
                    pmbc_contrib(patch[i, :, j], table, side, 1), abs=1e-14
                )
