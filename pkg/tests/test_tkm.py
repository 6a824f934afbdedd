import math

import numpy as np
import pytest
import scipy.integrate

from wigner_chasm.errors import GridError, NumericalError
from wigner_chasm.main import tkm_gaussian_errors
from wigner_chasm.phase_space import build_grid, init_gaussian
from wigner_chasm.tkm import (
    C31,
    PdoWorkspace,
    apply_pdo_coulomb,
    apply_pdo_quadratic,
    build_convolution_tensor,
    convolve_truncated,
    discrete_mass_defect,
    gaussian_convolution_reference,
    sine_integral,
    tensor_from_values,
    truncated_kernel_hat,
    truncation_diameter,
)


@pytest.fixture(scope="module")
def tensor8():
    return build_convolution_tensor(8, 4.0)


def test_sine_integral():
    assert sine_integral(2.0) == pytest.approx(1.605412976802695, rel=1e-14)
    assert sine_integral(-2.0) == pytest.approx(-1.605412976802695, rel=1e-14)
    assert sine_integral(0.0) == 0.0
    assert sine_integral(1e4) == pytest.approx(math.pi / 2, abs=1e-4)
    np.testing.assert_allclose(sine_integral(np.array([2.0, -2.0])), [1.6054129768, -1.6054129768])


def test_truncated_kernel_hat():
    d = truncation_diameter(1.0)
    assert d == pytest.approx(2.0 * math.sqrt(3.0))
    assert truncated_kernel_hat(0.0, d) == pytest.approx(4.0 * math.pi * d)
    xi = math.pi / d
    assert truncated_kernel_hat(xi, d) == pytest.approx(4.0 * math.pi * sine_integral(math.pi) / xi)
    below = truncated_kernel_hat(0.99999e-4 / d, d)
    above = truncated_kernel_hat(1.00001e-4 / d, d)
    assert above == pytest.approx(below, rel=1e-12)
    with pytest.raises(ValueError):
        truncated_kernel_hat(-1.0, d)
    with pytest.raises(ValueError):
        truncated_kernel_hat(1.0, 0.0)


@pytest.mark.parametrize("nk, l_k", [(7, 4.0), (0, 4.0), (8, 0.0)])
def test_build_tensor_invalid(nk, l_k):
    with pytest.raises(GridError):
        build_convolution_tensor(nk, l_k)


def test_tensor_matches_direct_sum(tensor8):
    nk, l_k = 8, 4.0
    m = 3 * nk
    n = np.arange(-m // 2, m // 2)
    xi = 2.0 * math.pi / (6.0 * l_k) * n
    norm = np.sqrt(xi[:, None, None] ** 2 + xi[None, :, None] ** 2 + xi[None, None, :] ** 2)
    kernel = truncated_kernel_hat(norm, truncation_diameter(l_k))
    window = np.arange(-nk, nk)
    phase = np.exp(2j * math.pi * np.outer(n, window) / m)
    direct = np.einsum("ia,jb,kc,ijk->abc", phase, phase, phase, kernel) / m**3
    peak = np.abs(tensor8.t).max()
    np.testing.assert_allclose(tensor8.t, direct.real, atol=1e-12 * peak)


def test_tensor_is_even(tensor8):
    t = tensor8.t
    peak = np.abs(t).max()
    # window index a holds T_{a-Nk}; a = 0 has no mirror
    np.testing.assert_allclose(t[1:], t[:0:-1], atol=1e-12 * peak)
    np.testing.assert_allclose(t[:, 1:], t[:, :0:-1], atol=1e-12 * peak)
    np.testing.assert_allclose(t[:, :, 1:], t[:, :, :0:-1], atol=1e-12 * peak)


def test_tensor_from_values(tensor8):
    rebuilt = tensor_from_values(tensor8.t, 4.0)
    assert rebuilt.nk == 8
    assert rebuilt.dk == pytest.approx(1.0)
    np.testing.assert_allclose(rebuilt.kernel_hat, tensor8.kernel_hat)
    with pytest.raises(GridError):
        tensor_from_values(np.zeros((16, 16, 8)), 4.0)


def test_convolution_matches_direct_sum(tensor8):
    nk = 8
    rng = np.random.default_rng(5)
    idx = np.arange(nk)[:, None] - np.arange(nk)[None, :] + nk
    full = tensor8.t[
        idx[:, None, None, :, None, None],
        idx[None, :, None, None, :, None],
        idx[None, None, :, None, None, :],
    ]
    for _ in range(20):
        fs = rng.standard_normal((nk,) * 3) + 1j * rng.standard_normal((nk,) * 3)
        direct = np.einsum("abcijk,ijk->abc", full, fs)
        np.testing.assert_allclose(
            convolve_truncated(tensor8, fs), direct, atol=1e-12 * np.abs(direct).max()
        )


def test_convolution_of_delta_and_batches(tensor8):
    fs = np.zeros((2, 8, 8, 8))
    fs[0, 3, 2, 5] = 1.0
    out = convolve_truncated(tensor8, fs)
    assert out.shape == (2, 8, 8, 8)
    assert np.abs(out[1]).max() == 0.0
    # row p holds T_{p-q}
    peak = np.abs(tensor8.t).max()
    assert out[0, 7, 0, 1].real == pytest.approx(tensor8.t[4 + 8, -2 + 8, -4 + 8], abs=1e-12 * peak)
    with pytest.raises(GridError):
        convolve_truncated(tensor8, np.zeros((8, 8, 4)))


def test_gaussian_reference_at_origin():
    assert gaussian_convolution_reference(np.zeros(3)) == pytest.approx(2.0 * math.pi**1.5)
    scaled = gaussian_convolution_reference(np.array([1.0, 2.0, 2.0]), alpha=2.0, k0=(1.0, 2.0, 2.0))
    assert scaled == pytest.approx(math.pi**1.5)
    with pytest.raises(ValueError):
        gaussian_convolution_reference(np.zeros(3), alpha=0.0)


def test_gaussian_reference_against_quadrature():
    s = 1.3

    def integrand(r):
        return 2.0 * math.pi * r * math.exp(-r * r) * math.log(abs((r + s) / (r - s))) / s

    inner, _ = scipy.integrate.quad(integrand, 0.0, s, limit=200, epsabs=1e-13)
    outer, _ = scipy.integrate.quad(integrand, s, np.inf, limit=200, epsabs=1e-13)
    value = gaussian_convolution_reference(np.array([s, 0.0, 0.0]))
    assert value == pytest.approx(inner + outer, rel=1e-8)


def test_gaussian_reference_decreases():
    k = np.stack([np.linspace(0.0, 5.0, 50), np.zeros(50), np.zeros(50)], axis=-1)
    values = gaussian_convolution_reference(k)
    assert (values > 0).all()
    assert (np.diff(values) < 0).all()


@pytest.mark.parametrize(
    "nk, bound",
    [
        (16, 20.44),
        (32, 0.5575),
        pytest.param(64, 3.434e-5, marks=pytest.mark.slow),
        pytest.param(128, 1e-12, marks=pytest.mark.slow),
    ],
)
def test_tkm_gaussian_table(nk, bound):
    row = tkm_gaussian_errors(nk, 16.0)
    assert row.nk == nk
    assert row.l_inf <= bound
    assert row.l_2 > 0.0
    assert row.seconds >= row.build_seconds > 0.0


def test_tkm_error_decreases():
    errors = [tkm_gaussian_errors(nk, 16.0).l_inf for nk in (8, 16, 32)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[1] / errors[2] >= 10.0


def _even_slice(nk, l_k, b=2.0):
    grid = build_grid(3, (-1.0, 1.0), 4, l_k, nk)
    k = grid.k_axis()
    kk = k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
    return np.exp(-b * kk), grid


def test_pdo_coulomb_is_odd_for_even_slice():
    f, _ = _even_slice(16, 6.4)
    tensor = build_convolution_tensor(16, 6.4)
    theta = apply_pdo_coulomb(f, (0.5, 0.2, 0.1), (0.0, 0.0, 0.0), tensor)
    scale = np.abs(theta).max()
    assert scale > 0.0
    inner = theta[1:, 1:, 1:]
    np.testing.assert_allclose(inner, -inner[::-1, ::-1, ::-1], atol=1e-10 * scale)


def test_pdo_coulomb_vanishes_at_center_for_even_slice():
    f, _ = _even_slice(8, 4.0)
    tensor = build_convolution_tensor(8, 4.0)
    theta = apply_pdo_coulomb(f, (0.3, 0.3, 0.3), (0.3, 0.3, 0.3), tensor)
    assert np.abs(theta).max() <= 1e-12


def test_pdo_coulomb_residual_check(tensor8):
    rng = np.random.default_rng(2)
    f = rng.random((8, 8, 8))
    checked = apply_pdo_coulomb(f, (0.5, -0.2, 0.1), (0.0, 0.0, 0.0), tensor8)
    fast = apply_pdo_coulomb(
        f, (0.5, -0.2, 0.1), (0.0, 0.0, 0.0), tensor8, PdoWorkspace(8, 4.0), check_residual=False
    )
    np.testing.assert_allclose(fast, checked, atol=1e-10 * np.abs(checked).max())
    np.testing.assert_array_equal(
        apply_pdo_coulomb(np.zeros((8, 8, 8)), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0), tensor8), 0.0
    )


def test_pdo_coulomb_rejects_bad_slices(tensor8):
    with pytest.raises(GridError):
        apply_pdo_coulomb(np.zeros((8, 8, 8), dtype=complex), (0, 0, 0), (0, 0, 0), tensor8)
    bad = np.zeros((8, 8, 8))
    bad[1, 1, 1] = np.inf
    with pytest.raises(NumericalError):
        apply_pdo_coulomb(bad, (0, 0, 0), (0, 0, 0), tensor8)


def test_discrete_mass_defect_decreases():
    defects = []
    for nk in (8, 16, 32):
        f, grid = _even_slice(nk, 6.4)
        tensor = build_convolution_tensor(nk, 6.4)
        theta = apply_pdo_coulomb(f, (0.5, 0.2, 0.1), (0.0, 0.0, 0.0), tensor)
        defects.append(discrete_mass_defect(theta, grid.dk))
    assert defects[0] > defects[1] > defects[2]


def test_c31():
    assert C31 == pytest.approx(2.0 * math.pi**2)


def test_pdo_quadratic_single_mode():
    grid = build_grid(1, (-2.0, 2.0), 8, 3.2, 32)
    k = grid.k_axis()
    x = grid.x_axis()
    values = np.tile(np.sin(math.pi * k / grid.l_k), (grid.nx + 1, 1))
    field = init_gaussian(grid, (0.0,), (0.0,))
    field.values[...] = values
    theta = apply_pdo_quadratic(field, 0.5)
    expected = 0.5 * x[:, None] * (math.pi / grid.l_k) * np.cos(math.pi * k / grid.l_k)[None, :]
    np.testing.assert_allclose(theta, expected, atol=1e-12)
    field.values[...] = 1.0
    np.testing.assert_allclose(apply_pdo_quadratic(field, 0.5), 0.0, atol=1e-13)


def test_pdo_quadratic_needs_1d():
    grid = build_grid(3, (-1.0, 1.0), 4, 1.0, 4)
    with pytest.raises(GridError):
        apply_pdo_quadratic(init_gaussian(grid, (0.0,) * 3, (0.0,) * 3), 1.0)
