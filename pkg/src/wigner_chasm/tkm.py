"""Truncated kernel method (TKM) for the Coulomb pseudodifferential operator.

The twisted convolution with ``|k'|^-2`` is reduced to a plain convolution of
the smooth function ``f^s = f exp(-2i x~.k)`` with the truncated kernel
``U_D``. On a ``(Nk,)*3`` momentum grid that convolution is a discrete sum
against a precomputed real tensor ``T`` of shape ``(2Nk,)*3``. The tensor
depends only on ``(Nk, L_k)`` and is reused for every spatial point and time
step. It is applied with twofold zero-padded FFTs.
"""

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.fft
import scipy.special

from .errors import GridError, NumericalError
from .phase_space import WignerField

log = logging.getLogger(__name__)

# c_{3,1} = pi^{3/2} 2 Gamma(1/2) / Gamma(1)
C31 = 2.0 * math.pi**2
assert abs(C31 - math.pi**1.5 * 2.0 * math.gamma(0.5) / math.gamma(1.0)) < 1e-12 * C31

SERIES_THRESHOLD = 1e-4
TENSOR_RESIDUE_TOLERANCE = 1e-11
PDO_RESIDUE_TOLERANCE = 1e-10
# bytes of complex scratch per batched convolution
BATCH_BUDGET = 256 * 1024 * 1024


def sine_integral(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Si(x), the integral of sin(t)/t from 0 to x. Odd in x."""
    si, _ = scipy.special.sici(np.abs(np.asarray(x, dtype=np.float64)))
    value = np.sign(x) * si
    return float(value) if np.ndim(value) == 0 else value


def truncated_kernel_hat(
    xi_norm: Union[float, np.ndarray], d: float
) -> Union[float, np.ndarray]:
    """Fourier transform of ``|k|^-2`` truncated to the ball of diameter ``d``.

    Args:
        xi_norm (Union[float, np.ndarray]): ``|xi|``, non-negative.
        d (float): Truncation diameter.

    Returns:
        Union[float, np.ndarray]: ``4 pi Si(|xi| d) / |xi|``, with the
        two-term Taylor series used below ``|xi| d = 1e-4``.
    """
    xi = np.asarray(xi_norm, dtype=np.float64)
    if d <= 0:
        raise ValueError(f"Truncation diameter must be positive, got {d}")
    if np.any(xi < 0):
        raise ValueError("xi_norm must be non-negative")
    small = xi * d < SERIES_THRESHOLD
    safe = np.where(small, 1.0, xi)
    direct = 4.0 * math.pi * sine_integral(safe * d) / safe
    series = 4.0 * d * math.pi - (2.0 / 9.0) * d**3 * math.pi * xi**2
    value = np.where(small, series, direct)
    return float(value) if value.ndim == 0 else value


def truncation_diameter(l_k: float) -> float:
    """Diameter of ``[-L_k, L_k]^3``."""
    return 2.0 * math.sqrt(3.0) * l_k


@dataclass(frozen=True)
class ConvolutionTensor:
    """Real convolution tensor on the window ``p in [-Nk, Nk)^3``.

    ``t[a, b, c]`` holds ``T_{a-Nk, b-Nk, c-Nk}``. ``kernel_hat`` is the FFT of
    the same tensor in circular order, which is real because the circular
    kernel is even.
    """

    t: np.ndarray
    kernel_hat: np.ndarray
    d: float
    l_k: float
    nk: int

    @property
    def dk(self) -> float:
        return 2.0 * self.l_k / self.nk


def _kernel_plane(n0: int, nk: int, l_k: float, d: float) -> np.ndarray:
    m = 3 * nk
    freq = 2.0 * math.pi / (6.0 * l_k) * scipy.fft.fftfreq(m, 1.0 / m)
    xi = np.sqrt(freq[n0] ** 2 + freq[:, None] ** 2 + freq[None, :] ** 2)
    return np.asarray(truncated_kernel_hat(xi, d))


def _kernel_hat(t: np.ndarray) -> np.ndarray:
    spectrum = scipy.fft.fftn(scipy.fft.ifftshift(t))
    residue = float(np.abs(spectrum.imag).max())
    if residue > TENSOR_RESIDUE_TOLERANCE * float(np.abs(spectrum.real).max()):
        raise NumericalError(f"Kernel spectrum imaginary residue {residue:.3e}")
    return np.ascontiguousarray(spectrum.real)


def build_convolution_tensor(nk: int, l_k: float) -> ConvolutionTensor:
    """Evaluates the truncated-kernel convolution tensor.

    The ``(3Nk)^3`` backward transform is applied one axis at a time. Each
    plane of the first axis is transformed along the other two and cut to the
    ``2Nk`` window before the first axis is transformed, so the full
    ``(3Nk)^3`` complex buffer never exists.

    Args:
        nk (int): Momentum points per axis, even.
        l_k (float): Half-width of the momentum box.

    Returns:
        ConvolutionTensor: The tensor and its FFT image.

    Raises:
        GridError: For odd or too small Nk, or non-positive L_k.
        NumericalError: If the imaginary residue exceeds 1e-11 relative.
    """
    if nk < 2 or nk % 2:
        raise GridError(f"Nk must be even, got {nk}")
    if l_k <= 0:
        raise GridError(f"L_k must be positive, got {l_k}")
    start = time.perf_counter()
    d = truncation_diameter(l_k)
    m = 3 * nk
    window = np.arange(-nk, nk) % m

    partial = np.empty((m, 2 * nk, 2 * nk))
    max_imag = 0.0
    for n0 in range(m):
        plane = scipy.fft.ifft2(_kernel_plane(n0, nk, l_k, d))
        plane = plane[np.ix_(window, window)]
        max_imag = max(max_imag, float(np.abs(plane.imag).max()))
        partial[n0] = plane.real

    t = np.empty((2 * nk,) * 3)
    for col in range(2 * nk):
        line = scipy.fft.ifft(partial[:, col, :], axis=0)[window]
        max_imag = max(max_imag, float(np.abs(line.imag).max()))
        t[:, col, :] = line.real
    peak = float(np.abs(t).max())
    if max_imag > TENSOR_RESIDUE_TOLERANCE * peak:
        raise NumericalError(
            f"Convolution tensor imaginary residue {max_imag:.3e} exceeds "
            f"tolerance relative to peak {peak:.3e}"
        )
    log.info(
        "Built convolution tensor Nk=%d L_k=%s in %.3fs",
        nk,
        l_k,
        time.perf_counter() - start,
    )
    return ConvolutionTensor(t, _kernel_hat(t), d, float(l_k), nk)


def tensor_from_values(t: np.ndarray, l_k: float) -> ConvolutionTensor:
    """Rebuilds a ConvolutionTensor around a stored ``(2Nk,)*3`` tensor."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or len(set(t.shape)) != 1 or t.shape[0] % 2:
        raise GridError(f"Not a convolution tensor shape: {t.shape}")
    nk = t.shape[0] // 2
    return ConvolutionTensor(t, _kernel_hat(t), truncation_diameter(l_k), float(l_k), nk)


def batch_size(nk: int) -> int:
    """Momentum slabs per batched convolution within BATCH_BUDGET."""
    return max(1, BATCH_BUDGET // (16 * (2 * nk) ** 3))


def convolve_truncated(tensor: ConvolutionTensor, fs: np.ndarray) -> np.ndarray:
    """Discrete convolution ``Phi_p = sum_q T_{p-q} fs_q`` on the ``(Nk,)*3`` grid.

    ``fs`` may carry leading batch axes; the last three axes are momentum.
    Each batch is zero-padded to ``(2Nk,)*3``, multiplied by the kernel
    spectrum and transformed back.
    """
    fs = np.asarray(fs)
    nk = tensor.nk
    if fs.shape[-3:] != (nk,) * 3:
        raise GridError(f"Expected trailing shape {(nk,) * 3}, got {fs.shape[-3:]}")
    flat = fs.reshape((-1,) + (nk,) * 3)
    out = np.empty(flat.shape, dtype=np.complex128)
    batch = batch_size(nk)
    axes = (-3, -2, -1)
    for start in range(0, len(flat), batch):
        chunk = flat[start : start + batch]
        spectrum = scipy.fft.fftn(chunk, s=(2 * nk,) * 3, axes=axes)
        spectrum *= tensor.kernel_hat
        out[start : start + batch] = scipy.fft.ifftn(spectrum, axes=axes)[
            :, :nk, :nk, :nk
        ]
    return out.reshape(fs.shape)


def gaussian_convolution_reference(
    k: np.ndarray, alpha: float = 1.0, k0: Sequence[float] = (0.0, 0.0, 0.0)
) -> np.ndarray:
    """Closed form of ``(|k|^-2 * exp(-alpha^2 |k - k0|^2))(k)``.

    Args:
        k (np.ndarray): Points with the three coordinates on the last axis.
        alpha (float): Gaussian scale, positive.
        k0 (Sequence[float]): Gaussian center.

    Returns:
        np.ndarray: ``2 pi^{3/2} F(r) / (alpha r)`` with ``r = alpha |k - k0|``
        and F the Dawson function; ``2 pi^{3/2} / alpha`` at ``r = 0``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    r = alpha * np.linalg.norm(np.asarray(k, dtype=np.float64) - np.asarray(k0), axis=-1)
    safe = np.where(r == 0.0, 1.0, r)
    ratio = np.where(r == 0.0, 1.0, scipy.special.dawsn(safe) / safe)
    return 2.0 * math.pi**1.5 * ratio / alpha


@dataclass
class PdoWorkspace:
    """Per-worker scratch for Coulomb operator evaluation.

    Phase tables ``exp(-2i x~.k)`` are rebuilt per call from three
    one-dimensional factors rather than cached across spatial points.
    """

    nk: int
    l_k: float
    k_axis: np.ndarray = dataclasses.field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.k_axis = -self.l_k + (2.0 * self.l_k / self.nk) * np.arange(self.nk)

    @property
    def c31(self) -> float:
        return C31

    def phase(self, x_tilde: np.ndarray) -> np.ndarray:
        """``exp(-2i x~.k)`` for a batch of offsets ``x~`` of shape ``(B, 3)``."""
        x_tilde = np.atleast_2d(x_tilde)
        f = [np.exp(-2j * x_tilde[:, j, None] * self.k_axis) for j in range(3)]
        return f[0][:, :, None, None] * f[1][:, None, :, None] * f[2][:, None, None, :]


def coulomb_theta_batch(
    slabs: np.ndarray,
    x_tilde: np.ndarray,
    tensor: ConvolutionTensor,
    workspace: PdoWorkspace,
    check_residual: bool = False,
) -> np.ndarray:
    """Coulomb operator for one center at a batch of spatial points.

    Args:
        slabs (np.ndarray): Field slabs, shape ``(B, Nk, Nk, Nk)``.
        x_tilde (np.ndarray): Offsets ``x - x_A``, shape ``(B, 3)``.
        tensor (ConvolutionTensor): Precomputed tensor.
        workspace (PdoWorkspace): Phase-table scratch.
        check_residual (bool): Also evaluate ``I^-`` and verify that
            ``I^+ - I^-`` is real to 1e-10 relative.

    Returns:
        np.ndarray: Real operator values, shape ``(B, Nk, Nk, Nk)``.

    Raises:
        NumericalError: If the residual check fails.
    """
    ph = workspace.phase(x_tilde)
    plus = np.conj(ph) * convolve_truncated(tensor, slabs * ph)
    if not check_residual:
        return (4.0 / workspace.c31) * plus.imag
    minus = ph * convolve_truncated(tensor, slabs * np.conj(ph))
    # (I+ - I-) = (2 / (c31 i)) (plus - minus)
    diff = plus - minus
    residue = float(np.abs(diff.real).max())
    scale = float(np.abs(diff.imag).max())
    if residue > PDO_RESIDUE_TOLERANCE * max(scale, np.finfo(float).tiny):
        raise NumericalError(
            f"Coulomb operator imaginary residue {residue:.3e} exceeds tolerance "
            f"relative to {scale:.3e}"
        )
    return (2.0 / workspace.c31) * diff.imag


def apply_pdo_coulomb(
    field_slice: np.ndarray,
    x: Sequence[float],
    x_a: Sequence[float],
    tensor: ConvolutionTensor,
    workspace: Optional[PdoWorkspace] = None,
    check_residual: bool = True,
) -> np.ndarray:
    """Attractive Coulomb operator of one center at one spatial point.

    Args:
        field_slice (np.ndarray): ``f(x, .)`` on the ``(Nk,)*3`` grid, real.
        x (Sequence[float]): Spatial point.
        x_a (Sequence[float]): Center of the potential ``-1/|x - x_A|``.
        tensor (ConvolutionTensor): Precomputed tensor.
        workspace (Optional[PdoWorkspace]): Scratch, built if None.
        check_residual (bool): Verify real-valuedness. Defaults to True.

    Returns:
        np.ndarray: Real tensor of shape ``(Nk, Nk, Nk)``.
    """
    field_slice = np.asarray(field_slice)
    if np.iscomplexobj(field_slice):
        raise GridError("The field slice must be real")
    if not np.isfinite(field_slice).all():
        raise NumericalError("The field slice holds non-finite values")
    if workspace is None:
        workspace = PdoWorkspace(tensor.nk, tensor.l_k)
    x_tilde = np.asarray(x, dtype=np.float64) - np.asarray(x_a, dtype=np.float64)
    theta = coulomb_theta_batch(
        field_slice[None].astype(np.float64),
        x_tilde[None],
        tensor,
        workspace,
        check_residual,
    )
    return theta[0]


def spectral_k_derivative(values: np.ndarray, dk: float, axis: int = -1) -> np.ndarray:
    """Periodic Fourier derivative along ``axis`` with the Nyquist mode dropped."""
    n = values.shape[axis]
    spectrum = scipy.fft.rfft(values, axis=axis)
    wavenumber = 2.0 * math.pi * scipy.fft.rfftfreq(n, dk)
    factor = 1j * wavenumber
    if n % 2 == 0:
        factor[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = factor.size
    return scipy.fft.irfft(spectrum * factor.reshape(shape), n=n, axis=axis)


def quadratic_theta(
    values: np.ndarray, x: np.ndarray, dk: float, omega: float
) -> np.ndarray:
    """``omega x df/dk`` on raw ``(Nx+1, Nk)`` values."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise GridError("The quadratic operator acts on 1-D fields")
    return omega * np.asarray(x)[:, None] * spectral_k_derivative(values, dk, axis=1)


def apply_pdo_quadratic(wigner: WignerField, omega: float) -> np.ndarray:
    """Operator of the harmonic potential ``omega x^2 / 2`` on a 1-D field.

    Args:
        wigner (WignerField): A 1-D field.
        omega (float): Potential strength.

    Returns:
        np.ndarray: ``omega x df/dk`` with a spectral k-derivative, shaped
        like the field.

    Raises:
        GridError: For a 3-D field.
    """
    grid = wigner.grid
    if grid.dim != 1:
        raise GridError("The quadratic operator acts on 1-D fields")
    return quadratic_theta(wigner.values, grid.x_axis(), grid.dk, omega)


def discrete_mass_defect(theta: np.ndarray, dk: float) -> float:
    """``|sum_p theta(k_p)| dk^3`` of one momentum slab."""
    return abs(float(np.asarray(theta).sum(dtype=np.float64))) * dk**3
