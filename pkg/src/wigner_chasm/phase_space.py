"""Phase-space grids, Wigner fields, initial data, reductions and error metrics.

Fields are stored as dense tensors of shape ``(Nx+1,)*d + (Nk,)*d`` with the
k-axes fastest varying, so the values at one spatial point form a contiguous
``(Nk,)*d`` slab. All integrals use a uniform cell weight ``(h*dk)**d``.
"""

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft

from .errors import GridError, NumericalError

log = logging.getLogger(__name__)

Vector = Union[float, Sequence[float], np.ndarray]

# 1s orbital prefactor, phi_1s(x) = PHI_1S_NORM * exp(-|x|)
PHI_1S_NORM = 1.0 / (2.0 * math.sqrt(2.0) * math.pi**2)
HYDROGEN_RESIDUE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform grid over ``[x_min, x_max]^d x [-L_k, L_k)^d``.

    The x-axis has ``nx`` intervals and ``nx+1`` points including both ends.
    The k-axis has ``nk`` points ``k_j = -L_k + j*dk``; the right end ``+L_k``
    is excluded, which matches the periodic FFT convention. Every spatial
    axis shares the same extent, as do the momentum axes.
    """

    dim: int
    x_min: float
    x_max: float
    nx: int
    l_k: float
    nk: int

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dk(self) -> float:
        return 2.0 * self.l_k / self.nk

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return (self.nx + 1,) * self.dim

    @property
    def momentum_shape(self) -> Tuple[int, ...]:
        return (self.nk,) * self.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spatial_shape + self.momentum_shape

    @property
    def cell_volume(self) -> float:
        return (self.h * self.dk) ** self.dim

    def _check_axis(self, axis: int) -> None:
        if not 0 <= axis < self.dim:
            raise GridError(f"axis {axis} out of range for a {self.dim}-D grid")

    def x_axis(self, axis: int = 0) -> np.ndarray:
        """Grid points of spatial axis ``axis``."""
        self._check_axis(axis)
        return np.linspace(self.x_min, self.x_max, self.nx + 1)

    def k_axis(self, axis: int = 0) -> np.ndarray:
        """Grid points of momentum axis ``axis``."""
        self._check_axis(axis)
        return -self.l_k + self.dk * np.arange(self.nk)


def build_grid(
    dim: int, x_extent: Tuple[float, float], nx: int, l_k: float, nk: int
) -> PhaseSpaceGrid:
    """Validates the geometry and builds a PhaseSpaceGrid.

    Args:
        dim (int): Spatial dimension, 1 or 3.
        x_extent (Tuple[float, float]): ``(x_min, x_max)`` shared by all axes.
        nx (int): Number of spatial intervals per axis, at least 4.
        l_k (float): Half-width of the momentum box.
        nk (int): Number of momentum points per axis, even and at least 4.

    Returns:
        PhaseSpaceGrid: The grid.

    Raises:
        GridError: If any of the arguments have invalid values.
    """
    if dim not in (1, 3):
        raise GridError(f"dim must be 1 or 3, got {dim}")
    x_min, x_max = (float(v) for v in x_extent)
    if not (math.isfinite(x_min) and math.isfinite(x_max)) or x_max <= x_min:
        raise GridError(f"Invalid spatial extent [{x_min}, {x_max}]")
    if not math.isfinite(l_k) or l_k <= 0:
        raise GridError(f"L_k must be positive, got {l_k}")
    if nx < 4:
        raise GridError(f"Nx must be at least 4, got {nx}")
    if nk < 4:
        raise GridError(f"Nk must be at least 4, got {nk}")
    if nk % 2:
        raise GridError(f"Nk must be even, got {nk}")
    return PhaseSpaceGrid(
        dim=dim, x_min=x_min, x_max=x_max, nx=int(nx), l_k=float(l_k), nk=int(nk)
    )


@dataclass
class WignerField:
    """Sampled Wigner function f(x, k, t) on a PhaseSpaceGrid.

    Fields are plain value containers. Whoever mutates ``values`` owns it.
    """

    grid: PhaseSpaceGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.dtype.kind in "iub":
            values = values.astype(np.float64)
        if values.dtype not in (np.float32, np.float64):
            raise GridError(f"Field values must be real floats, got {values.dtype}")
        if values.shape != self.grid.shape:
            raise GridError(
                f"Field shape {values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.isfinite(values).all():
            raise NumericalError(f"Field at t={self.time} holds non-finite values")
        self.values = values

    def copy(self) -> "WignerField":
        return WignerField(self.grid, self.values.copy(), self.time)


@dataclass(frozen=True)
class ErrorReport:
    """Deviation of a numerical field from a reference at one time."""

    eps_inf: float
    eps_2: float
    eps_mass: float
    time: float

    def __post_init__(self) -> None:
        if min(self.eps_inf, self.eps_2, self.eps_mass) < 0:
            raise ValueError("Error metrics cannot be negative")


def _as_vector(value: Vector, dim: int, name: str) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if vec.shape != (dim,):
        raise GridError(f"{name} must have {dim} components, got {vec.shape}")
    return vec


@dataclass(frozen=True)
class GaussianWavepacket:
    """Coherent-state initial datum ``pi^-d exp(-a|x-x_c|^2 - b|k-k_c|^2)``."""

    center_x: Tuple[float, ...]
    center_k: Tuple[float, ...]
    a: float = 0.5
    b: float = 2.0

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"Gaussian widths must be positive, got a={self.a}, b={self.b}")
        if len(self.center_x) != len(self.center_k):
            raise ValueError("center_x and center_k must have the same dimension")

    @property
    def dim(self) -> int:
        return len(self.center_x)

    def __call__(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Evaluates the packet at points whose last axis holds the d coordinates."""
        x = np.asarray(x, dtype=np.float64)
        k = np.asarray(k, dtype=np.float64)
        dx2 = np.square(x - np.asarray(self.center_x)).sum(axis=-1)
        dk2 = np.square(k - np.asarray(self.center_k)).sum(axis=-1)
        return math.pi ** (-self.dim) * np.exp(-self.a * dx2 - self.b * dk2)

    def sample(self, grid: PhaseSpaceGrid) -> np.ndarray:
        """Samples the packet on every grid point as a separable outer product."""
        if grid.dim != self.dim:
            raise GridError(f"Packet is {self.dim}-D but grid is {grid.dim}-D")
        factors = [
            np.exp(-self.a * np.square(grid.x_axis(j) - self.center_x[j]))
            for j in range(grid.dim)
        ]
        factors += [
            np.exp(-self.b * np.square(grid.k_axis(j) - self.center_k[j]))
            for j in range(grid.dim)
        ]
        return math.pi ** (-grid.dim) * reduce(np.multiply.outer, factors)


def init_gaussian(
    grid: PhaseSpaceGrid,
    center_x: Vector,
    center_k: Vector,
    a: float = 0.5,
    b: float = 2.0,
    dtype: type = np.float64,
) -> WignerField:
    """Samples a normalized Gaussian wavepacket.

    Args:
        grid (PhaseSpaceGrid): Target grid.
        center_x (Vector): Spatial center, one component per axis.
        center_k (Vector): Momentum center, one component per axis.
        a (float): Spatial width parameter. Defaults to 1/2.
        b (float): Momentum width parameter. Defaults to 2.
        dtype (type): Storage precision, float32 or float64.

    Returns:
        WignerField: The sampled field at t=0.

    Raises:
        ValueError: If a or b are not positive or centers have the wrong size.
    """
    packet = GaussianWavepacket(
        tuple(_as_vector(center_x, grid.dim, "center_x")),
        tuple(_as_vector(center_k, grid.dim, "center_k")),
        a,
        b,
    )
    return WignerField(grid, packet.sample(grid).astype(dtype, copy=False))


def hydrogen_1s_orbital(r: np.ndarray) -> np.ndarray:
    return PHI_1S_NORM * np.exp(-np.abs(r))


def weyl_transform_1s(
    points: np.ndarray, grid: PhaseSpaceGrid, ny: int, batch: Optional[int] = None
) -> np.ndarray:
    """Discrete Weyl transform of the 1s density matrix at given spatial points.

    With ``dy = 2*pi/(Nk*dk)`` the sum over the offset index eta becomes a
    length-``ny`` FFT per axis, and ``k_zeta = zeta*dk`` lands on FFT index
    ``zeta*ny/Nk``.

    Args:
        points (np.ndarray): Spatial points, shape ``(P, 3)``.
        grid (PhaseSpaceGrid): Provides the momentum grid.
        ny (int): Offset samples per axis, a multiple of Nk.
        batch (Optional[int]): Points per FFT batch. Chosen from ``ny`` if None.

    Returns:
        np.ndarray: Real values of shape ``(P, Nk, Nk, Nk)``.

    Raises:
        NumericalError: If the discarded imaginary residue exceeds 1e-10
            relative to the peak value.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    nk = grid.nk
    if ny % nk:
        raise GridError(f"Ny={ny} must be a multiple of Nk={nk}")
    if batch is None:
        batch = max(1, (1 << 22) // ny**3)
    dy = 2.0 * math.pi / (nk * grid.dk)
    half_offsets = 0.5 * dy * scipy.fft.ifftshift(np.arange(-ny // 2, ny // 2))
    pick = ((np.arange(nk) - nk // 2) * (ny // nk)) % ny

    out = np.empty((len(points), nk, nk, nk))
    max_imag = 0.0
    for start in range(0, len(points), batch):
        x = points[start : start + batch]
        minus = [np.square(x[:, j, None] - half_offsets) for j in range(3)]
        plus = [np.square(x[:, j, None] + half_offsets) for j in range(3)]
        r_minus = np.sqrt(
            minus[0][:, :, None, None] + minus[1][:, None, :, None] + minus[2][:, None, None, :]
        )
        r_plus = np.sqrt(
            plus[0][:, :, None, None] + plus[1][:, None, :, None] + plus[2][:, None, None, :]
        )
        rho = hydrogen_1s_orbital(r_minus) * hydrogen_1s_orbital(r_plus)
        del r_minus, r_plus
        spectrum = scipy.fft.fftn(rho, axes=(1, 2, 3)) * dy**3
        spectrum = spectrum[:, pick][:, :, pick][:, :, :, pick]
        max_imag = max(max_imag, float(np.abs(spectrum.imag).max()))
        out[start : start + batch] = spectrum.real
    peak = float(np.abs(out).max())
    if max_imag > HYDROGEN_RESIDUE_TOLERANCE * peak:
        raise NumericalError(
            f"Weyl transform imaginary residue {max_imag:.3e} exceeds tolerance "
            f"relative to peak {peak:.3e}"
        )
    return out


def init_hydrogen_1s(
    grid: PhaseSpaceGrid, ny: int = 128, dtype: type = np.float64
) -> WignerField:
    """Samples the stationary Hydrogen 1s Wigner function.

    Args:
        grid (PhaseSpaceGrid): A 3-D grid.
        ny (int): FFT length per axis, a power of two that is at least Nk
            and a multiple of it. Defaults to 128.
        dtype (type): Storage precision.

    Returns:
        WignerField: The field at t=0.

    Raises:
        GridError: For a 1-D grid or an unsuitable ny.
        NumericalError: If the transform is not real to tolerance.
    """
    if grid.dim != 3:
        raise GridError("The Hydrogen 1s state needs a 3-D grid")
    if ny < grid.nk or ny & (ny - 1):
        raise GridError(f"Ny must be a power of two >= Nk={grid.nk}, got {ny}")
    axis = grid.x_axis()
    mesh = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    log.info("Hydrogen 1s transform over %d spatial points, Ny=%d", len(mesh), ny)
    slabs = weyl_transform_1s(mesh, grid, ny)
    return WignerField(grid, slabs.reshape(grid.shape).astype(dtype, copy=False))


def total_mass(field: WignerField) -> float:
    return float(field.values.sum(dtype=np.float64) * field.grid.cell_volume)


def reduced_wigner(field: WignerField, axis: int) -> np.ndarray:
    """Integrates a 3-D field over every axis pair except ``(x_j, k_j)``.

    Args:
        field (WignerField): A 3-D field.
        axis (int): The kept axis j, 0-based.

    Returns:
        np.ndarray: W_j with shape ``(Nx+1, Nk)``.

    Raises:
        GridError: For a 1-D field or an axis out of range.
    """
    grid = field.grid
    if grid.dim != 3:
        raise GridError("reduced_wigner needs a 3-D field")
    grid._check_axis(axis)
    others = [j for j in range(3) if j != axis]
    summed = tuple(others) + tuple(3 + j for j in others)
    return field.values.sum(axis=summed, dtype=np.float64) * (grid.h * grid.dk) ** 2


def spatial_marginal(field: WignerField) -> np.ndarray:
    """Integrates a 3-D field over x_3 and all of k, giving P(x_1, x_2)."""
    grid = field.grid
    if grid.dim != 3:
        raise GridError("spatial_marginal needs a 3-D field")
    return field.values.sum(axis=(2, 3, 4, 5), dtype=np.float64) * grid.h * grid.dk**3


def x_projection(field: WignerField) -> np.ndarray:
    """Spatial density along x_1, integrated over every other axis."""
    grid = field.grid
    summed = tuple(range(1, 2 * grid.dim))
    weight = grid.cell_volume / grid.h
    return field.values.sum(axis=summed, dtype=np.float64) * weight


def phase_space_moments(field: WignerField) -> Tuple[np.ndarray, np.ndarray]:
    """Mean position and mean momentum per axis, normalized by the mass.

    Raises:
        NumericalError: If the field has zero mass.
    """
    grid = field.grid
    values = field.values
    n_axes = 2 * grid.dim
    mass = values.sum(dtype=np.float64)
    if mass == 0:
        raise NumericalError("Moments of a field with zero mass are undefined")
    means = []
    for axis in range(n_axes):
        marginal = values.sum(
            axis=tuple(a for a in range(n_axes) if a != axis), dtype=np.float64
        )
        coords = grid.x_axis() if axis < grid.dim else grid.k_axis()
        means.append(float(coords @ marginal / mass))
    return np.array(means[: grid.dim]), np.array(means[grid.dim :])


def reflect_k(values: np.ndarray, dim: int) -> np.ndarray:
    """Applies ``k -> -k`` on the grid, index ``j -> (Nk - j) mod Nk`` per k-axis."""
    out = values
    for axis in range(dim, 2 * dim):
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


def error_metrics(
    numerical: WignerField, reference: WignerField, initial_mass: float
) -> ErrorReport:
    """Computes eps_inf, eps_2 and eps_mass of a field against a reference.

    Args:
        numerical (WignerField): The computed field.
        reference (WignerField): The reference on the same grid.
        initial_mass (float): Mass at t=0.

    Returns:
        ErrorReport: Metrics stamped with the numerical field's time.

    Raises:
        GridError: If the two fields live on different grids.
    """
    if numerical.grid != reference.grid:
        raise GridError("Cannot compare fields on different grids")
    diff = numerical.values.astype(np.float64) - reference.values
    return ErrorReport(
        eps_inf=float(np.abs(diff).max()),
        eps_2=float(np.sqrt(np.square(diff).sum() * numerical.grid.cell_volume)),
        eps_mass=abs(total_mass(numerical) - initial_mass),
        time=numerical.time,
    )
