"""Characteristic advection and the LPC1 predictor-corrector step.

One step of size ``tau`` for ``df/dt + k.grad_x f = Theta[f]``::

    theta = Theta[f^n]
    advect f^n and theta along x -> x - k tau
    pred  = f^n(A) + tau theta(A)
    f^n+1 = f^n(A) + tau/2 theta(A) + tau/2 Theta[pred]

which costs one interpolation pass over two tensors and two operator
evaluations, and keeps three field-sized tensors alive.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .bspline import BoundaryCondition, shift_along, solve_spline_along
from .errors import CflError, GridError
from .phase_space import PhaseSpaceGrid, WignerField
from .tkm import (
    ConvolutionTensor,
    PdoWorkspace,
    batch_size,
    coulomb_theta_batch,
    quadratic_theta,
)

log = logging.getLogger(__name__)

# bytes per advection chunk
CHUNK_BUDGET = 64 * 1024 * 1024

PdoApply = Callable[..., np.ndarray]


@dataclass(frozen=True)
class HarmonicPotential:
    """``V(x) = omega x^2 / 2``, oscillating with angular frequency sqrt(omega)."""

    omega: float


@dataclass(frozen=True)
class CoulombPotential:
    """``V(x) = -sum_c Z_c / |x - x_c|``."""

    centers: Tuple[Tuple[float, float, float], ...]
    charges: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.centers:
            raise ValueError("A Coulomb potential needs at least one center")
        if not self.charges:
            object.__setattr__(self, "charges", (1.0,) * len(self.centers))
        if len(self.charges) != len(self.centers):
            raise ValueError("Coulomb centers and charges differ in length")


Potential = Union[HarmonicPotential, CoulombPotential]


@dataclass(frozen=True)
class StepConfig:
    """Parameters of one LPC1 step.

    ``potential=None`` means free streaming.
    """

    tau: float
    potential: Optional[Potential] = None
    n_nb: int = 20
    bc: BoundaryCondition = field(default_factory=BoundaryCondition.natural)

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau):
            raise ValueError(f"tau must be finite, got {self.tau}")

    def check_cfl(self, grid: PhaseSpaceGrid) -> None:
        """Rejects steps that move any point by more than one cell.

        Raises:
            CflError: If ``max|k| |tau| > h``.
        """
        travel = grid.l_k * abs(self.tau)
        if travel > grid.h * (1.0 + 1e-12):
            raise CflError(
                f"max|k| tau = {travel:.6g} exceeds h = {grid.h:.6g}; "
                f"reduce tau below {grid.h / grid.l_k:.6g}"
            )


def shift_cells(grid: PhaseSpaceGrid, tau: float, axis: int) -> np.ndarray:
    """``alpha(k) = k tau / h`` for the momentum axis paired with ``axis``.

    The result broadcasts against a field: size Nk on axis ``dim + axis`` and
    one elsewhere.
    """
    shape = [1] * (2 * grid.dim)
    shape[grid.dim + axis] = grid.nk
    return (grid.k_axis(axis) * tau / grid.h).reshape(shape)


class Advector(Protocol):
    def advect_many(self, arrays: Sequence[np.ndarray], tau: float) -> None:
        """Replaces every array in place by its values at ``x - k tau``."""
        ...


class GlobalAdvector:
    """Single-patch advection with one global spline per line.

    Tensor-product interpolation on the 4^d-point stencil is applied as one
    1-D shift per spatial axis; the per-axis operators commute. Work runs in
    chunks of the paired momentum axis and overwrites the input.
    """

    def __init__(
        self,
        grid: PhaseSpaceGrid,
        bc: Optional[BoundaryCondition] = None,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        self.grid = grid
        self.bc = bc if bc is not None else BoundaryCondition.natural()
        self.logger = logger if logger is not None else logging.getLogger(__name__)

    def _chunk(self, array: np.ndarray) -> int:
        per_k = array.nbytes // self.grid.nk
        return max(1, CHUNK_BUDGET // max(per_k * 4, 1))

    def advect_axis(self, array: np.ndarray, tau: float, axis: int) -> None:
        grid = self.grid
        alpha = shift_cells(grid, tau, axis)
        k_axis = grid.dim + axis
        step = self._chunk(array)
        for start in range(0, grid.nk, step):
            index = [slice(None)] * array.ndim
            index[k_axis] = slice(start, start + step)
            block = array[tuple(index)]
            eta = solve_spline_along(block, grid.h, self.bc, axis=axis)
            block[...] = shift_along(eta, alpha[tuple(index)], axis=axis)

    def advect_many(self, arrays: Sequence[np.ndarray], tau: float) -> None:
        for array in arrays:
            if array.shape != self.grid.shape:
                raise GridError(
                    f"Array shape {array.shape} does not match grid {self.grid.shape}"
                )
            for axis in range(self.grid.dim):
                self.advect_axis(array, tau, axis)


def advect(
    wigner: WignerField,
    tau: float,
    bc: Optional[BoundaryCondition] = None,
    advector: Optional[Advector] = None,
) -> WignerField:
    """Evaluates a field at the characteristic foot ``(x - k tau, k)``.

    Args:
        wigner (WignerField): Field at time t.
        tau (float): Step, ``max|k| |tau| <= h``.
        bc (Optional[BoundaryCondition]): Spline closure for the global
            advector. Natural if None.
        advector (Optional[Advector]): Backend; the global advector if None.

    Returns:
        WignerField: A new field with the same time stamp.

    Raises:
        CflError: If the shift exceeds one cell.
    """
    StepConfig(tau, bc=bc or BoundaryCondition.natural()).check_cfl(wigner.grid)
    if advector is None:
        advector = GlobalAdvector(wigner.grid, bc)
    out = wigner.values.copy()
    advector.advect_many([out], tau)
    return WignerField(wigner.grid, out, wigner.time)


class NullPdo:
    """Operator of a zero potential."""

    def __call__(self, values: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        if out is None:
            return np.zeros_like(values)
        out[...] = 0.0
        return out


class HarmonicPdo:
    def __init__(self, grid: PhaseSpaceGrid, omega: float) -> None:
        if grid.dim != 1:
            raise GridError("The harmonic operator needs a 1-D grid")
        self.grid = grid
        self.omega = omega
        self._x = grid.x_axis()

    def __call__(self, values: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        theta = quadratic_theta(values, self._x, self.grid.dk, self.omega)
        if out is None:
            return theta.astype(values.dtype, copy=False)
        out[...] = theta
        return out


class CoulombPdo:
    """Sum of attractive Coulomb operators over the centers of a potential.

    Spatial points are processed in batches; with ``workers > 1`` batches run
    on a thread pool, each thread with its own workspace. Operator values are
    computed in 64-bit regardless of the field precision.
    """

    def __init__(
        self,
        grid: PhaseSpaceGrid,
        potential: CoulombPotential,
        tensor: ConvolutionTensor,
        workers: int = 1,
        check_residual: bool = False,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        if grid.dim != 3:
            raise GridError("The Coulomb operator needs a 3-D grid")
        if tensor.nk != grid.nk or not math.isclose(tensor.l_k, grid.l_k):
            raise GridError(
                f"Tensor (Nk={tensor.nk}, L_k={tensor.l_k}) does not match grid "
                f"(Nk={grid.nk}, L_k={grid.l_k})"
            )
        if workers < 1:
            raise ValueError(f"workers must be positive, got {workers}")
        self.grid = grid
        self.potential = potential
        self.tensor = tensor
        self.workers = workers
        self.check_residual = check_residual
        self.logger = logger if logger is not None else logging.getLogger(__name__)
        axis = grid.x_axis()
        mesh = np.meshgrid(axis, axis, axis, indexing="ij")
        self._points = np.stack(mesh, axis=-1).reshape(-1, 3)
        self._batch = batch_size(grid.nk)

    def _theta(self, slabs: np.ndarray, points: np.ndarray, workspace: PdoWorkspace) -> np.ndarray:
        slabs = slabs.astype(np.float64, copy=False)
        total = np.zeros(slabs.shape)
        for center, charge in zip(self.potential.centers, self.potential.charges):
            x_tilde = points - np.asarray(center)
            total += charge * coulomb_theta_batch(
                slabs, x_tilde, self.tensor, workspace, self.check_residual
            )
        return total

    def __call__(self, values: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        nk = self.grid.nk
        slabs = values.reshape((-1,) + (nk,) * 3)
        if out is None:
            out = np.empty_like(values)
        target = out.reshape(slabs.shape)
        starts = list(range(0, len(slabs), self._batch))
        local = threading.local()

        def work(start: int) -> None:
            workspace = getattr(local, "workspace", None)
            if workspace is None:
                workspace = local.workspace = PdoWorkspace(nk, self.grid.l_k)
            stop = start + self._batch
            target[start:stop] = self._theta(
                slabs[start:stop], self._points[start:stop], workspace
            )

        if self.workers == 1:
            for start in starts:
                work(start)
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for _ in pool.map(work, starts):
                    pass
        return out


def make_pdo(
    grid: PhaseSpaceGrid,
    potential: Optional[Potential],
    tensor: Optional[ConvolutionTensor] = None,
    workers: int = 1,
    logger: Optional[logging.Logger] = None,
) -> PdoApply:
    """Builds the field-level operator for a potential.

    Raises:
        GridError: If the potential does not fit the grid dimension.
        ValueError: If a Coulomb potential comes without a tensor.
    """
    if potential is None:
        return NullPdo()
    if isinstance(potential, HarmonicPotential):
        return HarmonicPdo(grid, potential.omega)
    if tensor is None:
        raise ValueError("A Coulomb potential needs a convolution tensor")
    return CoulombPdo(grid, potential, tensor, workers=workers, logger=logger)


def lpc1_update(
    values: np.ndarray,
    tau: float,
    pdo_apply: PdoApply,
    advector: Advector,
) -> None:
    """Advances raw field values by one LPC1 step, in place."""
    theta = pdo_apply(values)
    advector.advect_many([values, theta], tau)
    predictor = values + tau * theta
    values += 0.5 * tau * theta
    pdo_apply(predictor, out=theta)
    del predictor
    values += 0.5 * tau * theta


def lpc1_step(
    wigner: WignerField,
    config: StepConfig,
    pdo_apply: PdoApply,
    advector: Optional[Advector] = None,
) -> WignerField:
    """Advances a field by one LPC1 step.

    Args:
        wigner (WignerField): Field at time t, left untouched.
        config (StepConfig): Step size, closure and stencil length.
        pdo_apply (PdoApply): Operator ``Theta[values, out=None]``.
        advector (Optional[Advector]): Advection backend; global if None.

    Returns:
        WignerField: Field at ``t + tau``.

    Raises:
        CflError: If the step violates the one-cell bound.
        NumericalError: From building the updated ``WignerField``, which
            rejects non-finite values.
    """
    config.check_cfl(wigner.grid)
    if advector is None:
        advector = GlobalAdvector(wigner.grid, config.bc)
    values = wigner.values.copy()
    lpc1_update(values, config.tau, pdo_apply, advector)
    return WignerField(wigner.grid, values, wigner.time + config.tau)


def exact_harmonic_solution(
    f0_sampler: Callable[[np.ndarray, np.ndarray], np.ndarray],
    t: float,
    omega: float,
    grid: PhaseSpaceGrid,
) -> WignerField:
    """Exact harmonic-oscillator field, transported along reverse-time orbits.

    Args:
        f0_sampler (Callable): ``f0(x, k)`` with coordinates on the last axis,
            e.g. a GaussianWavepacket.
        t (float): Time.
        omega (float): Potential strength; the period is ``2 pi / sqrt(omega)``.
        grid (PhaseSpaceGrid): A 1-D grid.

    Returns:
        WignerField: ``f0(x(t), k(t))`` at every grid point, stamped with t.
    """
    if grid.dim != 1:
        raise GridError("The exact harmonic solution is 1-D")
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    s = math.sqrt(omega)
    x, k = np.meshgrid(grid.x_axis(), grid.k_axis(), indexing="ij")
    c, sn = math.cos(s * t), math.sin(s * t)
    x_t = c * x - sn * k / s
    k_t = s * sn * x + c * k
    return WignerField(grid, np.asarray(f0_sampler(x_t[..., None], k_t[..., None])), t)
