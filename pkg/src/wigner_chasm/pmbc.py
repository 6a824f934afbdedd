"""Perfectly matched boundary conditions (PMBC) for patch-local splines.

A line of ``N+1`` nodes is split into ``p`` patches of ``M+1`` nodes that
share their interface nodes. The slope of the global spline at an interface
node ``i*M`` is a linear functional of the samples whose weights decay like
``(2 - sqrt(3))^|j|``. Truncating it to ``n_nb`` neighbours on each side and
splitting it into two half-stencils lets each patch compute its share from
local samples only. The two halves are summed at the interface and used as
clamped boundary values of the patch spline.
"""

import enum
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .bspline import (
    BcKind,
    BoundaryCondition,
    solve_global_spline,
    solve_lines,
    spline_band,
    spline_inverse_rows,
)
from .errors import PmbcError

log = logging.getLogger(__name__)

MIN_STENCIL = 4


class Side(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


@dataclass(frozen=True)
class PmbcTable:
    """Truncated slope stencils for one ``(N, p, n_nb, bc)`` layout.

    Interface ``i`` (``1 <= i < p``) sits on node ``i*M``; its coefficients
    live at row ``i-1`` of ``c0``, ``c_minus`` and ``c_plus``. ``c_first`` and
    ``c_last`` close the two global ends when the global condition is natural.
    The table is immutable and shared by every patch, line and axis.
    """

    n: int
    p: int
    n_nb: int
    h: float
    bc: BoundaryCondition
    c0: np.ndarray
    c_minus: np.ndarray
    c_plus: np.ndarray
    c_first: Optional[np.ndarray]
    c_last: Optional[np.ndarray]
    local_band: np.ndarray

    @property
    def m(self) -> int:
        return self.n // self.p


@dataclass
class LocalSpline:
    eta_local: np.ndarray
    patch_id: int


def _slope_stencils(
    n: int, h: float, bc: BoundaryCondition, nodes: List[int]
) -> np.ndarray:
    """Weights of ``(eta_{i+1} - eta_{i-1}) / (2h)`` on samples, per node i."""
    rows = []
    for node in nodes:
        # eta_nu is matrix row nu + 1
        rows += [node, node + 2]
    inverse = spline_inverse_rows(n, bc, rows)
    # sample j enters the right-hand side as 6 * phi_j at column j + 1
    samples = inverse[:, 1 : n + 2] * 6.0 / (2.0 * h)
    return samples[1::2] - samples[0::2]


def build_pmbc_table(
    n: int, p: int, n_nb: int, bc: BoundaryCondition, h: float = 1.0
) -> PmbcTable:
    """Precomputes the PMBC coefficients of a patch layout.

    Args:
        n (int): Global number of intervals N.
        p (int): Number of patches, a divisor of N.
        n_nb (int): Stencil half-length, ``4 <= n_nb <= N/p``.
        bc (BoundaryCondition): Global closure of the line.
        h (float): Node spacing.

    Returns:
        PmbcTable: The coefficient table.

    Raises:
        PmbcError: If p does not divide N or n_nb is out of range.
    """
    if p < 1 or n % p:
        raise PmbcError(f"p={p} does not divide N={n}")
    m = n // p
    if n_nb < MIN_STENCIL:
        raise PmbcError(f"n_nb must be at least {MIN_STENCIL}, got {n_nb}")
    if n_nb > m:
        raise PmbcError(f"n_nb={n_nb} exceeds the patch size M={m}")
    if h <= 0:
        raise PmbcError(f"h must be positive, got {h}")

    interfaces = [i * m for i in range(1, p)]
    offsets = np.arange(1, n_nb + 1)
    c0 = np.zeros(p - 1)
    c_minus = np.zeros((p - 1, n_nb))
    c_plus = np.zeros((p - 1, n_nb))
    if interfaces:
        stencils = _slope_stencils(n, h, bc, interfaces)
        for row, node in enumerate(interfaces):
            c0[row] = stencils[row, node]
            c_minus[row] = stencils[row, node - offsets]
            c_plus[row] = stencils[row, node + offsets]

    c_first = c_last = None
    if bc.kind is BcKind.NATURAL:
        first, last = _slope_stencils(n, h, bc, [0, n])
        c_first = first[: n_nb + 1].copy()
        c_last = last[n - np.arange(n_nb + 1)].copy()

    log.debug("PMBC table N=%d p=%d n_nb=%d bc=%s", n, p, n_nb, bc.name)
    return PmbcTable(
        n=n,
        p=p,
        n_nb=n_nb,
        h=h,
        bc=bc,
        c0=c0,
        c_minus=c_minus,
        c_plus=c_plus,
        c_first=c_first,
        c_last=c_last,
        local_band=spline_band(m, BcKind.HERMITE, BcKind.HERMITE),
    )


def _stencil(
    table: PmbcTable, side: Side, patch_id: int
) -> Tuple[np.ndarray, np.ndarray]:
    m, n_nb = table.m, table.n_nb
    if side is Side.LEFT:
        local = np.arange(0, n_nb + 1)
        if patch_id == 0:
            return local, table.c_first  # type: ignore[return-value]
        row = patch_id - 1
        weights = np.concatenate(([0.5 * table.c0[row]], table.c_plus[row]))
    else:
        local = m - np.arange(0, n_nb + 1)
        if patch_id == table.p - 1:
            return local, table.c_last  # type: ignore[return-value]
        row = patch_id
        weights = np.concatenate(([0.5 * table.c0[row]], table.c_minus[row]))
    return local, weights


def pmbc_contrib(
    patch_samples: np.ndarray,
    table: PmbcTable,
    side: Side,
    patch_id: int,
    axis: int = 0,
) -> Union[float, np.ndarray]:
    """One patch's share of the slope on its left or right boundary node.

    On an interior interface this is the half-stencil
    ``c0/2 * phi(node) + sum_j c_j * phi(node -+ j)`` over the patch's own
    samples, and the neighbour supplies the other half. On a global end the
    full closure is returned: the truncated natural-spline slope, or the
    prescribed Hermite value.

    Args:
        patch_samples (np.ndarray): Samples with ``M+1`` nodes along ``axis``.
        table (PmbcTable): Coefficients of the layout.
        side (Side): Which boundary of the patch.
        patch_id (int): 0-based patch index along the line.
        axis (int): Axis of the line in ``patch_samples``.

    Returns:
        Union[float, np.ndarray]: The contribution, shaped like
        ``patch_samples`` without ``axis``.
    """
    samples = np.asarray(patch_samples)
    if samples.shape[axis] != table.m + 1:
        raise PmbcError(
            f"Patch has {samples.shape[axis]} nodes, layout expects {table.m + 1}"
        )
    if not 0 <= patch_id < table.p:
        raise PmbcError(f"patch_id {patch_id} out of range for p={table.p}")
    at_edge = (side is Side.LEFT and patch_id == 0) or (
        side is Side.RIGHT and patch_id == table.p - 1
    )
    if at_edge and table.bc.kind is BcKind.HERMITE:
        value = table.bc.phi_l if side is Side.LEFT else table.bc.phi_r
        plane = samples.shape[:axis] + samples.shape[axis + 1 :]
        return np.full(plane, value) if plane else value
    local, weights = _stencil(table, side, patch_id)
    result = np.tensordot(weights, np.take(samples, local, axis=axis), axes=(0, axis))
    return float(result) if np.ndim(result) == 0 else result


def assemble_local_spline(
    patch_samples: np.ndarray,
    phi_l: Union[float, np.ndarray],
    phi_r: Union[float, np.ndarray],
    table: PmbcTable,
    patch_id: int = 0,
    axis: int = 0,
) -> LocalSpline:
    """Solves the clamped ``(M+3)``-unknown patch system with the assembled slopes."""
    eta = solve_lines(
        patch_samples,
        table.h,
        (BcKind.HERMITE, phi_l),
        (BcKind.HERMITE, phi_r),
        axis=axis,
        band=table.local_band,
    )
    return LocalSpline(eta, patch_id)


def interface_slopes(samples: np.ndarray, table: PmbcTable) -> np.ndarray:
    """Assembles every patch boundary slope from a global sample line.

    Sequential reference of the distributed exchange: entry ``l`` holds
    ``(phi_L, phi_R)`` of patch ``l``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    m = table.m
    patches = [samples[l * m : (l + 1) * m + 1] for l in range(table.p)]
    xi = [
        (pmbc_contrib(s, table, Side.LEFT, l), pmbc_contrib(s, table, Side.RIGHT, l))
        for l, s in enumerate(patches)
    ]
    slopes = np.empty((table.p, 2))
    for l in range(table.p):
        left, right = xi[l]
        if l > 0:
            left += xi[l - 1][1]
        if l < table.p - 1:
            right += xi[l + 1][0]
        slopes[l] = (left, right)
    return slopes


def global_interface_slope(
    samples: np.ndarray, h: float, bc: BoundaryCondition, node: int
) -> float:
    """Untruncated ``(eta_{node+1} - eta_{node-1}) / (2h)`` of the global spline."""
    coeffs = solve_global_spline(samples, h, bc)
    return float((coeffs.eta[node + 2] - coeffs.eta[node]) / (2.0 * h))
