"""Cubic B-spline basis, banded spline solves and constant-shift interpolation.

Spline coefficients ``eta_{-1} .. eta_{N+1}`` are stored at array index
``nu + 1``. The linear system is kept in LAPACK band storage with two
sub- and two super-diagonals: node rows ``eta_{i-1} + 4 eta_i + eta_{i+1}
= 6 phi_i`` plus one boundary row on each end, either clamped
(``eta_1 - eta_{-1} = 2 h phi_L``) or natural (``eta_{-1} - 2 eta_0 + eta_1 = 0``).
"""

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .errors import CflError, SplineError

BAND = (2, 2)
RESIDUAL_TOLERANCE = 1e-12

Scalar = Union[float, np.ndarray]


class BcKind(enum.Enum):
    NATURAL = "natural"
    HERMITE = "hermite"


@dataclass(frozen=True)
class BoundaryCondition:
    """Closure of the spline system at the two ends of a line.

    ``HERMITE`` prescribes the first derivatives ``phi_l``/``phi_r`` (clamped
    spline). ``NATURAL`` sets the second derivatives to zero.
    """

    kind: BcKind
    phi_l: float = 0.0
    phi_r: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.phi_l) and math.isfinite(self.phi_r)):
            raise SplineError("Hermite boundary derivatives must be finite")

    @classmethod
    def natural(cls) -> "BoundaryCondition":
        return cls(BcKind.NATURAL)

    @classmethod
    def hermite(cls, phi_l: float, phi_r: float) -> "BoundaryCondition":
        return cls(BcKind.HERMITE, float(phi_l), float(phi_r))

    @classmethod
    def neumann(cls) -> "BoundaryCondition":
        """Reflective closure, a clamped spline with zero slopes."""
        return cls.hermite(0.0, 0.0)

    @classmethod
    def parse(cls, name: str, phi_l: float = 0.0, phi_r: float = 0.0) -> "BoundaryCondition":
        """Builds a condition from its configuration name."""
        if name == "natural":
            return cls.natural()
        if name == "neumann":
            return cls.neumann()
        if name == "hermite":
            return cls.hermite(phi_l, phi_r)
        raise SplineError(f"Unknown boundary condition '{name}'")

    @property
    def name(self) -> str:
        if self.kind is BcKind.HERMITE and self.phi_l == 0.0 and self.phi_r == 0.0:
            return "neumann"
        return self.kind.value


@dataclass(frozen=True)
class SplineCoefficients:
    """Coefficients of ``s(x) = sum_nu eta_nu B_nu(x)`` on ``x_i = origin + i h``."""

    eta: np.ndarray
    h: float
    n: int
    origin: float = 0.0

    def __post_init__(self) -> None:
        if self.eta.shape[0] != self.n + 3:
            raise SplineError(
                f"Expected {self.n + 3} coefficients for N={self.n}, got {self.eta.shape[0]}"
            )

    def evaluate(self, x: Union[float, np.ndarray]) -> np.ndarray:
        """Evaluates the spline at arbitrary points inside ``[x_0, x_N]``."""
        t = (np.asarray(x, dtype=np.float64) - self.origin) / self.h
        i = np.clip(np.floor(t).astype(int), 0, self.n - 1)
        u = t - i
        u2 = u * u
        u3 = u2 * u
        # uniform cubic B-spline pieces for eta_{i-1}, eta_i, eta_{i+1}, eta_{i+2}
        w = (
            (1.0 - u) ** 3 / 6.0,
            (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
            (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0,
        )
        return sum(w[m] * self.eta[i + m] for m in range(4))


def bspline_eval(
    nu: int, x: Union[float, np.ndarray], origin: float, h: float
) -> Union[float, np.ndarray]:
    """Evaluates the cubic B-spline ``B_nu`` centred at ``origin + nu*h``.

    Args:
        nu (int): Basis index.
        x (Union[float, np.ndarray]): Evaluation point(s).
        origin (float): Position of node 0.
        h (float): Node spacing, positive.

    Returns:
        Union[float, np.ndarray]: The basis value, zero outside ``|x - x_nu| < 2h``.
    """
    if h <= 0:
        raise SplineError(f"h must be positive, got {h}")
    t = np.abs((np.asarray(x, dtype=np.float64) - (origin + nu * h)) / h)
    inner = 2.0 / 3.0 - t**2 + 0.5 * t**3
    outer = (2.0 - t) ** 3 / 6.0
    value = np.where(t <= 1.0, inner, np.where(t < 2.0, outer, 0.0))
    return float(value) if value.ndim == 0 else value


def spline_band(n: int, left: BcKind, right: BcKind) -> np.ndarray:
    """Band storage of the ``(n+3) x (n+3)`` spline matrix for N = n intervals."""
    size = n + 3
    dense_rows = {}
    if left is BcKind.HERMITE:
        dense_rows[0] = {0: -1.0, 2: 1.0}
    else:
        dense_rows[0] = {0: 1.0, 1: -2.0, 2: 1.0}
    if right is BcKind.HERMITE:
        dense_rows[size - 1] = {size - 3: -1.0, size - 1: 1.0}
    else:
        dense_rows[size - 1] = {size - 3: 1.0, size - 2: -2.0, size - 1: 1.0}
    lower, upper = BAND
    ab = np.zeros((lower + upper + 1, size))
    for row in range(1, size - 1):
        for col, value in ((row - 1, 1.0), (row, 4.0), (row + 1, 1.0)):
            ab[upper + row - col, col] = value
    for row, entries in dense_rows.items():
        for col, value in entries.items():
            ab[upper + row - col, col] = value
    return ab


def transpose_band(ab: np.ndarray, lower: int, upper: int) -> np.ndarray:
    """Band storage of the transpose; the result has ``(upper, lower)`` bands."""
    n = ab.shape[1]
    abt = np.zeros_like(ab)
    for offset in range(-upper, lower + 1):
        # A[i + offset, i] moves to A^T[i, i + offset]
        for i in range(max(0, -offset), min(n, n - offset)):
            abt[lower - offset, i + offset] = ab[upper + offset, i]
    return abt


def _solve(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve_banded(BAND, ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise SplineError("Singular spline system") from e


def _boundary_value(value: Scalar, like: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=np.float64), like.shape[1:])


def solve_lines(
    values: np.ndarray,
    h: float,
    left: Tuple[BcKind, Scalar],
    right: Tuple[BcKind, Scalar],
    axis: int = 0,
    band: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solves for spline coefficients of every line of ``values`` along ``axis``.

    Args:
        values (np.ndarray): Samples, ``N+1`` of them along ``axis``.
        h (float): Node spacing.
        left (Tuple[BcKind, Scalar]): Left closure and its derivative value,
            a scalar or an array shaped like ``values`` without ``axis``.
        right (Tuple[BcKind, Scalar]): Right closure, likewise.
        axis (int): Axis along which lines run.
        band (Optional[np.ndarray]): Precomputed band storage matching
            ``left``/``right``; built on the fly if None.

    Returns:
        np.ndarray: Coefficients with ``N+3`` entries along ``axis``.
    """
    moved = np.moveaxis(np.asarray(values), axis, 0)
    n = moved.shape[0] - 1
    if n < 3:
        raise SplineError(f"A spline needs at least 4 nodes, got {n + 1}")
    rhs = np.empty((n + 3,) + moved.shape[1:])
    rhs[1:-1] = 6.0 * moved
    rhs[0] = 2.0 * h * _boundary_value(left[1], moved) if left[0] is BcKind.HERMITE else 0.0
    rhs[-1] = 2.0 * h * _boundary_value(right[1], moved) if right[0] is BcKind.HERMITE else 0.0
    ab = spline_band(n, left[0], right[0]) if band is None else band
    eta = _solve(ab, rhs.reshape(n + 3, -1)).reshape(rhs.shape)
    return np.moveaxis(eta, 0, axis)


def solve_spline_along(
    values: np.ndarray, h: float, bc: BoundaryCondition, axis: int = 0
) -> np.ndarray:
    """Global spline solve for every line along ``axis`` with one closure."""
    return solve_lines(values, h, (bc.kind, bc.phi_l), (bc.kind, bc.phi_r), axis)


def solve_global_spline(
    samples: Sequence[float], h: float, bc: BoundaryCondition, origin: float = 0.0
) -> SplineCoefficients:
    """Solves the spline coefficients interpolating ``samples`` on a uniform line.

    Args:
        samples (Sequence[float]): ``N+1`` node values, N >= 3.
        h (float): Node spacing.
        bc (BoundaryCondition): End closure.
        origin (float): Position of node 0.

    Returns:
        SplineCoefficients: ``eta_{-1} .. eta_{N+1}``.

    Raises:
        SplineError: If fewer than 4 samples are given or the residual check fails.
    """
    phi = np.asarray(samples, dtype=np.float64)
    eta = solve_spline_along(phi, h, bc)
    n = phi.shape[0] - 1
    residual = spline_residual(eta, phi, h, bc)
    scale = max(float(np.abs(phi).max()), abs(bc.phi_l) * h, abs(bc.phi_r) * h, 1e-300)
    if residual > RESIDUAL_TOLERANCE * 6.0 * scale:
        raise SplineError(f"Spline residual {residual:.3e} above tolerance")
    return SplineCoefficients(eta, h, n, origin)


def spline_residual(
    eta: np.ndarray, samples: np.ndarray, h: float, bc: BoundaryCondition
) -> float:
    """Max-norm residual ``|A eta - rhs|`` of a single-line solve."""
    n = samples.shape[0] - 1
    ab = spline_band(n, bc.kind, bc.kind)
    lower, upper = BAND
    product = np.zeros(n + 3)
    for row in range(n + 3):
        for col in range(max(0, row - lower), min(n + 3, row + upper + 1)):
            product[row] += ab[upper + row - col, col] * eta[col]
    rhs = np.concatenate(([0.0], 6.0 * samples, [0.0]))
    if bc.kind is BcKind.HERMITE:
        rhs[0] = 2.0 * h * bc.phi_l
        rhs[-1] = 2.0 * h * bc.phi_r
    return float(np.abs(product - rhs).max())


def spline_inverse_rows(
    n: int, bc: BoundaryCondition, rows: Sequence[int]
) -> np.ndarray:
    """Rows of the inverse spline matrix, one transposed banded solve per row.

    Args:
        n (int): Number of intervals N.
        bc (BoundaryCondition): Closure, which fixes the matrix.
        rows (Sequence[int]): Matrix row indices (coefficient ``eta_nu`` is row ``nu+1``).

    Returns:
        np.ndarray: Shape ``(len(rows), n+3)``.
    """
    ab = spline_band(n, bc.kind, bc.kind)
    lower, upper = BAND
    abt = transpose_band(ab, lower, upper)
    unit = np.zeros((n + 3, len(rows)))
    unit[list(rows), np.arange(len(rows))] = 1.0
    try:
        inverse_t = scipy.linalg.solve_banded((upper, lower), abt, unit)
    except np.linalg.LinAlgError as e:
        raise SplineError("Singular spline system") from e
    return inverse_t.T


def shift_weights(alpha: float) -> Tuple[float, float, float, float]:
    """Interpolation weights for a shift of ``|alpha|`` cells.

    Args:
        alpha (float): Shift in units of h; only its magnitude is used and it
            must not exceed one cell.

    Returns:
        Tuple[float, float, float, float]: ``(b1, b2, b3, b4)``.

    Raises:
        CflError: If ``|alpha| > 1``.
    """
    a = abs(float(alpha))
    if a > 1.0:
        raise CflError(f"Shift of {a} cells exceeds one cell")
    return tuple(float(w) for w in _weights(np.float64(a)))  # type: ignore[return-value]


def _weights(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    c = 1.0 - a
    b1 = c**3 / 6.0
    b2 = -(c**3) / 2.0 + c**2 / 2.0 + c / 2.0 + 1.0 / 6.0
    b3 = -(a**3) / 2.0 + a**2 / 2.0 + a / 2.0 + 1.0 / 6.0
    b4 = a**3 / 6.0
    return b1, b2, b3, b4


def shift_along(eta: np.ndarray, alpha: Union[float, np.ndarray], axis: int = 0) -> np.ndarray:
    """Evaluates ``phi(x_j - alpha h)`` at every node from coefficients along ``axis``.

    ``alpha`` may vary across lines; it must broadcast against ``eta`` with
    size one along ``axis``. Non-negative shifts read ``eta_{j-2} .. eta_{j+1}``,
    negative ones ``eta_{j-1} .. eta_{j+2}``; the ghosts ``eta_{-2}`` and
    ``eta_{N+2}`` are zero.

    Raises:
        CflError: If any ``|alpha| > 1``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size and float(np.abs(alpha).max()) > 1.0:
        raise CflError(f"Shift of {float(np.abs(alpha).max())} cells exceeds one cell")
    axis %= eta.ndim
    moved = np.moveaxis(eta, axis, 0)
    if alpha.ndim:
        line_shape = eta.shape[:axis] + (1,) + eta.shape[axis + 1 :]
        alpha = np.moveaxis(np.broadcast_to(alpha, line_shape), axis, 0)
    n = moved.shape[0] - 3
    pad = [(1, 1)] + [(0, 0)] * (moved.ndim - 1)
    ext = np.pad(moved, pad)
    b1, b2, b3, b4 = _weights(np.abs(alpha))
    forward = alpha >= 0
    zero = np.zeros_like(b1)
    taps = (
        np.where(forward, b4, zero),
        np.where(forward, b3, b1),
        b2,
        np.where(forward, b1, b3),
        np.where(forward, zero, b4),
    )
    out = sum(tap * ext[m : m + n + 1] for m, tap in enumerate(taps))
    return np.moveaxis(out, 0, axis)


def interpolate_shifted(coeffs: SplineCoefficients, alpha: float) -> np.ndarray:
    """Values ``phi(x_j - alpha h)`` for ``j = 0..N`` from one line of coefficients."""
    shift_weights(alpha)
    return shift_along(coeffs.eta, alpha)
