"""Patch decomposition of x-space and the distributed advection runtime.

Every spatial axis of ``Nx+1`` nodes is split into ``p`` patches of ``M+1``
nodes sharing their interface nodes; momentum axes are never split. One
worker owns each patch. An advection pass along one axis runs four
bulk-synchronous phases, each a barrier over all patches:

1. compute the PMBC half-stencil slopes and send them to the neighbours;
2. receive, assemble the clamped local splines and shift every line;
3. send the shifted shared-plane values of the upwind owner;
4. receive and overwrite the downwind copies.

All sends of a phase are posted before any receive, so the fixed neighbour
graph cannot deadlock.
"""

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .bspline import BoundaryCondition, shift_along
from .dumps import dump_field
from .errors import GridError, NumericalError, TransportProtocolError
from .integrator import GlobalAdvector, PdoApply, StepConfig, lpc1_update, shift_cells
from .phase_space import (
    ErrorReport,
    PhaseSpaceGrid,
    WignerField,
    error_metrics,
    phase_space_moments,
    total_mass,
)
from .pmbc import PmbcTable, Side, assemble_local_spline, build_pmbc_table, pmbc_contrib
from .transport import (
    ExchangeMessage,
    InProcessTransport,
    MessageKind,
    NullTransport,
    PatchId,
    Transport,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchLayout:
    """One patch of a ``p^d`` decomposition.

    Along every axis the patch owns nodes ``[l M, (l+1) M]`` where ``l`` is
    its index on that axis.
    """

    patch_id: PatchId
    p: int
    m: int

    @property
    def dim(self) -> int:
        return len(self.patch_id)

    @property
    def rank(self) -> int:
        rank = 0
        for index in self.patch_id:
            rank = rank * self.p + index
        return rank

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(index * self.m for index in self.patch_id)

    @property
    def slices(self) -> Tuple[slice, ...]:
        """Spatial slices of the owned block in the global tensor."""
        return tuple(slice(o, o + self.m + 1) for o in self.offsets)

    def neighbor(self, axis: int, side: Side) -> Optional[PatchId]:
        index = self.patch_id[axis] + (-1 if side is Side.LEFT else 1)
        if not 0 <= index < self.p:
            return None
        return self.patch_id[:axis] + (index,) + self.patch_id[axis + 1 :]

    def neighbors(self) -> List[PatchId]:
        found = []
        for axis in range(self.dim):
            for side in (Side.LEFT, Side.RIGHT):
                other = self.neighbor(axis, side)
                if other is not None:
                    found.append(other)
        return found


def decompose(grid: PhaseSpaceGrid, p: int) -> List[PatchLayout]:
    """Splits every spatial axis into ``p`` patches.

    Args:
        grid (PhaseSpaceGrid): The grid.
        p (int): Patches per axis.

    Returns:
        List[PatchLayout]: ``p^d`` layouts in rank order.

    Raises:
        GridError: If p does not divide Nx.
    """
    if p < 1:
        raise GridError(f"p must be positive, got {p}")
    if grid.nx % p:
        raise GridError(f"p={p} does not divide Nx={grid.nx}")
    m = grid.nx // p
    return [
        PatchLayout(patch_id, p, m)
        for patch_id in itertools.product(range(p), repeat=grid.dim)
    ]


@dataclass
class PatchState:
    """Block of one tensor owned by a patch worker, plus its pending slopes."""

    layout: PatchLayout
    block: np.ndarray
    contrib: Dict[Side, np.ndarray] = field(default_factory=dict)


@dataclass
class Instrumentation:
    """Exchange counters and per-phase wall time of a run."""

    messages: int = 0
    bytes: int = 0
    phase_seconds: Dict[str, float] = field(default_factory=dict)
    bytes_per_step: List[int] = field(default_factory=list)

    def add_time(self, phase: str, seconds: float) -> None:
        self.phase_seconds[phase] = self.phase_seconds.get(phase, 0.0) + seconds


class PatchedAdvector:
    """Distributed advection with PMBC-closed local splines.

    Args:
        grid (PhaseSpaceGrid): The grid.
        p (int): Patches per axis, dividing Nx.
        n_nb (int): PMBC stencil half-length, ``4 <= n_nb <= Nx/p``.
        bc (Optional[BoundaryCondition]): Global closure. Natural if None.
        transport (Optional[Transport]): Message transport. In-process if
            None.
        workers (Optional[int]): Thread count. One per patch if None.
        logger (Optional[logging.Logger]): Logger.

    Raises:
        GridError: If p does not divide Nx.
        PmbcError: If n_nb does not fit the patch size.
    """

    def __init__(
        self,
        grid: PhaseSpaceGrid,
        p: int,
        n_nb: int = 20,
        bc: Optional[BoundaryCondition] = None,
        transport: Optional[Transport] = None,
        workers: Optional[int] = None,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        self.grid = grid
        self.layouts = decompose(grid, p)
        self.bc = bc if bc is not None else BoundaryCondition.natural()
        self.table: PmbcTable = build_pmbc_table(grid.nx, p, n_nb, self.bc, grid.h)
        self.transport = transport if transport is not None else InProcessTransport()
        self.logger = logger if logger is not None else logging.getLogger(__name__)
        self.instrumentation = Instrumentation()
        self.workers = workers if workers is not None else len(self.layouts)
        self._pool = ThreadPoolExecutor(max_workers=self.workers)

    def close(self) -> None:
        self._pool.shutdown()

    def __enter__(self) -> "PatchedAdvector":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _phase(self, name: str, work: Callable, patches: Sequence[PatchState]) -> None:
        start = time.perf_counter()
        for _ in self._pool.map(work, patches):
            pass
        elapsed = time.perf_counter() - start
        self.instrumentation.add_time(name, elapsed)
        self.logger.debug("Phase %s took %.6fs", name, elapsed)

    def scatter(self, array: np.ndarray) -> List[PatchState]:
        return [PatchState(layout, array[layout.slices].copy()) for layout in self.layouts]

    def gather(self, patches: Sequence[PatchState], array: np.ndarray) -> None:
        for state in patches:
            array[state.layout.slices] = state.block

    def exchange_pmbc(self, patches: Sequence[PatchState], axis: int) -> List[Tuple]:
        """Assembles the clamped slopes of every patch along ``axis``.

        Returns:
            List[Tuple]: ``(phi_L, phi_R)`` per patch, each shaped like the
            block without ``axis``.
        """
        table = self.table
        kind = MessageKind.PMBC

        def post(state: PatchState) -> None:
            layout = state.layout
            index = layout.patch_id[axis]
            for side in (Side.LEFT, Side.RIGHT):
                contrib = pmbc_contrib(state.block, table, side, index, axis=axis)
                state.contrib[side] = np.asarray(contrib)
                neighbor = layout.neighbor(axis, side)
                if neighbor is not None:
                    self.transport.send(
                        ExchangeMessage(
                            kind, layout.patch_id, neighbor, axis, side.value,
                            state.contrib[side],
                        )
                    )

        slopes: List[Tuple] = [()] * len(patches)

        def collect(state: PatchState) -> None:
            layout = state.layout
            pair = []
            for side in (Side.LEFT, Side.RIGHT):
                value = state.contrib[side]
                neighbor = layout.neighbor(axis, side)
                if neighbor is not None:
                    message = self.transport.receive(layout.patch_id, neighbor, kind, axis)
                    value = value + message.payload
                pair.append(value)
            slopes[layout.rank] = tuple(pair)

        self._phase("pmbc_send", post, patches)
        self._phase("pmbc_receive", collect, patches)
        return slopes

    def exchange_advection_corrections(
        self, patches: Sequence[PatchState], axis: int, alpha: np.ndarray
    ) -> None:
        """Makes every shared plane hold the upwind owner's shifted values.

        Lines with ``alpha > 0`` take the left patch's last plane, lines with
        ``alpha < 0`` the right patch's first plane; ``alpha == 0`` lines are
        left alone. The selection is sent as a mask along the paired momentum
        axis and nothing is sent when it is empty.
        """
        grid = self.grid
        k_pos = grid.dim + axis - 1
        alpha_k = np.asarray(alpha).reshape(-1)
        masks = {Side.RIGHT: alpha_k > 0, Side.LEFT: alpha_k < 0}
        kind = MessageKind.CORRECTION
        m = self.table.m

        def plane(state: PatchState, side: Side) -> np.ndarray:
            return np.take(state.block, 0 if side is Side.LEFT else m, axis=axis)

        def post(state: PatchState) -> None:
            layout = state.layout
            for side in (Side.LEFT, Side.RIGHT):
                neighbor = layout.neighbor(axis, side)
                mask = masks[side]
                if neighbor is None or not mask.any():
                    continue
                payload = np.compress(mask, plane(state, side), axis=k_pos)
                self.transport.send(
                    ExchangeMessage(
                        kind, layout.patch_id, neighbor, axis, side.value, payload, mask
                    )
                )

        def apply(state: PatchState) -> None:
            layout = state.layout
            for side in (Side.LEFT, Side.RIGHT):
                neighbor = layout.neighbor(axis, side)
                # the left neighbour sends its RIGHT plane and vice versa
                mask = masks[Side.RIGHT if side is Side.LEFT else Side.LEFT]
                if neighbor is None or not mask.any():
                    continue
                message = self.transport.receive(layout.patch_id, neighbor, kind, axis)
                if message.mask is None or not np.array_equal(message.mask, mask):
                    raise TransportProtocolError(
                        f"Correction mask from {neighbor} disagrees with {layout.patch_id}"
                    )
                index = [slice(None)] * state.block.ndim
                index[axis] = 0 if side is Side.LEFT else m
                shared = state.block[tuple(index)]
                lines = [slice(None)] * shared.ndim
                lines[k_pos] = np.flatnonzero(mask)
                shared[tuple(lines)] = message.payload

        self._phase("correction_send", post, patches)
        self._phase("correction_receive", apply, patches)

    def advect_patches(self, patches: Sequence[PatchState], tau: float) -> None:
        grid = self.grid
        for axis in range(grid.dim):
            slopes = self.exchange_pmbc(patches, axis)
            alpha = shift_cells(grid, tau, axis)

            def shift(state: PatchState) -> None:
                phi_l, phi_r = slopes[state.layout.rank]
                spline = assemble_local_spline(
                    state.block, phi_l, phi_r, self.table,
                    state.layout.patch_id[axis], axis=axis,
                )
                state.block[...] = shift_along(spline.eta_local, alpha, axis=axis)

            self._phase("advect", shift, patches)
            self.exchange_advection_corrections(patches, axis, alpha)

    def advect_many(self, arrays: Sequence[np.ndarray], tau: float) -> None:
        before = (self.transport.messages, self.transport.bytes)
        for array in arrays:
            if array.shape != self.grid.shape:
                raise GridError(
                    f"Array shape {array.shape} does not match grid {self.grid.shape}"
                )
            patches = self.scatter(array)
            self.advect_patches(patches, tau)
            self.gather(patches, array)
        self.instrumentation.messages += self.transport.messages - before[0]
        self.instrumentation.bytes += self.transport.bytes - before[1]


@dataclass(frozen=True)
class MomentRecord:
    time: float
    mass: float
    mean_x: np.ndarray
    mean_k: np.ndarray


@dataclass
class SimulationResult:
    """Final field and the series recorded at every dump point."""

    field: WignerField
    steps: int
    metrics: List[ErrorReport] = field(default_factory=list)
    moments: List[MomentRecord] = field(default_factory=list)
    instrumentation: Instrumentation = field(default_factory=Instrumentation)
    dumps: List[str] = field(default_factory=list)


def make_advector(
    grid: PhaseSpaceGrid,
    patches: int,
    step: StepConfig,
    transport: Optional[Transport] = None,
    workers: Optional[int] = None,
    logger: Optional[logging.Logger] = None,
) -> Union[GlobalAdvector, PatchedAdvector]:
    """Global advector for one patch, PatchedAdvector otherwise."""
    if patches == 1:
        return GlobalAdvector(grid, step.bc, logger)
    return PatchedAdvector(
        grid, patches, step.n_nb, step.bc, transport, workers, logger
    )


def count_steps(t_final: float, tau: float) -> int:
    """Number of steps of size tau to reach t_final.

    Raises:
        ValueError: If t_final is not a whole multiple of tau.
    """
    if t_final < 0:
        raise ValueError(f"t_final must be non-negative, got {t_final}")
    if t_final == 0:
        return 0
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    steps = round(t_final / tau)
    if not math.isclose(steps * tau, t_final, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"T={t_final} is not a multiple of tau={tau}")
    return int(steps)


def run_simulation(
    initial: WignerField,
    step: StepConfig,
    pdo: PdoApply,
    *,
    t_final: float,
    patches: int = 1,
    transport: Optional[Transport] = None,
    workers: Optional[int] = None,
    dump_every: int = 0,
    dump_dir: Optional[str] = None,
    reference: Optional[Callable[[float], WignerField]] = None,
    logger: Optional[logging.Logger] = None,
) -> SimulationResult:
    """Runs LPC1 steps from ``initial`` to ``t_final``.

    Metrics (against ``reference`` when given) and moments are recorded at
    step 0, every ``dump_every`` steps and the final step. Fields are dumped
    at the same points when ``dump_dir`` is set.

    Args:
        initial (WignerField): Initial field, left untouched.
        step (StepConfig): Step size, potential and closure.
        pdo (PdoApply): Field-level operator.
        t_final (float): Final time, a multiple of ``step.tau``.
        patches (int): Patches per axis.
        transport (Optional[Transport]): Transport for ``patches > 1``;
            in-process if None. Closed when the run ends.
        workers (Optional[int]): Worker threads, one per patch if None.
        dump_every (int): Record cadence in steps; 0 records only the ends.
        dump_dir (Optional[str]): Directory of ``field_<step>.chsm`` dumps.
        reference (Optional[Callable[[float], WignerField]]): Reference
            solution at a time.
        logger (Optional[logging.Logger]): Logger.

    Returns:
        SimulationResult: The final field and recorded series.

    Raises:
        CflError: If the step violates the one-cell bound.
        NumericalError: If the field stops being finite.
    """
    logger = logger if logger is not None else logging.getLogger(__name__)
    grid = initial.grid
    step.check_cfl(grid)
    n_steps = count_steps(t_final, step.tau)
    if dump_every < 0:
        raise ValueError(f"dump_every must be non-negative, got {dump_every}")
    if transport is None:
        transport = NullTransport() if patches == 1 else InProcessTransport()
    advector = make_advector(grid, patches, step, transport, workers, logger)
    values = initial.values.copy()
    initial_mass = total_mass(initial)
    result = SimulationResult(field=initial, steps=n_steps)

    def record(index: int, t: float) -> None:
        current = WignerField(grid, values, t)
        if reference is not None:
            result.metrics.append(error_metrics(current, reference(t), initial_mass))
        mean_x, mean_k = phase_space_moments(current)
        result.moments.append(MomentRecord(t, total_mass(current), mean_x, mean_k))
        if dump_dir is not None:
            path = f"{dump_dir}/field_{index:06d}.chsm"
            dump_field(current, path)
            result.dumps.append(path)
            logger.info("Dumped step %d (t=%.6g) to %s", index, t, path)

    logger.info(
        "Running %d steps of tau=%s on %d patch(es) per axis", n_steps, step.tau, patches
    )
    try:
        record(0, initial.time)
        for index in range(1, n_steps + 1):
            sent = transport.bytes
            lpc1_update(values, step.tau, pdo, advector)
            result.instrumentation.bytes_per_step.append(transport.bytes - sent)
            t = initial.time + index * step.tau
            if not np.isfinite(values).all():
                raise NumericalError(f"Field became non-finite at step {index} (t={t})")
            if index == n_steps or (dump_every and index % dump_every == 0):
                record(index, t)
    finally:
        if isinstance(advector, PatchedAdvector):
            result.instrumentation.phase_seconds = dict(
                advector.instrumentation.phase_seconds
            )
            advector.close()
        result.instrumentation.messages = transport.messages
        result.instrumentation.bytes = transport.bytes
        transport.close()
    result.field = WignerField(grid, values, initial.time + n_steps * step.tau)
    return result
