"""Experiment orchestration: runs, TKM accuracy table and convergence studies."""

import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cache import TensorCache
from .config import ExperimentConfig, ExperimentKind, derive_config
from .dumps import load_field, write_matrix, write_table
from .errors import ConfigError
from .integrator import (
    CoulombPotential,
    HarmonicPotential,
    Potential,
    StepConfig,
    exact_harmonic_solution,
    make_pdo,
)
from .phase_space import (
    ErrorReport,
    GaussianWavepacket,
    PhaseSpaceGrid,
    WignerField,
    error_metrics,
    init_gaussian,
    init_hydrogen_1s,
    reduced_wigner,
    spatial_marginal,
    total_mass,
    x_projection,
)
from .runtime import SimulationResult, decompose, run_simulation
from .tkm import build_convolution_tensor, convolve_truncated, gaussian_convolution_reference
from .transport import Transport, ZmqTransport

STUDY_PARAMETERS = ("dx", "Nk", "n_nb")
# stencil lengths swept by an n_nb study without explicit values
N_NB_STUDY_VALUES = (5.0, 10.0, 15.0, 20.0, 30.0)


@dataclass(frozen=True)
class TkmRow:
    """One row of the TKM accuracy table.

    ``seconds`` covers the tensor build and the convolution; file I/O is
    excluded.
    """

    nk: int
    l_inf: float
    l_2: float
    seconds: float
    build_seconds: float


@dataclass(frozen=True)
class StudyResult:
    """Error series of a convergence study and its least-squares fit.

    For ``dx`` and ``Nk`` the slope is ``d log(error) / d log(value)``; for
    ``n_nb`` it is ``d log10(error) / d n_nb``.
    """

    parameter: str
    values: Tuple[float, ...]
    errors: Tuple[float, ...]
    slope: float


def tkm_gaussian_errors(nk: int, l_k: float) -> TkmRow:
    """Convolves ``exp(-|k|^2)`` with the truncated kernel and compares it to the closed form."""
    dk = 2.0 * l_k / nk
    axis = -l_k + dk * np.arange(nk)
    k = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    f = np.exp(-np.square(k).sum(axis=-1))
    start = time.perf_counter()
    tensor = build_convolution_tensor(nk, l_k)
    built = time.perf_counter()
    phi = convolve_truncated(tensor, f).real
    seconds = time.perf_counter() - start
    diff = phi - gaussian_convolution_reference(k)
    return TkmRow(
        nk=nk,
        l_inf=float(np.abs(diff).max()),
        l_2=float(np.sqrt(np.square(diff).sum() * dk**3)),
        seconds=seconds,
        build_seconds=built - start,
    )


def compare_dumps(path_a: str, path_b: str) -> ErrorReport:
    """Deviation of dump ``a`` from dump ``b``; ``eps_mass`` is their mass difference.

    Raises:
        DumpFormatError: If a file is not a field dump.
        GridError: If the dumps live on different grids.
    """
    a = load_field(path_a)
    b = load_field(path_b)
    return error_metrics(a, b, total_mass(b))


def _fit(x: Sequence[float], y: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.asarray(x, dtype=np.float64), np.asarray(y), 1)
    return float(slope)


def _floor(errors: Sequence[float]) -> np.ndarray:
    return np.maximum(np.asarray(errors, dtype=np.float64), np.finfo(np.float64).tiny)


def _write_summary(path: str, entries: Dict[str, str]) -> None:
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")


class WignerExperiment:
    """Main class of the wigner_chasm harness.

    It turns an ExperimentConfig into initial data, operators and a run of
    the runtime, and writes every result as text or binary dumps in the
    output directory. Convolution tensors go through a TensorCache.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        cache_location: Optional[str] = ".cache",
        logger: Optional[logging.Logger] = None,
    ) -> None:
        """Initializes the experiment.

        Args:
            config (ExperimentConfig): Validated configuration.
            cache_location (Optional[str]): Directory of the tensor cache.
                None or empty disables the cache. Defaults to ".cache".
            logger (Optional[logging.Logger]): A logger instance. If None, a
                new one is created.
        """
        if logger is None:
            self.logger = logging.getLogger(__name__)
        else:
            self.logger = logger
        self.config = config
        if cache_location:
            self.cache = TensorCache(cache_location, logger=self.logger)
        else:
            self.cache = TensorCache("", enabled=False, logger=self.logger)

    def _out_dir(self) -> str:
        os.makedirs(self.config.out, exist_ok=True)
        return self.config.out

    def initial_field(self, config: ExperimentConfig, grid: PhaseSpaceGrid) -> WignerField:
        kind = config.experiment
        if kind is ExperimentKind.HARMONIC2D:
            return init_gaussian(grid, (1.0,), (0.0,), dtype=config.dtype)
        if kind is ExperimentKind.HYDROGEN1S:
            return init_hydrogen_1s(grid, config.ny, dtype=config.dtype)
        if kind is ExperimentKind.ONE_PROTON:
            return init_gaussian(grid, (1.0, 0.0, 0.0), (0.0, 0.0, 0.0), dtype=config.dtype)
        if kind is ExperimentKind.TWO_PROTONS:
            return init_gaussian(grid, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), dtype=config.dtype)
        raise ConfigError(f"{kind.value} has no initial field", key="experiment")

    @staticmethod
    def potential(config: ExperimentConfig) -> Potential:
        kind = config.experiment
        if kind is ExperimentKind.HARMONIC2D:
            return HarmonicPotential(config.omega)
        if kind is ExperimentKind.TWO_PROTONS:
            return CoulombPotential(((-config.r, 0.0, 0.0), (config.r, 0.0, 0.0)))
        return CoulombPotential(((0.0, 0.0, 0.0),))

    def reference(
        self, config: ExperimentConfig, initial: WignerField
    ) -> Optional[Callable[[float], WignerField]]:
        """Reference solution of an experiment, if it has one."""
        grid = initial.grid
        if config.experiment is ExperimentKind.HARMONIC2D:
            packet = GaussianWavepacket((1.0,), (0.0,))
            return lambda t: exact_harmonic_solution(packet, t, config.omega, grid)
        if config.experiment is ExperimentKind.HYDROGEN1S:
            stationary = initial.values.astype(np.float64)
            return lambda t: WignerField(grid, stationary, t)
        return None

    def _transport(self, config: ExperimentConfig, grid: PhaseSpaceGrid) -> Optional[Transport]:
        if config.p == 1 or config.transport == "inprocess":
            return None
        patch_ids = [layout.patch_id for layout in decompose(grid, config.p)]
        return ZmqTransport(patch_ids, logger=self.logger)

    def simulate(
        self, config: ExperimentConfig, dump_dir: Optional[str] = None
    ) -> SimulationResult:
        """Runs one time-dependent experiment.

        Args:
            config (ExperimentConfig): Configuration of the run.
            dump_dir (Optional[str]): Where field dumps go; none if None.

        Returns:
            SimulationResult: Final field and recorded series.
        """
        if not config.experiment.time_dependent:
            raise ConfigError(f"{config.experiment.value} is not a time-dependent run")
        grid = config.grid()
        initial = self.initial_field(config, grid)
        potential = self.potential(config)
        tensor = None
        if isinstance(potential, CoulombPotential):
            tensor = self.cache.get_tensor(grid.nk, grid.l_k)
        workers = config.workers or None
        pdo = make_pdo(grid, potential, tensor, workers=workers or 1, logger=self.logger)
        step = StepConfig(config.tau, potential, config.n_nb, config.boundary)
        self.logger.info(
            "Simulating %s on %s grid, %d patch(es) per axis",
            config.experiment.value,
            "x".join(str(n) for n in grid.shape),
            config.p,
        )
        return run_simulation(
            initial,
            step,
            pdo,
            t_final=config.t_final,
            patches=config.p,
            transport=self._transport(config, grid),
            workers=workers,
            dump_every=config.dump_every if dump_dir is not None else 0,
            dump_dir=dump_dir,
            reference=self.reference(config, initial),
            logger=self.logger,
        )

    def run(self) -> str:
        """Runs the configured experiment and writes its outputs.

        Returns:
            str: The output directory.
        """
        if self.config.experiment is ExperimentKind.TKM_TABLE:
            self.run_tkm_table()
            return self.config.out
        out = self._out_dir()
        start = time.perf_counter()
        result = self.simulate(self.config, dump_dir=out)
        elapsed = time.perf_counter() - start
        self._write_run(out, result, elapsed)
        self.logger.info("Wrote results of %d steps to %s", result.steps, out)
        return out

    def _write_run(self, out: str, result: SimulationResult, elapsed: float) -> None:
        field = result.field
        dim = field.grid.dim
        write_table(
            os.path.join(out, "metrics.csv"),
            ["time", "eps_inf", "eps_2", "eps_mass"],
            [(m.time, m.eps_inf, m.eps_2, m.eps_mass) for m in result.metrics],
        )
        axes = [f"x{j + 1}" for j in range(dim)]
        write_table(
            os.path.join(out, "moments.csv"),
            ["time", "mass"] + [f"mean_{a}" for a in axes] + [f"mean_k{j + 1}" for j in range(dim)],
            [
                [m.time, m.mass] + list(m.mean_x) + list(m.mean_k)
                for m in result.moments
            ],
        )
        write_table(
            os.path.join(out, "exchange.csv"),
            ["step", "bytes"],
            [(i + 1, b) for i, b in enumerate(result.instrumentation.bytes_per_step)],
        )
        if dim == 3:
            write_matrix(
                os.path.join(out, "reduced_w1.csv"),
                reduced_wigner(field, 0),
                f"W_1(x_1, k_1) at t={field.time:g}",
            )
            write_matrix(
                os.path.join(out, "marginal.csv"),
                spatial_marginal(field),
                f"P(x_1, x_2) at t={field.time:g}",
            )
            write_matrix(
                os.path.join(out, "projection.csv"),
                np.column_stack((field.grid.x_axis(), x_projection(field))),
                f"x_1, projection at t={field.time:g}",
            )
        entries = dict(self.config.summary())
        entries["steps"] = str(result.steps)
        entries["final_time"] = f"{field.time:.17g}"
        entries["final_mass"] = f"{total_mass(field):.17g}"
        if result.metrics:
            last = result.metrics[-1]
            entries["eps_inf"] = f"{last.eps_inf:.17g}"
            entries["eps_2"] = f"{last.eps_2:.17g}"
            entries["eps_mass"] = f"{last.eps_mass:.17g}"
        instrumentation = result.instrumentation
        entries["messages"] = str(instrumentation.messages)
        entries["bytes"] = str(instrumentation.bytes)
        for phase, seconds in sorted(instrumentation.phase_seconds.items()):
            entries[f"seconds_{phase}"] = f"{seconds:.6f}"
        entries["seconds"] = f"{elapsed:.6f}"
        entries["dumps"] = str(len(result.dumps))
        _write_summary(os.path.join(out, "summary.txt"), entries)

    def run_tkm_table(self) -> List[TkmRow]:
        """Errors and timing of the truncated-kernel convolution of a Gaussian.

        Every Nk of ``nk_list`` builds its tensor from scratch, so the times
        include the precomputation. Rows go to ``tkm_table.csv``.

        Returns:
            List[TkmRow]: One row per Nk.
        """
        config = self.config
        if config.experiment is not ExperimentKind.TKM_TABLE:
            raise ConfigError("The TKM table needs experiment = tkm_table", key="experiment")
        rows = []
        for nk in config.nk_list:
            row = tkm_gaussian_errors(nk, config.l_k)
            self.logger.info(
                "TKM Nk=%d: l_inf=%.3e l_2=%.3e in %.3fs", nk, row.l_inf, row.l_2, row.seconds
            )
            rows.append(row)
        out = self._out_dir()
        write_table(
            os.path.join(out, "tkm_table.csv"),
            ["Nk", "l_inf", "l_2", "seconds", "build_seconds"],
            [(r.nk, r.l_inf, r.l_2, r.seconds, r.build_seconds) for r in rows],
        )
        entries = dict(config.summary())
        for r in rows:
            entries[f"l_inf_{r.nk}"] = f"{r.l_inf:.6e}"
        _write_summary(os.path.join(out, "summary.txt"), entries)
        return rows

    def _study_error(self, parameter: str, value: float) -> float:
        config = self.config
        kind = config.experiment
        if parameter == "dx":
            nx = round((config.x_max - config.x_min) / value)
            if nx < 1 or not math.isclose(nx * value, config.x_max - config.x_min):
                raise ConfigError(
                    f"dx={value} does not divide [{config.x_min}, {config.x_max}]",
                    key="values",
                )
            result = self.simulate(derive_config(config, nx=nx))
            return result.metrics[-1].eps_inf
        if parameter == "n_nb":
            result = self.simulate(derive_config(config, n_nb=int(value)))
            return result.metrics[-1].eps_mass
        nk = int(value)
        if kind is ExperimentKind.TKM_TABLE:
            return tkm_gaussian_errors(nk, config.l_k).l_inf
        variant = derive_config(config, nk=nk, ny=max(config.ny, nk))
        return self.simulate(variant).metrics[-1].eps_inf

    def run_convergence_study(self, parameter: str) -> StudyResult:
        """Sweeps one resolution parameter over ``values`` and fits the error decay.

        ``dx`` and ``n_nb`` run the harmonic oscillator against its exact
        solution; ``dx`` measures eps_inf at T, ``n_nb`` the mass deviation.
        ``Nk`` uses the TKM Gaussian table or the stationary Hydrogen 1s
        state. Results go to ``convergence_<parameter>.csv``.

        Args:
            parameter (str): ``dx``, ``Nk`` or ``n_nb``.

        Returns:
            StudyResult: Errors per value and the fitted slope.

        Raises:
            ConfigError: If the parameter does not fit the experiment or
                fewer than three values are given.
        """
        config = self.config
        kind = config.experiment
        if parameter not in STUDY_PARAMETERS:
            raise ConfigError(f"Unknown study parameter '{parameter}'")
        if parameter in ("dx", "n_nb") and kind is not ExperimentKind.HARMONIC2D:
            raise ConfigError(f"A {parameter} study needs experiment = harmonic2d")
        if parameter == "Nk" and kind not in (
            ExperimentKind.TKM_TABLE,
            ExperimentKind.HYDROGEN1S,
        ):
            raise ConfigError("An Nk study needs experiment = tkm_table or hydrogen1s")
        if parameter == "n_nb" and config.p == 1:
            raise ConfigError("An n_nb study needs p > 1", key="p")
        values = config.values
        if kind is ExperimentKind.TKM_TABLE and not values:
            values = tuple(float(nk) for nk in config.nk_list)
        if parameter == "n_nb":
            if "values" in config.defaults:
                values = N_NB_STUDY_VALUES
            if any(not float(v).is_integer() for v in values):
                raise ConfigError(
                    f"n_nb study values must be integers, got {', '.join(map(str, values))}",
                    key="values",
                )
        if len(values) < 3:
            raise ConfigError("A convergence study needs at least three values", key="values")

        errors = []
        for value in values:
            error = self._study_error(parameter, value)
            self.logger.info("Study %s=%g: error %.6e", parameter, value, error)
            errors.append(error)
        if parameter == "n_nb":
            slope = _fit(values, np.log10(_floor(errors)))
        else:
            slope = _fit(np.log(values), np.log(_floor(errors)))
        out = self._out_dir()
        write_table(
            os.path.join(out, f"convergence_{parameter}.csv"),
            [parameter, "error"],
            list(zip(values, errors)),
        )
        entries = dict(config.summary())
        entries["parameter"] = parameter
        entries["slope"] = f"{slope:.6f}"
        _write_summary(os.path.join(out, "summary.txt"), entries)
        return StudyResult(parameter, tuple(values), tuple(errors), slope)
