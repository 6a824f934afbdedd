"""Plain-text experiment configuration.

A configuration is a list of ``key = value`` lines. ``#`` starts a comment and
blank lines are ignored. Keys are case-sensitive and may appear once.
"""

import enum
import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .bspline import BoundaryCondition
from .errors import ConfigError
from .phase_space import PhaseSpaceGrid, build_grid

log = logging.getLogger(__name__)

# proton half-distance of the two-center run, 0.325 Angstrom
PROTON_HALF_DISTANCE = 0.614161
HARMONIC_OMEGA = (math.pi / 5.0) ** 2


class ExperimentKind(enum.Enum):
    TKM_TABLE = "tkm_table"
    HARMONIC2D = "harmonic2d"
    HYDROGEN1S = "hydrogen1s"
    ONE_PROTON = "one_proton"
    TWO_PROTONS = "two_protons"

    @property
    def dim(self) -> int:
        return 1 if self is ExperimentKind.HARMONIC2D else 3

    @property
    def time_dependent(self) -> bool:
        return self is not ExperimentKind.TKM_TABLE


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters.

    Attributes mirror the configuration keys: ``nx``/``nk`` are ``Nx``/``Nk``,
    ``l_k`` is ``L_k``, ``ny`` is ``Ny``, ``t_final`` is ``T``, ``r`` is
    ``R``. ``defaults`` names every key whose value was not given.
    """

    experiment: ExperimentKind
    nx: int = 0
    nk: int = 0
    x_min: float = 0.0
    x_max: float = 0.0
    l_k: float = 0.0
    ny: int = 0
    tau: float = 0.0
    t_final: float = 0.0
    dump_every: int = 20
    n_nb: int = 20
    p: int = 1
    bc: str = "natural"
    phi_l: float = 0.0
    phi_r: float = 0.0
    precision: str = "f64"
    omega: float = HARMONIC_OMEGA
    r: float = PROTON_HALF_DISTANCE
    out: str = "out"
    transport: str = "inprocess"
    workers: int = 0
    nk_list: Tuple[int, ...] = ()
    values: Tuple[float, ...] = ()
    defaults: Tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.experiment.dim

    @property
    def dtype(self) -> type:
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def boundary(self) -> BoundaryCondition:
        return BoundaryCondition.parse(self.bc, self.phi_l, self.phi_r)

    def grid(self) -> PhaseSpaceGrid:
        return build_grid(self.dim, (self.x_min, self.x_max), self.nx, self.l_k, self.nk)

    def summary(self) -> Dict[str, str]:
        """Every parameter as ``key -> text``, defaults marked."""
        out: Dict[str, str] = {}
        for key, attr in CONFIG_KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, enum.Enum):
                text = value.value
            elif isinstance(value, tuple):
                text = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
            else:
                text = str(value)
            if key in self.defaults:
                text += " (default)"
            out[key] = text
        return out


# configuration key -> ExperimentConfig attribute
CONFIG_KEYS: Dict[str, str] = {
    "experiment": "experiment",
    "Nx": "nx",
    "Nk": "nk",
    "x_min": "x_min",
    "x_max": "x_max",
    "L_k": "l_k",
    "Ny": "ny",
    "tau": "tau",
    "T": "t_final",
    "dump_every": "dump_every",
    "n_nb": "n_nb",
    "p": "p",
    "bc": "bc",
    "phi_L": "phi_l",
    "phi_R": "phi_r",
    "precision": "precision",
    "omega": "omega",
    "R": "r",
    "out": "out",
    "transport": "transport",
    "workers": "workers",
    "nk_list": "nk_list",
    "values": "values",
}

CHOICES: Dict[str, Tuple[str, ...]] = {
    "bc": ("natural", "neumann", "hermite"),
    "precision": ("f32", "f64"),
    "transport": ("inprocess", "zmq"),
}

# desk-scale defaults per experiment, then the settings of the reference runs
# they deviate from
DEFAULTS: Dict[ExperimentKind, Dict[str, Any]] = {
    ExperimentKind.TKM_TABLE: {
        "L_k": 16.0,
        "nk_list": (8, 16, 32, 64, 80, 128),
    },
    ExperimentKind.HARMONIC2D: {
        "Nx": 240,
        "Nk": 512,
        "x_min": -12.0,
        "x_max": 12.0,
        "L_k": 6.4,
        "p": 4,
        "omega": HARMONIC_OMEGA,
        "values": (0.3, 0.2, 0.1),
    },
    ExperimentKind.HYDROGEN1S: {
        "Nx": 20,
        "Nk": 16,
        "Ny": 32,
        "x_min": -9.0,
        "x_max": 9.0,
        "L_k": 6.4,
        "n_nb": 15,
        "values": (8, 16, 32),
    },
    ExperimentKind.ONE_PROTON: {
        "Nx": 20,
        "Nk": 16,
        "x_min": -9.0,
        "x_max": 9.0,
        "L_k": 4.8,
        "n_nb": 15,
    },
    ExperimentKind.TWO_PROTONS: {
        "Nx": 20,
        "Nk": 16,
        "x_min": -9.0,
        "x_max": 9.0,
        "L_k": 4.8,
        "n_nb": 15,
        "R": PROTON_HALF_DISTANCE,
    },
}

REFERENCE_SETTINGS: Dict[ExperimentKind, Dict[str, Any]] = {
    ExperimentKind.HYDROGEN1S: {"Nx": 60, "Nk": 64, "p": 4, "precision": "f32"},
    ExperimentKind.ONE_PROTON: {"Nx": 80, "Nk": 64, "p": 4, "precision": "f32"},
    ExperimentKind.TWO_PROTONS: {"Nx": 60, "Nk": 64, "p": 4, "precision": "f32"},
}

# keys that only matter to some experiments
SCOPED_KEYS: Dict[str, Tuple[ExperimentKind, ...]] = {
    "Ny": (ExperimentKind.HYDROGEN1S,),
    "omega": (ExperimentKind.HARMONIC2D,),
    "R": (ExperimentKind.TWO_PROTONS,),
    "nk_list": (ExperimentKind.TKM_TABLE,),
}


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"'{text}' is not finite")
    return value


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(_float(v) for v in text.split(",") if v.strip())


def _experiment(text: str) -> ExperimentKind:
    return ExperimentKind(text)


CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "experiment": _experiment,
    "Nx": _int,
    "Nk": _int,
    "x_min": _float,
    "x_max": _float,
    "L_k": _float,
    "Ny": _int,
    "tau": _float,
    "T": _float,
    "dump_every": _int,
    "n_nb": _int,
    "p": _int,
    "bc": str,
    "phi_L": _float,
    "phi_R": _float,
    "precision": str,
    "omega": _float,
    "R": _float,
    "out": str,
    "transport": str,
    "workers": _int,
    "nk_list": _ints,
    "values": _floats,
}


def _check_value(key: str, value: Any, line: Optional[int]) -> None:
    """Checks the constraints a single value carries on its own."""
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(
            f"{key} must be one of {', '.join(CHOICES[key])}, got '{value}'", line, key
        )
    if key == "Nk" and value % 2:
        raise ConfigError(f"Nk must be even, got {value}", line, key)
    if key in ("Nx", "Nk", "Ny", "p", "n_nb") and value < 1:
        raise ConfigError(f"{key} must be positive, got {value}", line, key)
    if key in ("L_k", "tau", "T", "omega", "R") and value <= 0:
        raise ConfigError(f"{key} must be positive, got {value}", line, key)
    if key in ("dump_every", "workers") and value < 0:
        raise ConfigError(f"{key} must be non-negative, got {value}", line, key)
    if key == "nk_list" and (not value or any(n < 4 or n % 2 for n in value)):
        raise ConfigError(f"nk_list must hold even values >= 4, got {value}", line, key)


def _read_pairs(text: str) -> Tuple[Dict[str, Any], Dict[str, int]]:
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got '{content}'", number)
        key, text_value = (part.strip() for part in content.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key '{key}'", number, key)
        if key in values:
            raise ConfigError(
                f"duplicate key '{key}', first set on line {lines[key]}", number, key
            )
        if not text_value:
            raise ConfigError(f"missing value for '{key}'", number, key)
        try:
            value = CONVERTERS[key](text_value)
        except ValueError as e:
            raise ConfigError(f"invalid value for '{key}': {e}", number, key) from e
        _check_value(key, value, number)
        values[key] = value
        lines[key] = number
    return values, lines


def _validate(config: ExperimentConfig, lines: Dict[str, int]) -> None:
    """Cross-key checks; raises ConfigError naming the first offending key."""

    def fail(message: str, key: str) -> None:
        raise ConfigError(message, lines.get(key), key)

    kind = config.experiment
    if kind is ExperimentKind.TKM_TABLE:
        return
    if config.x_max <= config.x_min:
        fail(f"x_max={config.x_max} must exceed x_min={config.x_min}", "x_max")
    if config.nx < 4:
        fail(f"Nx must be at least 4, got {config.nx}", "Nx")
    if config.nk < 4:
        fail(f"Nk must be at least 4, got {config.nk}", "Nk")
    if config.nx % config.p:
        fail(f"p={config.p} does not divide Nx={config.nx}", "p")
    m = config.nx // config.p
    if config.n_nb < 4:
        fail(f"n_nb must be at least 4, got {config.n_nb}", "n_nb")
    if config.p > 1 and config.n_nb > m:
        fail(f"n_nb={config.n_nb} exceeds the patch size M={m}", "n_nb")
    travel = config.l_k * config.tau
    if travel > config.h * (1.0 + 1e-12):
        fail(
            f"tau={config.tau} violates the CFL bound L_k tau <= h={config.h:.6g}",
            "tau",
        )
    steps = round(config.t_final / config.tau)
    if not math.isclose(steps * config.tau, config.t_final, rel_tol=1e-9):
        fail(f"T={config.t_final} is not a multiple of tau={config.tau}", "T")
    if kind is ExperimentKind.HYDROGEN1S:
        ny = config.ny
        if ny < config.nk or ny % config.nk or ny & (ny - 1):
            fail(f"Ny must be a power of two and a multiple of Nk, got {ny}", "Ny")
    if config.bc != "hermite" and ("phi_L" in lines or "phi_R" in lines):
        fail("phi_L and phi_R need bc = hermite", "phi_L" if "phi_L" in lines else "phi_R")


def parse_config(text: str, logger: Optional[logging.Logger] = None) -> ExperimentConfig:
    """Parses and validates an experiment configuration.

    Args:
        text (str): The configuration text.
        logger (Optional[logging.Logger]): Logger for default and deviation
            notices.

    Returns:
        ExperimentConfig: The validated configuration. Its ``defaults`` field
        names every key filled in from the per-experiment defaults.

    Raises:
        ConfigError: On unknown, duplicate or malformed keys, missing required
            keys, or values that violate a precondition of the run.
    """
    logger = logger if logger is not None else log
    values, lines = _read_pairs(text)
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'", key="experiment")
    kind: ExperimentKind = values["experiment"]
    if kind.time_dependent:
        for key in ("tau", "T"):
            if key not in values:
                raise ConfigError(
                    f"missing required key '{key}' for {kind.value}", key=key
                )
    for key, scope in SCOPED_KEYS.items():
        if key in values and kind not in scope:
            logger.warning("Key %s (line %d) is ignored by %s", key, lines[key], kind.value)

    defaulted: List[str] = []
    for key, value in DEFAULTS[kind].items():
        if key not in values:
            values[key] = value
            defaulted.append(key)
    attrs = {CONFIG_KEYS[key]: value for key, value in values.items()}
    declared = {f.name for f in fields(ExperimentConfig)}
    defaulted += [
        key
        for key, attr in CONFIG_KEYS.items()
        if attr in declared and key not in values and key not in defaulted
    ]
    config = ExperimentConfig(**attrs)
    config = replace(config, defaults=tuple(sorted(defaulted)))
    _validate(config, lines)

    for key, setting in REFERENCE_SETTINGS.get(kind, {}).items():
        current = getattr(config, CONFIG_KEYS[key])
        if key not in lines and current != setting:
            logger.warning(
                "%s=%s deviates from the reference setting %s=%s",
                key,
                current,
                key,
                setting,
            )
    return config


def derive_config(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    """Returns a revalidated copy with some attributes replaced.

    Replaced attributes stop counting as defaults.

    Raises:
        ConfigError: If the copy breaks a precondition.
    """
    keys = {attr: key for key, attr in CONFIG_KEYS.items()}
    for attr, value in changes.items():
        if attr not in keys:
            raise ConfigError(f"unknown attribute '{attr}'")
        _check_value(keys[attr], value, None)
    defaults = tuple(d for d in config.defaults if CONFIG_KEYS[d] not in changes)
    derived = replace(config, defaults=defaults, **changes)
    _validate(derived, {})
    return derived


def apply_overrides(
    config: ExperimentConfig,
    out: Optional[str] = None,
    patches: Optional[int] = None,
    precision: Optional[str] = None,
) -> ExperimentConfig:
    """Applies the command-line overrides ``--out``, ``--patches`` and ``--precision``.

    Raises:
        ConfigError: If an override breaks a precondition.
    """
    changes: Dict[str, Any] = {}
    if out is not None:
        changes["out"] = out
    if patches is not None:
        changes["p"] = patches
    if precision is not None:
        changes["precision"] = precision
    if not changes:
        return config
    log.debug("Overrides applied: %s", changes)
    return derive_config(config, **changes)
