"""wigner_chasm.

A library and CLI for 6-D Wigner phase-space dynamics with distributed
cubic splines and a truncated-kernel Coulomb operator.

.. include:: ../../README.md
"""

from .cli import cli
from .config import ExperimentConfig, parse_config
from .integrator import StepConfig, lpc1_step
from .main import WignerExperiment
from .phase_space import PhaseSpaceGrid, WignerField, build_grid
from .runtime import run_simulation

__all__ = [
    "ExperimentConfig",
    "PhaseSpaceGrid",
    "StepConfig",
    "WignerExperiment",
    "WignerField",
    "build_grid",
    "cli",
    "lpc1_step",
    "parse_config",
    "run_simulation",
]
