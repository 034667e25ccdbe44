"""Long-range reinforced random walk: exact oracles, simulation and limit-theorem checks."""

from .model import (
    DerivedConstants,
    ModelParams,
    ParameterError,
    Regime,
    StepKernel,
    SuperdiffusiveConstants,
    WalkState,
    classify_regime,
    derive_constants,
    initial_kernel,
    superdiffusive_constants,
    transition_kernel,
)
from .special import SequenceTables, build_tables, hyp3f2_unit, v_limit

__version__ = "0.1.0"

__all__ = [
    "DerivedConstants",
    "ModelParams",
    "ParameterError",
    "Regime",
    "SequenceTables",
    "StepKernel",
    "SuperdiffusiveConstants",
    "WalkState",
    "build_tables",
    "classify_regime",
    "derive_constants",
    "hyp3f2_unit",
    "initial_kernel",
    "superdiffusive_constants",
    "transition_kernel",
    "v_limit",
]
