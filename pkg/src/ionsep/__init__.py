"""Symplectic simulation of three-ion crystal separation with squeezing compensation."""

__version__ = "0.1.0"

from ._validation import NumericalFailure, SymplecticError
from .crystal import BE9, MG25, CrystalConfig, IonSpecies
from .protocols import (
    ProtocolConfig,
    SeparationProtocol,
    reverse_protocol,
    run_onthefly,
    run_precompensated,
    run_protocol,
    run_reversed,
)
from .studies import MonteCarloStudy, PerturbationSpec, WaveformOptimizer

__all__ = [
    "BE9",
    "MG25",
    "CrystalConfig",
    "IonSpecies",
    "MonteCarloStudy",
    "NumericalFailure",
    "PerturbationSpec",
    "ProtocolConfig",
    "SeparationProtocol",
    "SymplecticError",
    "WaveformOptimizer",
    "__version__",
    "reverse_protocol",
    "run_onthefly",
    "run_precompensated",
    "run_protocol",
    "run_reversed",
]
