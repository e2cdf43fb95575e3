"""Quantized tensor-train (MPS/MPO) simulation of degenerate parametric
down-conversion in the continuous-variable (quadrature) representation."""

__version__ = "0.1.0"

from .grids import ModeLayout, QuadratureGrid, coherent_state_mps, initial_system_state, vacuum_state_mps
from .observables import (
    FockDensityMatrix,
    TrajectoryRecord,
    compression_metrics,
    fidelity,
    make_observer,
    photon_number,
    quadrature_stats,
    reduced_density_fock,
    total_energy,
)
from .operators import hamiltonian_mpo, ladder_mpos, propagator_mpo, system_operators
from .qtt import Mpo, Mps, TruncationPolicy
from .solver import EvolutionConfig, SolverBreakdown, SolverConfig, evolve, residual_norm, solve_linear

__all__ = [
    "EvolutionConfig",
    "FockDensityMatrix",
    "ModeLayout",
    "Mpo",
    "Mps",
    "QuadratureGrid",
    "SolverBreakdown",
    "SolverConfig",
    "TrajectoryRecord",
    "TruncationPolicy",
    "coherent_state_mps",
    "compression_metrics",
    "evolve",
    "fidelity",
    "hamiltonian_mpo",
    "initial_system_state",
    "ladder_mpos",
    "make_observer",
    "photon_number",
    "propagator_mpo",
    "quadrature_stats",
    "reduced_density_fock",
    "residual_norm",
    "solve_linear",
    "system_operators",
    "total_energy",
    "vacuum_state_mps",
]
