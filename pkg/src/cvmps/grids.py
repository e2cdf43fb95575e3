"""Quadrature grids and the encoding of single-mode wavefunctions.

Amplitudes are stored as ``psi(x_k) * sqrt(dx)`` so that a sampled, normalized
wavefunction is a unit vector and inner products need no grid weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .qtt import LOSSLESS, MAX_DENSE_STATE_BITS, Mps, ResourceLimitError, TruncationPolicy, mps_from_dense, stack

__all__ = [
    "GridWarning",
    "ModeLayout",
    "QuadratureGrid",
    "coherent_state_mps",
    "hermite_functions",
    "hermite_mode_mps",
    "initial_system_state",
    "sample_function",
    "vacuum_state_mps",
]

# Boundary amplitude above which a state is considered to leak off the grid.
EDGE_TOL = 1e-8
# Required distance, in wavefunction widths, between a coherent-state center
# and either grid edge.
CENTER_MARGIN = 6.0


class GridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform grid of ``2**n_bits`` points including both endpoints."""

    x_a: float
    x_b: float
    n_bits: int

    def __post_init__(self):
        if not self.x_b > self.x_a:
            raise ValueError(f"grid needs x_b > x_a, got [{self.x_a}, {self.x_b}]")
        if int(self.n_bits) != self.n_bits or self.n_bits < 1:
            raise ValueError(f"n_bits must be a positive integer, got {self.n_bits!r}")

    @property
    def size(self) -> int:
        return 1 << self.n_bits

    @property
    def dx(self) -> float:
        return (self.x_b - self.x_a) / (self.size - 1)

    @property
    def points(self) -> np.ndarray:
        # x_k = x_a + (k - 1) dx, k = 1..N
        return self.x_a + np.arange(self.size) * self.dx


@dataclass(frozen=True)
class ModeLayout:
    """Pump register followed by signal register in one chain."""

    pump: QuadratureGrid
    signal: QuadratureGrid

    @property
    def n_total(self) -> int:
        return self.pump.n_bits + self.signal.n_bits

    def grid(self, mode: str) -> QuadratureGrid:
        if mode == "pump":
            return self.pump
        if mode == "signal":
            return self.signal
        raise ValueError(f"mode must be 'pump' or 'signal', got {mode!r}")


def _guard(grid: QuadratureGrid):
    if grid.n_bits > MAX_DENSE_STATE_BITS:
        raise ResourceLimitError(f"{grid.n_bits} bits exceeds the dense sampling guard")


def sample_function(grid: QuadratureGrid, f) -> np.ndarray:
    """``f(x_k) * sqrt(dx)`` on every grid point."""
    _guard(grid)
    values = np.asarray(f(grid.points), dtype=np.complex128)
    return values * math.sqrt(grid.dx)


def _gaussian(x0):
    return lambda x: np.pi**-0.25 * np.exp(-((x - x0) ** 2) / 2.0)


def _encode_normalized(grid, f, policy):
    v = sample_function(grid, f)
    v = v / np.linalg.norm(v)
    if max(abs(v[0]), abs(v[-1])) / math.sqrt(grid.dx) > EDGE_TOL:
        warnings.warn(
            f"wavefunction is not negligible at the edges of [{grid.x_a}, {grid.x_b}]",
            GridWarning,
            stacklevel=3,
        )
    return mps_from_dense(v, policy)


def vacuum_state_mps(grid: QuadratureGrid, policy: TruncationPolicy = LOSSLESS) -> Mps:
    """Ground state pi^(-1/4) exp(-x^2/2), normalized on the grid."""
    return _encode_normalized(grid, _gaussian(0.0), policy)


def coherent_state_mps(grid: QuadratureGrid, alpha: float, policy: TruncationPolicy = LOSSLESS) -> Mps:
    """Vacuum displaced to ``x0 = sqrt(2) * alpha`` (real amplitude)."""
    x0 = math.sqrt(2.0) * alpha
    if x0 - CENTER_MARGIN < grid.x_a or x0 + CENTER_MARGIN > grid.x_b:
        raise ValueError(
            f"coherent center x0={x0:.4g} needs a {CENTER_MARGIN:g}-width margin inside "
            f"[{grid.x_a}, {grid.x_b}]"
        )
    return _encode_normalized(grid, _gaussian(x0), policy)


def hermite_functions(x: np.ndarray, m_max: int) -> np.ndarray:
    """Oscillator eigenfunctions phi_0..phi_{m_max} at ``x``, shape (m_max+1, len(x)).

    Uses the normalized three-term recurrence
    phi_{m+1} = sqrt(2/(m+1)) x phi_m - sqrt(m/(m+1)) phi_{m-1},
    which stays finite for large m where H_m(x) alone would overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((m_max + 1, x.size))
    out[0] = np.pi**-0.25 * np.exp(-(x**2) / 2.0)
    if m_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for m in range(1, m_max):
        out[m + 1] = math.sqrt(2.0 / (m + 1)) * x * out[m] - math.sqrt(m / (m + 1)) * out[m - 1]
    return out


def check_hermite_resolution(grid: QuadratureGrid, m: int):
    if m < 0:
        raise ValueError(f"Hermite index must be >= 0, got {m}")
    limit = 0.5 / math.sqrt(2 * m + 1)
    if grid.dx > limit:
        raise ValueError(f"grid spacing {grid.dx:.4g} cannot resolve phi_{m} (needs dx <= {limit:.4g})")


def hermite_mode_mps(grid: QuadratureGrid, m: int, policy: TruncationPolicy = LOSSLESS) -> Mps:
    """m-th oscillator eigenfunction sampled on the grid.

    The samples are not rescaled: for a grid that contains the function they
    already have unit norm to quadrature accuracy, and for one that clips it
    the clipped samples are what a projection onto the grid needs.
    """
    check_hermite_resolution(grid, m)
    _guard(grid)
    v = hermite_functions(grid.points, m)[m] * math.sqrt(grid.dx)
    return mps_from_dense(v, policy)


def initial_system_state(layout: ModeLayout, alpha: float, policy: TruncationPolicy = LOSSLESS) -> Mps:
    """Coherent pump (bits first) times vacuum signal."""
    pump = coherent_state_mps(layout.pump, alpha, policy)
    signal = vacuum_state_mps(layout.signal, policy)
    return stack(pump, signal)
