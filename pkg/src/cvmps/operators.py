"""Grid operators as MPOs: position, central difference, ladder operators,
the degenerate down-conversion Hamiltonian and its implicit-Euler propagator.

Time is dimensionless (tau = kappa * t), so the Hamiltonian is built as H/kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import ModeLayout, QuadratureGrid
from .qtt import (
    Mpo,
    TruncationPolicy,
    identity_mpo,
    mpo_add,
    mpo_dagger,
    mpo_mul,
    mpo_stack,
    mpo_truncate,
)

__all__ = [
    "ModeOperators",
    "SystemOperators",
    "derivative_mpo",
    "embed_mpo",
    "hamiltonian_mpo",
    "ladder_mpos",
    "position_mpo",
    "propagator_mpo",
    "system_operators",
]

# Relative rounding applied after every MPO product or sum.
OPERATOR_ROUNDING = TruncationPolicy(sv_cutoff=1e-12)

_I = np.eye(2)
_P1 = np.diag([0.0, 1.0])
_SP = np.array([[0.0, 1.0], [0.0, 0.0]])  # raises the bit: row 0, column 1
_SM = np.array([[0.0, 0.0], [1.0, 0.0]])


def _site(blocks):
    """Assemble an MPO site from a nested list of 2x2 blocks [row][col]."""
    rows, cols = len(blocks), len(blocks[0])
    w = np.zeros((rows, 2, 2, cols), dtype=np.complex128)
    for a in range(rows):
        for b in range(cols):
            w[a, :, :, b] = blocks[a][b]
    return w


def position_mpo(grid: QuadratureGrid) -> Mpo:
    """diag(x_1, ..., x_N) with bond dimension 2."""
    xa, dx = grid.x_a, grid.dx
    last = np.diag([xa, xa + dx])
    if grid.n_bits == 1:
        return Mpo([_site([[last]])])
    zero = np.zeros((2, 2))
    first = _site([[_I, _P1]])
    bulk = _site([[_I, _P1], [zero, 2 * _I]])
    end = _site([[last], [2 * dx * _I]])
    return Mpo([first] + [bulk.copy() for _ in range(grid.n_bits - 2)] + [end])


def derivative_mpo(grid: QuadratureGrid) -> Mpo:
    """Central difference (psi_{k+1} - psi_{k-1}) / (2 dx), zero outside the grid.

    The bulk tensor carries three channels: still equal, carry for the +1
    shift, borrow for the -1 shift.
    """
    c = 1.0 / (2.0 * grid.dx)
    if grid.n_bits == 1:
        return Mpo([_site([[c * (_SP - _SM)]])])
    zero = np.zeros((2, 2))
    first = _site([[c * _I, c * _SP, -c * _SM]])
    bulk = _site([[_I, _SP, -_SM], [zero, _SM, zero], [zero, zero, _SP]])
    end = _site([[_SP - _SM], [_SM], [_SP]])
    return Mpo([first] + [bulk.copy() for _ in range(grid.n_bits - 2)] + [end])


@dataclass
class ModeOperators:
    X: Mpo
    D: Mpo
    a: Mpo
    a_dag: Mpo
    number: Mpo
    X2: Mpo


def ladder_mpos(grid: QuadratureGrid) -> ModeOperators:
    """a = (X + d/dX)/sqrt2, a_dag = (X - d/dX)/sqrt2 and n = a_dag a."""
    X = position_mpo(grid)
    D = derivative_mpo(grid)
    s = 1.0 / math.sqrt(2.0)
    a = mpo_truncate(mpo_add(X, D, s, s), OPERATOR_ROUNDING)
    a_dag = mpo_truncate(mpo_add(X, D, s, -s), OPERATOR_ROUNDING)
    number = mpo_truncate(mpo_mul(a_dag, a), OPERATOR_ROUNDING)
    X2 = mpo_truncate(mpo_mul(X, X), OPERATOR_ROUNDING)
    return ModeOperators(X=X, D=D, a=a, a_dag=a_dag, number=number, X2=X2)


def embed_mpo(op: Mpo, layout: ModeLayout, mode: str) -> Mpo:
    """Extend a single-mode operator with identities on the other register."""
    grid = layout.grid(mode)
    if op.n_sites != grid.n_bits:
        raise ValueError(f"operator has {op.n_sites} sites but the {mode} register has {grid.n_bits}")
    if mode == "pump":
        return mpo_stack(op, identity_mpo(layout.signal.n_bits))
    return mpo_stack(identity_mpo(layout.pump.n_bits), op)


def hamiltonian_mpo(
    layout: ModeLayout,
    policy: TruncationPolicy = OPERATOR_ROUNDING,
    pump_ops: ModeOperators | None = None,
    signal_ops: ModeOperators | None = None,
) -> Mpo:
    """H/kappa = i (T - T^dag) with T = a_dag_p a_s a_s."""
    pump_ops = pump_ops or ladder_mpos(layout.pump)
    signal_ops = signal_ops or ladder_mpos(layout.signal)
    a_s2 = mpo_truncate(mpo_mul(signal_ops.a, signal_ops.a), policy)
    # registers are disjoint, so the product of embedded operators is a Kronecker product
    T = mpo_stack(pump_ops.a_dag, a_s2)
    return mpo_truncate(mpo_add(T, mpo_dagger(T), 1j, -1j), policy)


def propagator_mpo(H: Mpo, delta_tau: float, policy: TruncationPolicy = OPERATOR_ROUNDING) -> Mpo:
    """Implicit-Euler matrix U = I + i dtau H for i dpsi/dtau = H psi.

    Each step solves U psi_{t+1} = psi_t.  For Hermitian H every singular
    value of U is at least 1.
    """
    if delta_tau < 0:
        raise ValueError(f"delta_tau must be non-negative, got {delta_tau}")
    U = mpo_add(identity_mpo(H.n_sites), H, 1.0, 1j * delta_tau)
    return mpo_truncate(U, policy)


@dataclass
class SystemOperators:
    """Everything the evolution and the observers need for one layout."""

    layout: ModeLayout
    delta_tau: float
    pump: ModeOperators
    signal: ModeOperators
    H: Mpo
    U: Mpo
    number_pump: Mpo
    number_signal: Mpo
    x_pump: Mpo
    x2_pump: Mpo
    x_signal: Mpo
    x2_signal: Mpo

    def embedded(self, mode: str) -> tuple[Mpo, Mpo, Mpo]:
        """(number, X, X^2) of one mode on the full chain."""
        if mode == "pump":
            return self.number_pump, self.x_pump, self.x2_pump
        if mode == "signal":
            return self.number_signal, self.x_signal, self.x2_signal
        raise ValueError(f"mode must be 'pump' or 'signal', got {mode!r}")


def system_operators(layout: ModeLayout, delta_tau: float, hamiltonian: Mpo | None = None) -> SystemOperators:
    """Build H, U and the embedded observables.  ``hamiltonian`` overrides H."""
    pump = ladder_mpos(layout.pump)
    signal = ladder_mpos(layout.signal)
    H = hamiltonian if hamiltonian is not None else hamiltonian_mpo(layout, pump_ops=pump, signal_ops=signal)
    return SystemOperators(
        layout=layout,
        delta_tau=delta_tau,
        pump=pump,
        signal=signal,
        H=H,
        U=propagator_mpo(H, delta_tau),
        number_pump=embed_mpo(pump.number, layout, "pump"),
        number_signal=embed_mpo(signal.number, layout, "signal"),
        x_pump=embed_mpo(pump.X, layout, "pump"),
        x2_pump=embed_mpo(pump.X2, layout, "pump"),
        x_signal=embed_mpo(signal.X, layout, "signal"),
        x2_signal=embed_mpo(signal.X2, layout, "signal"),
    )
