"""Physical diagnostics of an evolving two-mode state.

Everything here works on the MPS directly; the two-mode wavefunction is
never formed on the full grid.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .grids import ModeLayout, QuadratureGrid, check_hermite_resolution, hermite_mode_mps
from .operators import embed_mpo, ladder_mpos
from .qtt import Mpo, Mps, TruncationPolicy, compression_counts, expectation
from .solver import grid_normalization

__all__ = [
    "FockDensityMatrix",
    "TrajectoryRecord",
    "compression_metrics",
    "fidelity",
    "make_observer",
    "photon_number",
    "quadrature_stats",
    "reduced_density_fock",
    "total_energy",
]

# Largest tolerated imaginary part of an expectation value of a Hermitian MPO.
IMAG_TOL = 1e-8
# Eigenvalues below this are treated as zero before taking square roots.
PSD_FLOOR = 1e-8
# Hermite functions are encoded with this relative SVD cutoff.
HERMITE_POLICY = TruncationPolicy(sv_cutoff=1e-13)


@dataclass
class TrajectoryRecord:
    step: int
    tau: float
    n_pump: float
    n_signal: float
    energy: float
    var_x_signal: float
    max_bond: int
    param_count: int
    inverse_compression: float
    residual_raw: float
    residual_normalized: float
    norm_drift: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FockDensityMatrix:
    """Reduced density matrix of one mode, truncated to ``cutoff`` levels."""

    cutoff: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.shape != (self.cutoff, self.cutoff):
            raise ValueError(f"entries have shape {self.entries.shape}, expected ({self.cutoff}, {self.cutoff})")

    @property
    def captured_weight(self) -> float:
        """Trace, i.e. the probability inside the first ``cutoff`` levels."""
        return float(np.trace(self.entries).real)

    @property
    def populations(self) -> np.ndarray:
        return np.diag(self.entries).real.copy()

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))


# ---------------------------------------------------------------------------
# operator caches


@lru_cache(maxsize=8)
def _mode_operators(layout: ModeLayout, mode: str) -> tuple[Mpo, Mpo, Mpo]:
    """Embedded (number, X, X^2) for one mode."""
    ops = ladder_mpos(layout.grid(mode))
    return tuple(embed_mpo(op, layout, mode) for op in (ops.number, ops.X, ops.X2))


@lru_cache(maxsize=4)
def _hermite_basis(grid: QuadratureGrid, cutoff: int) -> tuple[Mps, ...]:
    check_hermite_resolution(grid, cutoff - 1)
    return tuple(hermite_mode_mps(grid, m, HERMITE_POLICY) for m in range(cutoff))


def _real_expectation(psi: Mps, op: Mpo, what: str) -> float:
    value = expectation(psi, op)
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise AssertionError(f"<{what}> has imaginary part {value.imag:.3e}; operator or state is corrupted")
    return float(value.real)


def photon_number(psi: Mps, layout: ModeLayout, mode: str) -> float:
    """<a_dag a> of ``mode`` for a normalized ``psi``."""
    number, _, _ = _mode_operators(layout, mode)
    return _real_expectation(psi, number, f"n_{mode}")


def total_energy(psi: Mps, layout: ModeLayout) -> float:
    """n_signal + 2 n_pump, in units of signal photons."""
    return photon_number(psi, layout, "signal") + 2.0 * photon_number(psi, layout, "pump")


def quadrature_stats(psi: Mps, layout: ModeLayout, mode: str) -> tuple[float, float]:
    """Mean and variance of the X quadrature (vacuum variance is 1/2)."""
    _, X, X2 = _mode_operators(layout, mode)
    mean = _real_expectation(psi, X, f"X_{mode}")
    second = _real_expectation(psi, X2, f"X_{mode}^2")
    return mean, second - mean**2


def reduced_density_fock(psi: Mps, layout: ModeLayout, mode: str, cutoff: int) -> FockDensityMatrix:
    """<m|rho|k> of one mode in the undisplaced oscillator basis.

    With c_m(y) = <phi_m|psi(., y)> taken over the chosen mode's bits for
    every grid point y of the other mode, rho_mk = sum_y c_m(y) conj(c_k(y)).
    The sum over y is done through the Gram matrix of the other block, so only
    bond-sized objects appear.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    if psi.n_sites != layout.n_total:
        raise ValueError(f"state has {psi.n_sites} sites, layout has {layout.n_total}")
    grid = layout.grid(mode)
    basis = _hermite_basis(grid, cutoff)
    n_p = layout.pump.n_bits
    if mode == "pump":
        own, other = psi.sites[:n_p], psi.sites[n_p:]
        V = _project_block_right_open(own, basis)  # (M, bond)
        G = _gram_right_block(other)
    else:
        own, other = psi.sites[n_p:], psi.sites[:n_p]
        V = _project_block_left_open(own, basis)
        G = _gram_left_block(other)
    rho = V @ G @ V.conj().T
    return FockDensityMatrix(cutoff, 0.5 * (rho + rho.conj().T))


def _project_block_right_open(sites, basis):
    """Rows <phi_m| A_1 ... A_n>[:, b] for a block whose left bond is trivial."""
    rows = []
    for phi in basis:
        env = np.ones((1, 1), dtype=np.complex128)  # (phi bond, psi bond)
        for F, A in zip(phi.sites, sites):
            t = np.tensordot(env, A, axes=([1], [0]))  # (f, s, r)
            env = np.tensordot(F.conj(), t, axes=([0, 1], [0, 1]))  # (f', r)
        rows.append(env[0])
    return np.array(rows)


def _project_block_left_open(sites, basis):
    """Rows <phi_m| A_1 ... A_n>[b, :] for a block whose right bond is trivial."""
    rows = []
    for phi in basis:
        env = np.ones((1, 1), dtype=np.complex128)  # (phi bond, psi bond)
        for F, A in zip(reversed(phi.sites), reversed(sites)):
            t = np.tensordot(A, env, axes=([2], [1]))  # (l, s, f)
            env = np.tensordot(t, F.conj(), axes=([1, 2], [1, 2])).T  # (f', l)
        rows.append(env[0])
    return np.array(rows)


def _gram_right_block(sites):
    """G[b, b'] = sum_y B_b(y) conj(B_b'(y)) for a block with trivial right bond."""
    env = np.ones((1, 1), dtype=np.complex128)  # (ket, bra)
    for A in reversed(sites):
        t = np.tensordot(A, env, axes=([2], [0]))  # (l, s, bra)
        env = np.tensordot(t, A.conj(), axes=([1, 2], [1, 2]))  # (l, l')
    return env


def _gram_left_block(sites):
    """G[b, b'] = sum_y B_b(y) conj(B_b'(y)) for a block with trivial left bond."""
    env = np.ones((1, 1), dtype=np.complex128)  # (ket, bra)
    for A in sites:
        t = np.tensordot(env, A, axes=([0], [0]))  # (bra, s, r)
        env = np.tensordot(t, A.conj(), axes=([0, 1], [0, 1]))  # (r, r')
    return env


def _psd_sqrt(mat):
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.where(w > PSD_FLOOR, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho: FockDensityMatrix, sigma: FockDensityMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    if rho.cutoff != sigma.cutoff:
        raise ValueError(f"cutoff mismatch: {rho.cutoff} vs {sigma.cutoff}")
    # singular values of sqrt(rho) sqrt(sigma) are the square roots of the
    # eigenvalues of sqrt(rho) sigma sqrt(rho); this avoids square roots of
    # round-off eigenvalues
    prod = _psd_sqrt(rho.entries) @ _psd_sqrt(sigma.entries)
    return float(np.sum(np.linalg.svd(prod, compute_uv=False)) ** 2)


def compression_metrics(psi: Mps) -> tuple[int, float, int]:
    """(parameter count, parameters / 2**n, largest bond)."""
    return compression_counts(psi)


def make_observer(layout: ModeLayout, n_ref_bits: int = 25):
    """Observer for :func:`cvmps.solver.evolve` producing TrajectoryRecords."""
    scale_ref = math.sqrt(grid_normalization(layout.n_total, n_ref_bits))

    def observe(step, tau, psi, report):
        n_p = photon_number(psi, layout, "pump")
        n_s = photon_number(psi, layout, "signal")
        _, var = quadrature_stats(psi, layout, "signal")
        count, inv, bond = compression_metrics(psi)
        return TrajectoryRecord(
            step=int(step),
            tau=float(tau),
            n_pump=n_p,
            n_signal=n_s,
            energy=n_s + 2.0 * n_p,
            var_x_signal=var,
            max_bond=int(bond),
            param_count=int(count),
            inverse_compression=float(inv),
            residual_raw=float(report.residual_raw),
            residual_normalized=float(report.residual_raw) / scale_ref,
            norm_drift=float(report.norm_before_renorm) - 1.0,
        )

    return observe
