"""Brute-force reference simulators for desk-scale validation.

* :class:`DenseGridStepper` / :func:`dense_grid_evolve` run the same
  discretized implicit-Euler scheme as the MPS path on the full grid with
  sparse matrices.
* :func:`fock_evolve` runs the same scheme in a truncated photon-number basis,
  an independent discretization of the same physics.
* :func:`compare_trajectories` tabulates deviations between two runs.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import ModeLayout, QuadratureGrid, initial_system_state
from .observables import FockDensityMatrix, TrajectoryRecord, reduced_density_fock
from .operators import position_mpo
from .qtt import LOSSLESS, Mpo, mpo_diagonal, mps_from_dense, mps_to_dense
from .solver import EvolutionConfig, grid_normalization

log = logging.getLogger(__name__)

__all__ = [
    "DenseGridState",
    "DenseGridStepper",
    "FockState",
    "FockStepper",
    "CutoffWarning",
    "FockTrajectory",
    "TrajectoryComparison",
    "compare_trajectories",
    "dense_grid_evolve",
    "dense_reduced_density",
    "fock_evolve",
    "fock_hamiltonian",
]

MAX_DENSE_GRID_BITS = 20
MAX_FOCK_DIM = 200_000
# Relative tolerance of the iterative sparse solves.
SPARSE_RTOL = 1e-10
# Top-level Fock occupation above which the cutoff is considered too small.
SATURATION_LIMIT = 1e-6
# Bond and compression fields of brute-force records.
SENTINEL = -1


class CutoffWarning(UserWarning):
    pass


@dataclass
class DenseGridState:
    amplitudes: np.ndarray
    layout: ModeLayout


@dataclass
class FockState:
    """Amplitudes over |n_p, n_s>, shape (pump cutoff, signal cutoff)."""

    amplitudes: np.ndarray


def _implicit_euler_solve(U, rhs, lu_holder, K=None):
    """Solve U x = rhs by BiCGSTAB; falls back to a sparse LU (factored
    once) if the iteration stalls.

    With ``K = U - I`` the iteration starts from the second-order Neumann
    guess ``rhs - K rhs + K K rhs``, otherwise from ``rhs``.
    Returns ``(x, ||rhs - U x||)``.
    """
    x0 = rhs
    if K is not None:
        k1 = K @ rhs
        x0 = rhs - k1 + K @ k1
    x, info = spla.bicgstab(U, rhs, x0=x0, rtol=SPARSE_RTOL, atol=0.0, maxiter=500)
    res = float(np.linalg.norm(rhs - U @ x))
    if info != 0 or res > 10 * SPARSE_RTOL * np.linalg.norm(rhs):
        if not lu_holder:
            log.debug("BiCGSTAB stalled (info=%d); switching to sparse LU", info)
            lu_holder.append(spla.splu(sp.csc_matrix(U)))
        x = lu_holder[0].solve(rhs)
        res = float(np.linalg.norm(rhs - U @ x))
    return x, res


# ---------------------------------------------------------------------------
# dense grid


def grid_mode_matrices(grid: QuadratureGrid) -> dict:
    """Sparse X, D, a, a_dag, n, X^2 of one mode.

    X and D carry the exact entries of the MPO constructions (X is read off
    the MPO diagonal, D is the banded +-1/(2 dx) pattern it encodes).
    """
    if grid.n_bits > MAX_DENSE_GRID_BITS:
        raise ValueError(f"{grid.n_bits} bits is beyond the sparse oracle's range")
    N = grid.size
    X = sp.diags(mpo_diagonal(position_mpo(grid)).real, format="csr")
    c = 1.0 / (2.0 * grid.dx)
    D = sp.diags([np.full(N - 1, c), np.full(N - 1, -c)], [1, -1], format="csr")
    s = 1.0 / math.sqrt(2.0)
    a = (s * (X + D)).tocsr()
    a_dag = (s * (X - D)).tocsr()
    return {"X": X, "D": D, "a": a, "a_dag": a_dag, "n": (a_dag @ a).tocsr(), "X2": (X @ X).tocsr()}


def grid_hamiltonian(layout: ModeLayout):
    """Sparse H/kappa = i (a_dag_p a_s^2 - h.c.) on the full grid."""
    p = grid_mode_matrices(layout.pump)
    s = grid_mode_matrices(layout.signal)
    T = sp.kron(p["a_dag"], s["a"] @ s["a"], format="csr")
    return (1j * (T - T.conj().T)).tocsr()


class DenseGridStepper:
    """Implicit-Euler evolution of the full grid vector.

    ``hamiltonian`` overrides the down-conversion Hamiltonian (sparse matrix
    or MPO).
    """

    def __init__(self, layout: ModeLayout, alpha: float, delta_tau: float, renormalize: bool = True, hamiltonian=None):
        if layout.n_total > MAX_DENSE_GRID_BITS:
            raise ValueError(f"n_total = {layout.n_total} exceeds the dense-grid limit {MAX_DENSE_GRID_BITS}")
        if delta_tau < 0:
            raise ValueError("delta_tau must be non-negative")
        self.layout = layout
        self.delta_tau = delta_tau
        self.renormalize = renormalize
        if hamiltonian is None:
            H = grid_hamiltonian(layout)
        elif isinstance(hamiltonian, Mpo):
            from .qtt import mpo_to_dense

            H = sp.csr_matrix(mpo_to_dense(hamiltonian))
        else:
            H = sp.csr_matrix(hamiltonian)
        dim = 1 << layout.n_total
        self.U = (sp.identity(dim, dtype=np.complex128, format="csr") + 1j * delta_tau * H).tocsr()
        p = grid_mode_matrices(layout.pump)
        s = grid_mode_matrices(layout.signal)
        Ip = sp.identity(layout.pump.size, format="csr")
        Is = sp.identity(layout.signal.size, format="csr")
        self.n_pump = sp.kron(p["n"], Is, format="csr")
        self.n_signal = sp.kron(Ip, s["n"], format="csr")
        self.x_signal = sp.kron(Ip, s["X"], format="csr")
        self.x2_signal = sp.kron(Ip, s["X2"], format="csr")
        self.psi = mps_to_dense(initial_system_state(layout, alpha))
        self.step_index = 0
        self.last_residual = 0.0
        self.last_norm = 1.0
        self._lu = []
        self._K = (1j * delta_tau * H).tocsr()

    @property
    def state(self) -> DenseGridState:
        return DenseGridState(self.psi.copy(), self.layout)

    def step(self):
        prev = self.psi
        nxt, self.last_residual = _implicit_euler_solve(self.U, prev, self._lu, self._K)
        self.last_norm = float(np.linalg.norm(nxt))
        if self.renormalize and self.last_norm > 0:
            nxt = nxt / self.last_norm
        self.psi = nxt
        self.step_index += 1

    def _expect(self, op):
        return float(np.vdot(self.psi, op @ self.psi).real)

    def record(self, n_ref_bits: int = 25) -> TrajectoryRecord:
        n_p = self._expect(self.n_pump)
        n_s = self._expect(self.n_signal)
        mean = self._expect(self.x_signal)
        return TrajectoryRecord(
            step=self.step_index,
            tau=self.step_index * self.delta_tau,
            n_pump=n_p,
            n_signal=n_s,
            energy=n_s + 2.0 * n_p,
            var_x_signal=self._expect(self.x2_signal) - mean**2,
            max_bond=SENTINEL,
            param_count=SENTINEL,
            inverse_compression=float(SENTINEL),
            residual_raw=self.last_residual,
            residual_normalized=self.last_residual / math.sqrt(grid_normalization(self.layout.n_total, n_ref_bits)),
            norm_drift=self.last_norm - 1.0,
        )


def dense_grid_evolve(
    layout: ModeLayout,
    alpha: float,
    ecfg: EvolutionConfig,
    hamiltonian=None,
    on_state: Callable[[int, np.ndarray], None] | None = None,
) -> list[TrajectoryRecord]:
    """Full-grid reference trajectory with the same record schedule as
    :func:`cvmps.solver.evolve`; ``on_state(step, amplitudes)`` sees every
    recorded state."""
    stepper = DenseGridStepper(layout, alpha, ecfg.delta_tau, ecfg.renormalize_each_step, hamiltonian)
    records = [stepper.record()]
    if on_state is not None:
        on_state(0, stepper.psi)
    for step in range(1, ecfg.n_steps + 1):
        stepper.step()
        if step % ecfg.observe_every == 0 or step == ecfg.n_steps:
            records.append(stepper.record())
            if on_state is not None:
                on_state(step, stepper.psi)
    return records


def dense_reduced_density(amplitudes: np.ndarray, layout: ModeLayout, mode: str, cutoff: int) -> FockDensityMatrix:
    """Fock-basis reduced density of a full-grid state, through the same
    Hermite projection as the MPS observables."""
    psi = mps_from_dense(np.asarray(amplitudes, dtype=np.complex128), LOSSLESS)
    return reduced_density_fock(psi, layout, mode, cutoff)


# ---------------------------------------------------------------------------
# Fock basis


def _lowering(n: int):
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, format="csr")


def fock_hamiltonian(cutoff_pump: int, cutoff_signal: int):
    """Sparse H/kappa = i (a_dag_p a_s^2 - h.c.) over |n_p, n_s>, pump index major."""
    a_p = _lowering(cutoff_pump)
    a_s = _lowering(cutoff_signal)
    T = sp.kron(a_p.T, a_s @ a_s, format="csr")
    return (1j * (T - T.conj().T)).tocsr()


def coherent_fock_amplitudes(alpha: float, cutoff: int) -> np.ndarray:
    """<n|alpha> for n < cutoff, renormalized inside the cutoff."""
    v = np.zeros(cutoff)
    if alpha == 0:
        v[0] = 1.0
        return v
    n = np.arange(cutoff)
    lg = np.array([math.lgamma(k + 1.0) for k in n])
    v = np.exp(n * math.log(abs(alpha)) - 0.5 * lg - 0.5 * alpha**2) * np.sign(alpha) ** n
    return v / np.linalg.norm(v)


def _reduced(psi_mat: np.ndarray):
    rho_p = psi_mat @ psi_mat.conj().T
    rho_s = psi_mat.T @ psi_mat.conj()
    return FockDensityMatrix(rho_p.shape[0], rho_p), FockDensityMatrix(rho_s.shape[0], rho_s)


class FockStepper:
    """Implicit-Euler evolution over |n_p, n_s> from a coherent pump and a
    vacuum signal."""

    def __init__(self, alpha: float, cutoffs: tuple[int, int], delta_tau: float, renormalize: bool = True):
        Np, Ns = (int(c) for c in cutoffs)
        if Np < 1 or Ns < 1:
            raise ValueError(f"cutoffs must be positive, got {cutoffs}")
        if Np * Ns > MAX_FOCK_DIM:
            raise ValueError(f"Fock dimension {Np * Ns} exceeds {MAX_FOCK_DIM}")
        if delta_tau < 0:
            raise ValueError("delta_tau must be non-negative")
        self.cutoffs = (Np, Ns)
        self.delta_tau = delta_tau
        self.renormalize = renormalize
        dim = Np * Ns
        H = fock_hamiltonian(Np, Ns)
        self.U = (sp.identity(dim, dtype=np.complex128, format="csr") + 1j * delta_tau * H).tocsc()
        # the matrix is block diagonal in n_s + 2 n_p, so the LU factors stay sparse
        self._lu = spla.splu(self.U)
        a_s = _lowering(Ns)
        xs = (a_s + a_s.T) / math.sqrt(2.0)
        Ip, Is = sp.identity(Np, format="csr"), sp.identity(Ns, format="csr")
        self.n_pump = sp.kron(sp.diags(np.arange(Np, dtype=float)), Is, format="csr")
        self.n_signal = sp.kron(Ip, sp.diags(np.arange(Ns, dtype=float)), format="csr")
        self.x_signal = sp.kron(Ip, xs, format="csr")
        self.x2_signal = sp.kron(Ip, xs @ xs, format="csr")
        vac = np.zeros(Ns)
        vac[0] = 1.0
        self.psi = np.kron(coherent_fock_amplitudes(alpha, Np), vac).astype(np.complex128)
        self.step_index = 0
        self.last_residual = 0.0
        self.last_norm = 1.0

    @property
    def state(self) -> FockState:
        return FockState(self.psi.reshape(self.cutoffs).copy())

    def step(self):
        prev = self.psi
        nxt = self._lu.solve(prev)
        self.last_residual = float(np.linalg.norm(prev - self.U @ nxt))
        self.last_norm = float(np.linalg.norm(nxt))
        if self.renormalize and self.last_norm > 0:
            nxt = nxt / self.last_norm
        self.psi = nxt
        self.step_index += 1

    def top_occupation(self) -> float:
        mat = self.psi.reshape(self.cutoffs)
        return max(float(np.sum(np.abs(mat[-1, :]) ** 2)), float(np.sum(np.abs(mat[:, -1]) ** 2)))

    def reduced(self) -> tuple[FockDensityMatrix, FockDensityMatrix]:
        """(rho_pump, rho_signal) by partial trace."""
        return _reduced(self.psi.reshape(self.cutoffs))

    def _expect(self, op):
        return float(np.vdot(self.psi, op @ self.psi).real)

    def record(self) -> TrajectoryRecord:
        n_p = self._expect(self.n_pump)
        n_s = self._expect(self.n_signal)
        mean = self._expect(self.x_signal)
        return TrajectoryRecord(
            step=self.step_index,
            tau=self.step_index * self.delta_tau,
            n_pump=n_p,
            n_signal=n_s,
            energy=n_s + 2.0 * n_p,
            var_x_signal=self._expect(self.x2_signal) - mean**2,
            max_bond=SENTINEL,
            param_count=SENTINEL,
            inverse_compression=float(SENTINEL),
            residual_raw=self.last_residual,
            # no grid here, so there is nothing to normalize by
            residual_normalized=self.last_residual,
            norm_drift=self.last_norm - 1.0,
        )


@dataclass
class FockTrajectory:
    records: list[TrajectoryRecord]
    rho_pump: list[FockDensityMatrix]
    rho_signal: list[FockDensityMatrix]
    saturated: bool = False
    max_top_occupation: float = 0.0
    final_state: FockState | None = None


def fock_evolve(alpha: float, cutoffs: tuple[int, int], ecfg: EvolutionConfig) -> FockTrajectory:
    """Implicit-Euler evolution in a truncated photon-number basis.

    Records the same observables as the grid paths plus both reduced density
    matrices at every recorded step.  Flags (and warns about) a top-level
    occupation above ``SATURATION_LIMIT``.
    """
    stepper = FockStepper(alpha, cutoffs, ecfg.delta_tau, ecfg.renormalize_each_step)
    out = FockTrajectory(records=[], rho_pump=[], rho_signal=[])

    def observe():
        out.records.append(stepper.record())
        rp, rs = stepper.reduced()
        out.rho_pump.append(rp)
        out.rho_signal.append(rs)
        out.max_top_occupation = max(out.max_top_occupation, stepper.top_occupation())

    observe()
    for step in range(1, ecfg.n_steps + 1):
        stepper.step()
        if step % ecfg.observe_every == 0 or step == ecfg.n_steps:
            observe()
    out.final_state = stepper.state
    if out.max_top_occupation > SATURATION_LIMIT:
        out.saturated = True
        warnings.warn(
            f"Fock cutoffs {cutoffs} saturated: top-level occupation {out.max_top_occupation:.2e}",
            CutoffWarning,
            stacklevel=2,
        )
    return out


# ---------------------------------------------------------------------------
# comparison


@dataclass
class TrajectoryComparison:
    max_abs: dict[str, float] = field(default_factory=dict)
    max_rel: dict[str, float] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)
    min_overlap: float | None = None

    @property
    def passed(self) -> bool:
        return not self.failed

    def summary(self) -> str:
        lines = []
        for name in self.max_abs:
            flag = "FAIL" if name in self.failed else "ok"
            lines.append(f"{name:>20s}  max|d|={self.max_abs[name]:.3e}  max rel={self.max_rel[name]:.3e}  {flag}")
        if self.min_overlap is not None:
            flag = "FAIL" if "overlap" in self.failed else "ok"
            lines.append(f"{'overlap':>20s}  min={self.min_overlap:.12f}  {flag}")
        return "\n".join(lines)


def compare_trajectories(
    a: Sequence[TrajectoryRecord],
    b: Sequence[TrajectoryRecord],
    tolerances: dict[str, float],
    overlap: Callable[[int], float] | None = None,
) -> TrajectoryComparison:
    """Per-field maximum deviations between two aligned trajectories.

    ``tolerances`` maps record field names to absolute tolerances; the
    special key ``"overlap"`` is a lower bound on ``overlap(step)``, which is
    evaluated at every shared step.
    """
    if len(a) != len(b) or any(x.step != y.step for x, y in zip(a, b)):
        raise ValueError("trajectories are not aligned on the same steps")
    names = set(TrajectoryRecord.columns())
    unknown = set(tolerances) - names - {"overlap"}
    if unknown:
        raise KeyError(f"unknown fields in tolerances: {sorted(unknown)}")
    report = TrajectoryComparison()
    for name, tol in tolerances.items():
        if name == "overlap":
            continue
        va = np.array([getattr(r, name) for r in a], dtype=float)
        vb = np.array([getattr(r, name) for r in b], dtype=float)
        diff = np.abs(va - vb)
        report.max_abs[name] = float(diff.max()) if diff.size else 0.0
        # relative deviations only where the reference is nonzero
        nz = vb != 0
        report.max_rel[name] = float((diff[nz] / np.abs(vb[nz])).max()) if nz.any() else 0.0
        if report.max_abs[name] > tol:
            report.failed.append(name)
    if "overlap" in tolerances:
        if overlap is None:
            raise ValueError("an overlap tolerance needs an overlap callback")
        values = [overlap(r.step) for r in a]
        report.min_overlap = float(min(values)) if values else 1.0
        if report.min_overlap < tolerances["overlap"]:
            report.failed.append("overlap")
    return report
