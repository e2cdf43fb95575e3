"""Two-site sweeping solver for U x = b in MPS form, and the time-stepping loop.

Each two-site update projects the global system onto the current left/right
orthonormal bases, solves the reduced square system U' x = b exactly (dense
LU when small, restarted GMRES otherwise) and splits the result by a
truncated SVD.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .qtt import (
    LOSSLESS,
    Mpo,
    Mps,
    TruncationPolicy,
    add,
    canonicalize,
    identity_mpo,
    mpo_add,
    mpo_dagger,
    mpo_mul,
    mpo_truncate,
    norm,
    scale,
    split_svd,
    truncate,
)

log = logging.getLogger(__name__)

__all__ = [
    "EvolutionConfig",
    "ResidualOperators",
    "SolverBreakdown",
    "SolverConfig",
    "StepReport",
    "assemble_local_system",
    "evolve",
    "residual_norm",
    "solve_linear",
    "split_two_site",
]

CONDITION_LIMIT = 1e14


class SolverBreakdown(RuntimeError):
    """A local system was numerically singular."""


@dataclass(frozen=True)
class SolverConfig:
    max_sweeps: int = 8
    rel_residual_tol: float = 1e-8
    truncation: TruncationPolicy = TruncationPolicy(chi_max=30, sv_cutoff=1e-10)
    # sweeps stop once the residual improves by less than this fraction
    min_improvement: float = 0.01
    # also stop once the residual is within the sweep's own truncation error,
    # which further sweeps cannot reduce
    stop_at_truncation: bool = True
    # a sweep is one left-to-right pass; set to also sweep back right-to-left
    full_sweeps: bool = False
    # local systems up to this size are solved by dense LU
    dense_local_max: int = 128
    local_tol: float = 1e-10
    # zero-weight basis vectors added per cut after each split (0 disables)
    expansion_rank: int = 4
    n_ref_bits: int = 25

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.rel_residual_tol > 0:
            raise ValueError("rel_residual_tol must be > 0")


@dataclass(frozen=True)
class EvolutionConfig:
    delta_tau: float
    n_steps: int
    renormalize_each_step: bool = True
    observe_every: int = 1

    def __post_init__(self):
        if not self.delta_tau > 0:
            raise ValueError("delta_tau must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.observe_every < 1:
            raise ValueError("observe_every must be >= 1")


@dataclass
class StepReport:
    residual_raw: float = 0.0
    residual_normalized: float = 0.0
    sweeps_used: int = 0
    max_bond: int = 1
    norm_before_renorm: float = 1.0
    discarded_weight: float = 0.0
    converged: bool = True
    history: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# environments
#
# Operator environments have legs (bra, mpo, ket); state environments (bra, rhs).


def _left_op(env, A, W):
    t = np.tensordot(env, A, axes=([2], [0]))  # (a, w, s, l')
    t = np.tensordot(t, W, axes=([1, 2], [0, 2]))  # (a, l', o, w')
    t = np.tensordot(A.conj(), t, axes=([0, 1], [0, 2]))  # (a', l', w')
    return t.transpose(0, 2, 1)


def _right_op(env, A, W):
    t = np.tensordot(A, env, axes=([2], [2]))  # (l, s, a', w')
    t = np.tensordot(W, t, axes=([2, 3], [1, 3]))  # (w, o, l, a')
    t = np.tensordot(A.conj(), t, axes=([1, 2], [1, 3]))  # (a, w, l)
    return t


def _left_vec(env, A, B):
    t = np.tensordot(env, B, axes=([1], [0]))  # (a, s, rb)
    return np.tensordot(A.conj(), t, axes=([0, 1], [0, 1]))


def _right_vec(env, A, B):
    t = np.tensordot(B, env, axes=([2], [1]))  # (lb, s, a')
    return np.tensordot(A.conj(), t, axes=([1, 2], [1, 2]))  # (a, lb)


class _Environments:
    """Cached projections of U and the right-hand side onto the current bases."""

    def __init__(self, U: Mpo, rhs: Mps):
        n = U.n_sites
        self.U = U.sites
        self.B = rhs.sites
        one3 = np.ones((1, 1, 1), dtype=np.complex128)
        one2 = np.ones((1, 1), dtype=np.complex128)
        self.LU = [None] * (n + 1)
        self.RU = [None] * (n + 1)
        self.LB = [None] * (n + 1)
        self.RB = [None] * (n + 1)
        self.LU[0], self.LB[0] = one3, one2
        self.RU[n], self.RB[n] = one3, one2

    def update_left(self, j, A):
        """Absorb left-orthogonal site ``j`` into the left environment."""
        self.LU[j + 1] = _left_op(self.LU[j], A, self.U[j])
        self.LB[j + 1] = _left_vec(self.LB[j], A, self.B[j])

    def update_right(self, j, A):
        """Absorb right-orthogonal site ``j`` into the right environment."""
        self.RU[j] = _right_op(self.RU[j + 1], A, self.U[j])
        self.RB[j] = _right_vec(self.RB[j + 1], A, self.B[j])


class _LocalOperator:
    """Matrix-free U' acting on a two-site block (l, s1, s2, r).

    The left environment is pre-contracted with the first MPO site and the
    right environment with the second, and both are stored as matrices so a
    product is two GEMMs with no transposes.
    """

    def __init__(self, L, W1, W2, R):
        LW = np.tensordot(L, W1, axes=([1], [0]))  # (a, l, o1, s1, w)
        WR = np.tensordot(W2, R, axes=([3], [1]))  # (w, o2, s2, b, r)
        a, l, o1, s1, w = LW.shape
        _, o2, s2, b, r = WR.shape
        self.shape4 = (l, s1, s2, r)
        self._w = w
        # rows (a, o1, w), columns (l, s1)
        self.left = np.ascontiguousarray(LW.transpose(0, 2, 4, 1, 3)).reshape(a * o1 * w, l * s1)
        # rows (w, s2, r), columns (o2, b)
        self.right = np.ascontiguousarray(WR.transpose(0, 2, 4, 1, 3)).reshape(w * s2 * r, o2 * b)

    @property
    def size(self):
        return int(np.prod(self.shape4))

    def matvec(self, x):
        l, s1, s2, r = self.shape4
        t = self.left @ x.reshape(l * s1, s2 * r)  # (a o1 w, s2 r)
        t = t.reshape(-1, self._w * s2 * r) @ self.right  # (a o1, o2 b)
        return t.reshape(-1)

    def dense(self):
        l, s1, s2, r = self.shape4
        w = self._w
        Lt = self.left.reshape(l, 2, w, l, s1)
        Rt = self.right.reshape(w, s2, r, 2, r)
        t = np.tensordot(Lt, Rt, axes=([2], [0]))  # (a, o1, l, s1, s2, r, o2, b)
        t = t.transpose(0, 1, 6, 7, 2, 3, 4, 5)
        return t.reshape(self.size, self.size)


def _local_rhs(LB, B1, B2, RB):
    t = np.tensordot(LB, B1, axes=([1], [0]))  # (a, s1, m)
    t = np.tensordot(t, B2, axes=([2], [0]))  # (a, s1, s2, rb)
    t = np.tensordot(t, RB, axes=([3], [1]))  # (a, s1, s2, b)
    return t


def assemble_local_system(U: Mpo, rhs: Mps, psi: Mps, site_pair: int):
    """Dense reduced system (U', b) for the pair ``(site_pair, site_pair+1)``.

    ``psi`` is brought to canonical form centred on the pair first, so the
    bases on either side are orthonormal.
    """
    j = site_pair
    if not (0 <= j < psi.n_sites - 1):
        raise IndexError(f"pair index {j} outside 0..{psi.n_sites - 2}")
    psi = canonicalize(psi, j)
    envs = _Environments(U, rhs)
    for k in range(j):
        envs.update_left(k, psi.sites[k])
    for k in range(psi.n_sites - 1, j + 1, -1):
        envs.update_right(k, psi.sites[k])
    op = _LocalOperator(envs.LU[j], U.sites[j], U.sites[j + 1], envs.RU[j + 2])
    b = _local_rhs(envs.LB[j], rhs.sites[j], rhs.sites[j + 1], envs.RB[j + 2])
    return op.dense(), b.reshape(-1)


def split_two_site(theta: np.ndarray, policy: TruncationPolicy = LOSSLESS, move: str = "right"):
    """SVD split of a two-site block ``(l, 2, 2, r)``.

    With ``move="right"`` the left site is left-orthogonal and the singular
    values go to the right site; ``move="left"`` mirrors this.
    Returns ``(left, right, discarded_weight)``.
    """
    l, _, _, r = theta.shape
    u, s, vh, discarded = split_svd(theta.reshape(l * 2, 2 * r), policy)
    k = s.size
    if move == "right":
        left, right = u, s[:, None] * vh
    elif move == "left":
        left, right = u * s, vh
    else:
        raise ValueError(f"move must be 'left' or 'right', got {move!r}")
    return left.reshape(l, 2, k), right.reshape(k, 2, r), discarded


def _solve_local(op: _LocalOperator, b, x0, cfg: SolverConfig):
    n = op.size
    if n <= cfg.dense_local_max:
        M = op.dense()
        with warnings.catch_warnings():
            # singularity is detected below from the condition estimate
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
        # reciprocal condition estimate from LAPACK, 1-norm
        rcond = scipy.linalg.lapack.zgecon(lu, np.linalg.norm(M, 1))[0]
        if rcond * CONDITION_LIMIT < 1.0:
            raise SolverBreakdown(f"local system of size {n} is singular (rcond={rcond:.3g})")
        return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    lin = spla.LinearOperator((n, n), matvec=op.matvec, dtype=np.complex128)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x, info = spla.gmres(lin, b, x0=x0, rtol=cfg.local_tol, atol=0.0, restart=40, maxiter=50)
    if info != 0:
        res = np.linalg.norm(op.matvec(x) - b) / bnorm
        log.debug("local GMRES stopped early (size %d, relative residual %.2e)", n, res)
        if res > 1e-6:
            M = op.dense()
            x = scipy.linalg.solve(M, b, check_finite=False)
    return x


def _expansion_count(sp, limit):
    # singular values of the projected directions; anything near round-off is noise
    if limit <= 0 or sp.size == 0 or sp[0] == 0.0:
        return 0
    return int(np.count_nonzero(sp[:limit] > 1e-10 * sp[0]))


def _expand_left(A, s, LU, W, extra):
    """Append up to ``extra`` orthonormal columns to left-orthogonal ``A``
    spanning the new directions of U psi at this cut."""
    l, _, k = A.shape
    a2 = A.reshape(l * 2, k)
    t = np.tensordot(LU, A * s, axes=([2], [0]))  # (a, w, s, k)
    t = np.tensordot(t, W, axes=([1, 2], [0, 2]))  # (a, k, o, w')
    P = t.transpose(0, 2, 3, 1).reshape(l * 2, -1)
    P = P - a2 @ (a2.conj().T @ P)
    u, sp, _ = np.linalg.svd(P, full_matrices=False)
    p = _expansion_count(sp, min(extra, 2 * l - k))
    if p == 0:
        return A, 0
    # re-project once more so the appended columns are orthogonal to A to working precision
    q, _ = np.linalg.qr(u[:, :p] - a2 @ (a2.conj().T @ u[:, :p]))
    return np.concatenate([a2, q], axis=1).reshape(l, 2, k + p), p


def _expand_right(B, s, RU, W, extra):
    """Mirror of :func:`_expand_left` for a right-orthogonal ``B``."""
    k, _, r = B.shape
    b2 = B.reshape(k, 2 * r)
    t = np.tensordot(s[:, None, None] * B, RU, axes=([2], [2]))  # (k, s, b, w')
    t = np.tensordot(W, t, axes=([2, 3], [1, 3]))  # (w, o, k, b)
    P = t.transpose(0, 2, 1, 3).reshape(-1, 2 * r)
    P = P - (P @ b2.conj().T) @ b2
    _, sp, vh = np.linalg.svd(P, full_matrices=False)
    p = _expansion_count(sp, min(extra, 2 * r - k))
    if p == 0:
        return B, 0
    rows = vh[:p]
    rows = rows - (rows @ b2.conj().T) @ b2
    q, _ = np.linalg.qr(rows.T)
    return np.concatenate([b2, q.T], axis=0).reshape(k + p, 2, r), p


def _sweep(U, rhs, sites, envs, cfg):
    """One left-to-right pass (and back, with ``cfg.full_sweeps``).

    ``sites`` is right-canonical with center 0 on entry; on exit the center is
    at the last site, or back at 0 after a full sweep.
    """
    n = len(sites)
    chi = cfg.truncation.chi_max
    discarded = 0.0
    order = [(j, "right") for j in range(n - 1)]
    if cfg.full_sweeps:
        order += [(j, "left") for j in range(n - 2, -1, -1)]
    for j, move in order:
        op = _LocalOperator(envs.LU[j], U.sites[j], U.sites[j + 1], envs.RU[j + 2])
        b = _local_rhs(envs.LB[j], rhs.sites[j], rhs.sites[j + 1], envs.RB[j + 2])
        x0 = np.tensordot(sites[j], sites[j + 1], axes=([2], [0]))
        x = _solve_local(op, b.reshape(-1), x0.reshape(-1), cfg)
        l, _, _, r = op.shape4
        u, s, vh, dw = split_svd(x.reshape(l * 2, 2 * r), cfg.truncation)
        discarded += dw
        k = s.size
        # largest useful bond at this cut
        room = min(chi, 2 ** min(j + 1, n - j - 1)) - k
        extra = min(cfg.expansion_rank, room)
        if move == "right":
            left = u.reshape(l, 2, k)
            right = (s[:, None] * vh).reshape(k, 2, r)
            if extra > 0:
                left, p = _expand_left(left, s, envs.LU[j], U.sites[j], extra)
                right = np.concatenate([right, np.zeros((p, 2, r), dtype=right.dtype)], axis=0)
            sites[j], sites[j + 1] = left, right
            envs.update_left(j, left)
        else:
            left = (u * s).reshape(l, 2, k)
            right = vh.reshape(k, 2, r)
            if extra > 0:
                right, p = _expand_right(right, s, envs.RU[j + 2], U.sites[j + 1], extra)
                left = np.concatenate([left, np.zeros((l, 2, p), dtype=left.dtype)], axis=2)
            sites[j], sites[j + 1] = left, right
            envs.update_right(j + 1, right)
    return discarded


def _sandwich(psi: Mps, op: Mpo) -> complex:
    """<psi|op|psi>."""
    return _cross(psi, op, psi)


def _cross(bra: Mps, K: Mpo, ket: Mps) -> complex:
    """<bra|K|ket>."""
    env = np.ones((1, 1, 1), dtype=np.complex128)
    for A, W, B in zip(bra.sites, K.sites, ket.sites):
        t = np.tensordot(env, B, axes=([2], [0]))
        t = np.tensordot(t, W, axes=([1, 2], [0, 2]))
        env = np.tensordot(A.conj(), t, axes=([0, 1], [0, 2])).transpose(0, 2, 1)
    return complex(env[0, 0, 0])


@dataclass(frozen=True)
class ResidualOperators:
    """``K = U - I`` and ``K^dagger K``, both rounded.

    Separating the identity keeps residuals accurate; the precomputed
    ``K^dagger K`` turns ``||K psi||^2`` into one sandwich.
    """

    K: Mpo
    KK: Mpo

    @classmethod
    def of(cls, U: Mpo) -> "ResidualOperators":
        from .operators import OPERATOR_ROUNDING

        K = mpo_truncate(mpo_add(U, identity_mpo(U.n_sites), 1.0, -1.0), OPERATOR_ROUNDING)
        KK = mpo_truncate(mpo_mul(mpo_dagger(K), K), OPERATOR_ROUNDING)
        return cls(K, KK)


def _residual_raw(ops: ResidualOperators, psi_next: Mps, psi_prev: Mps) -> float:
    # r = (psi_next - psi_prev) + K psi_next with K = U - I
    d = add(psi_next, psi_prev, 1.0, -1.0)
    dd = norm(d) ** 2
    kk = _sandwich(psi_next, ops.KK).real
    dk = _cross(d, ops.K, psi_next).real
    return float(np.sqrt(max(dd + kk + 2.0 * dk, 0.0)))


def grid_normalization(n_total: int, n_ref_bits: int = 25) -> float:
    """Factor N = 2**(n_total - n_ref_bits) used to compare residuals across grids."""
    return 2.0 ** (n_total - n_ref_bits)


def residual_norm(U: Mpo, psi_next: Mps, psi_prev: Mps, n_ref_bits: int = 25) -> tuple[float, float]:
    """``(||psi_prev - U psi_next||, same / sqrt(N))`` without densifying.

    The norm is expanded into inner products, so values below roughly
    ``sqrt(eps) * (||psi_next - psi_prev|| + ||(U - I) psi_next||)`` are
    rounding noise.
    """
    if not (U.n_sites == psi_next.n_sites == psi_prev.n_sites):
        raise ValueError("site-count mismatch")
    raw = _residual_raw(ResidualOperators.of(U), psi_next, psi_prev)
    return raw, raw / np.sqrt(grid_normalization(U.n_sites, n_ref_bits))


def solve_linear(
    U: Mpo, rhs: Mps, guess: Mps, cfg: SolverConfig = SolverConfig(), residual_ops: ResidualOperators | None = None
):
    """Solve ``U psi = rhs`` by two-site sweeps starting from ``guess``.

    Sweeps stop when the grid-normalized residual drops below
    ``cfg.rel_residual_tol`` (relative to ``||rhs||``), improves by less
    than ``cfg.min_improvement``, or (with ``cfg.stop_at_truncation``) is no
    larger than the norm of what the sweep truncated away.  ``residual_ops``
    may pass precomputed :class:`ResidualOperators` of ``U``.
    Returns ``(psi, StepReport)``; ``psi`` is right-canonical (center 0).
    """
    if not (U.n_sites == rhs.n_sites == guess.n_sites):
        raise ValueError("site-count mismatch")
    if guess.max_bond > cfg.truncation.chi_max:
        raise ValueError(f"guess bond {guess.max_bond} exceeds chi_max {cfg.truncation.chi_max}")
    n = U.n_sites
    residual_ops = ResidualOperators.of(U) if residual_ops is None else residual_ops
    rhs_norm = norm(rhs)
    scale_ref = np.sqrt(grid_normalization(n, cfg.n_ref_bits))
    report = StepReport()
    if rhs_norm == 0.0:
        zero = scale(canonicalize(guess, 0), 0.0)
        return zero, report

    if n == 1:
        M = U.sites[0][0, :, :, 0]
        x = np.linalg.solve(M, rhs.sites[0][0, :, 0])
        psi = Mps([x.reshape(1, 2, 1)], center=0)
        report.residual_raw = float(np.linalg.norm(M @ x - rhs.sites[0][0, :, 0]))
        report.residual_normalized = report.residual_raw / scale_ref
        report.sweeps_used = 1
        return psi, report

    psi = canonicalize(guess, 0)
    sites = list(psi.sites)
    envs = _Environments(U, rhs)
    for k in range(n - 1, 1, -1):
        envs.update_right(k, sites[k])
    best, best_res = None, np.inf
    prev = np.inf
    for sweep in range(1, cfg.max_sweeps + 1):
        dw_sweep = _sweep(U, rhs, sites, envs, cfg)
        # drop the zero-weight expansion vectors and enforce the policy
        psi, dw = truncate(Mps(list(sites)), cfg.truncation)
        dw_sweep += dw
        report.discarded_weight += dw_sweep
        raw = _residual_raw(residual_ops, psi, rhs)
        rel = raw / rhs_norm / scale_ref
        report.history.append(raw)
        report.sweeps_used = sweep
        if raw < best_res:
            best, best_res = psi, raw
        if rel < cfg.rel_residual_tol:
            report.converged = True
            break
        if cfg.stop_at_truncation and raw <= np.sqrt(dw_sweep) * rhs_norm:
            report.converged = True
            break
        if prev < np.inf and (prev - raw) < cfg.min_improvement * prev:
            report.converged = True
            break
        prev = raw
        if sweep < cfg.max_sweeps:
            sites = list(psi.sites)
            envs = _Environments(U, rhs)
            for k in range(n - 1, 1, -1):
                envs.update_right(k, sites[k])
    else:
        report.converged = False
    report.residual_raw = best_res
    report.residual_normalized = best_res / scale_ref
    report.max_bond = best.max_bond
    return best, report


# ---------------------------------------------------------------------------
# time stepping


Observer = Callable[[int, float, Mps, StepReport], object]


def evolve(
    initial: Mps,
    U: Mpo,
    ecfg: EvolutionConfig,
    scfg: SolverConfig = SolverConfig(),
    observer: Observer | None = None,
    start_step: int = 0,
    on_step: Callable[[int, Mps, StepReport], None] | None = None,
) -> list:
    """Implicit-Euler loop ``psi_{t+1} = U^{-1} psi_t``.

    ``observer(step, tau, psi, report)`` is called for the initial state
    (only when ``start_step`` is 0, so a resumed run does not repeat a row),
    every ``observe_every`` steps, and at the final step; the list of its
    return values is returned.  ``on_step`` sees every step (used
    for checkpointing).  A :class:`SolverBreakdown` propagates after
    ``on_step`` has seen the last good state.
    """
    observer = observer or (lambda step, tau, psi, rep: (step, tau, psi))
    residual_ops = ResidualOperators.of(U)
    psi = initial
    records = []
    if start_step == 0:
        records.append(observer(start_step, start_step * ecfg.delta_tau, psi, StepReport(max_bond=psi.max_bond)))
    for step in range(start_step + 1, ecfg.n_steps + 1):
        nxt, report = solve_linear(U, psi, psi, scfg, residual_ops=residual_ops)
        nrm = norm(nxt)
        report.norm_before_renorm = nrm
        if ecfg.renormalize_each_step and nrm > 0:
            nxt = scale(nxt, 1.0 / nrm)
        psi = nxt
        if not report.converged:
            log.warning("step %d: sweeps did not converge (residual %.3e)", step, report.residual_raw)
        if on_step is not None:
            on_step(step, psi, report)
        if step % ecfg.observe_every == 0 or step == ecfg.n_steps:
            records.append(observer(step, step * ecfg.delta_tau, psi, report))
    return records
