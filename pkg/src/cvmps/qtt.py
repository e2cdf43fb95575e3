"""Tensor-train algebra over binary sites.

States are stored as lists of order-3 tensors with legs ``(left, phys, right)``
and operators as order-4 tensors with legs ``(left, out, in, right)``.  Site 0
is the most significant bit of the grid index, so ``mps_to_dense`` of a state
is simply the C-ordered flattening of the full tensor.

All functions here are pure: inputs are never mutated and nothing truncates
unless it is explicitly asked to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "LOSSLESS",
    "Mpo",
    "Mps",
    "ResourceLimitError",
    "TruncationPolicy",
    "add",
    "canonicalize",
    "compression_counts",
    "expectation",
    "identity_mpo",
    "inner",
    "mpo_add",
    "mpo_apply",
    "mpo_dagger",
    "mpo_diagonal",
    "mpo_mul",
    "mpo_scale",
    "mpo_stack",
    "mpo_to_dense",
    "mpo_truncate",
    "mps_from_dense",
    "mps_to_dense",
    "norm",
    "scale",
    "split_svd",
    "stack",
    "truncate",
]

MAX_DENSE_STATE_BITS = 26
MAX_DENSE_OPERATOR_BITS = 13

# Singular values below this fraction of the largest are numerically zero and
# always dropped, even by "lossless" operations.
RANK_EPS = 1e-14


class ResourceLimitError(ValueError):
    """Raised when a dense bridge would exceed its memory guard."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond-dimension cap plus a relative singular-value threshold.

    Singular values are first capped at ``chi_max`` (keeping the largest),
    then any ``s_k < sv_cutoff * s_1`` is discarded.
    """

    chi_max: int = 2**31 - 1
    sv_cutoff: float = 0.0

    def __post_init__(self):
        if int(self.chi_max) != self.chi_max or self.chi_max < 1:
            raise ValueError(f"chi_max must be a positive integer, got {self.chi_max!r}")
        if not (0.0 <= self.sv_cutoff < 1.0):
            raise ValueError(f"sv_cutoff must lie in [0, 1), got {self.sv_cutoff!r}")


LOSSLESS = TruncationPolicy()


def _check_chain(sites, ndim, kind):
    if len(sites) == 0:
        raise ValueError(f"{kind} needs at least one site")
    for j, t in enumerate(sites):
        if t.ndim != ndim:
            raise ValueError(f"{kind} site {j} has {t.ndim} legs, expected {ndim}")
        if any(d != 2 for d in t.shape[1:-1]):
            raise ValueError(f"{kind} site {j} has non-binary physical legs {t.shape}")
    if sites[0].shape[0] != 1 or sites[-1].shape[-1] != 1:
        raise ValueError(f"{kind} boundary bonds must be 1")
    for j in range(len(sites) - 1):
        if sites[j].shape[-1] != sites[j + 1].shape[0]:
            raise ValueError(
                f"{kind} bond mismatch between sites {j} and {j + 1}: "
                f"{sites[j].shape} vs {sites[j + 1].shape}"
            )


@dataclass
class Mps:
    """Matrix product state on binary sites.

    ``center`` records the orthogonality center when the state is known to be
    in mixed-canonical form, otherwise ``None``.
    """

    sites: list[np.ndarray]
    center: int | None = None

    def __post_init__(self):
        self.sites = [np.asarray(s, dtype=np.complex128) for s in self.sites]
        _check_chain(self.sites, 3, "Mps")
        if self.center is not None and not (0 <= self.center < len(self.sites)):
            raise ValueError(f"center {self.center} outside 0..{len(self.sites) - 1}")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def bonds(self) -> list[int]:
        """Internal bond dimensions r_1 .. r_{n-1}."""
        return [s.shape[-1] for s in self.sites[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)

    def copy(self) -> Mps:
        return Mps([s.copy() for s in self.sites], self.center)


@dataclass
class Mpo:
    """Matrix product operator with site legs ``(left, out, in, right)``."""

    sites: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.sites = [np.asarray(s, dtype=np.complex128) for s in self.sites]
        _check_chain(self.sites, 4, "Mpo")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def bonds(self) -> list[int]:
        return [s.shape[-1] for s in self.sites[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)


def _require_same_length(a, b):
    if a.n_sites != b.n_sites:
        raise ValueError(f"site-count mismatch: {a.n_sites} vs {b.n_sites}")


# ---------------------------------------------------------------------------
# SVD with truncation and a fixed sign gauge


def _svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def split_svd(mat: np.ndarray, policy: TruncationPolicy = LOSSLESS):
    """Truncated SVD ``mat ~ u @ diag(s) @ vh``.

    Returns ``(u, s, vh, discarded_weight)`` where ``discarded_weight`` is the
    sum of squared dropped singular values.  Each column of ``u`` is rotated so
    its largest-magnitude entry is real and positive, which makes the factors
    reproducible bit for bit.
    """
    u, s, vh = _svd(mat)
    if s.size == 0 or s[0] == 0.0:
        keep = 1
    else:
        keep = min(policy.chi_max, s.size)
        threshold = max(policy.sv_cutoff, RANK_EPS) * s[0]
        keep = max(1, int(np.count_nonzero(s[:keep] >= threshold)))
    discarded = float(np.sum(s[keep:] ** 2))
    u, s, vh = u[:, :keep], s[:keep], vh[:keep, :]
    idx = np.argmax(np.abs(u), axis=0)
    pivot = u[idx, np.arange(keep)]
    mag = np.abs(pivot)
    phase = np.where(mag > 0, pivot / np.where(mag > 0, mag, 1.0), 1.0)
    u = u * phase.conj()
    vh = vh * phase[:, None]
    return u, s, vh, discarded


# ---------------------------------------------------------------------------
# Dense bridges


def _n_bits(length: int) -> int:
    n = int(length).bit_length() - 1
    if length < 2 or (1 << n) != length:
        raise ValueError(f"length {length} is not a power of two >= 2")
    return n


def mps_from_dense(amplitudes, policy: TruncationPolicy = LOSSLESS) -> Mps:
    """TT-SVD of a length-``2**n`` vector (most significant bit on site 0).

    The reconstruction error is bounded by the square root of the summed
    squared discarded singular values.
    """
    v = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    n = _n_bits(v.size)
    if n > MAX_DENSE_STATE_BITS:
        raise ResourceLimitError(f"{n} bits exceeds the dense-state guard of {MAX_DENSE_STATE_BITS}")
    sites = []
    rest = v.reshape(1, -1)
    r = 1
    for _ in range(n - 1):
        u, s, vh, _ = split_svd(rest.reshape(r * 2, -1), policy)
        k = s.size
        sites.append(u.reshape(r, 2, k))
        rest = s[:, None] * vh
        r = k
    sites.append(rest.reshape(r, 2, 1))
    return Mps(sites, center=n - 1)


def mps_to_dense(psi: Mps) -> np.ndarray:
    if psi.n_sites > MAX_DENSE_STATE_BITS:
        raise ResourceLimitError(f"{psi.n_sites} sites exceeds the dense-state guard")
    # contract each run between bond-1 cuts separately and join the runs
    # with a Kronecker product, so stacked states densify bit-exactly
    out = np.ones(1, dtype=np.complex128)
    block = np.ones((1, 1), dtype=np.complex128)
    for site in psi.sites:
        r, _, k = site.shape
        block = (block @ site.reshape(r, 2 * k)).reshape(-1, k)
        if k == 1:
            out = np.kron(out, block.reshape(-1))
            block = np.ones((1, 1), dtype=np.complex128)
    return out


def mpo_to_dense(op: Mpo) -> np.ndarray:
    if op.n_sites > MAX_DENSE_OPERATOR_BITS:
        raise ResourceLimitError(f"{op.n_sites} sites exceeds the dense-operator guard")
    out = np.ones((1, 1, 1), dtype=np.complex128)
    for w in op.sites:
        out = np.einsum("RCw,woiv->RoCiv", out, w)
        rows, _, cols, _, k = out.shape
        out = out.reshape(rows * 2, cols * 2, k)
    return out[:, :, 0]


def mpo_diagonal(op: Mpo) -> np.ndarray:
    """Diagonal of ``mpo_to_dense(op)`` without the full matrix.

    The diagonal of the product of site blocks only involves their diagonal
    entries, and the contraction runs in the same order as
    :func:`mpo_to_dense`, so the values agree bit for bit.
    """
    if op.n_sites > MAX_DENSE_STATE_BITS:
        raise ResourceLimitError(f"{op.n_sites} sites exceeds the dense-state guard")
    out = np.ones((1, 1), dtype=np.complex128)
    for w in op.sites:
        d = np.stack([w[:, 0, 0, :], w[:, 1, 1, :]], axis=1)  # (l, o, r)
        out = np.einsum("Rw,wov->Rov", out, d)
        out = out.reshape(-1, out.shape[2])
    return out[:, 0]


# ---------------------------------------------------------------------------
# Contractions


def inner(bra: Mps, ket: Mps) -> complex:
    """<bra|ket> by left-to-right environment contraction."""
    _require_same_length(bra, ket)
    env = np.ones((1, 1), dtype=np.complex128)
    for a, b in zip(bra.sites, ket.sites):
        env = np.tensordot(env, b, axes=([1], [0]))  # (ra, s, rb')
        env = np.tensordot(a.conj(), env, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


def _left_orthogonalize(sites, stop):
    """QR sweep making ``sites[:stop]`` left-orthogonal; returns new list."""
    sites = list(sites)
    for j in range(stop):
        r, d, k = sites[j].shape
        q, rr = np.linalg.qr(sites[j].reshape(r * d, k))
        sites[j] = q.reshape(r, d, q.shape[1])
        nxt = sites[j + 1]
        sites[j + 1] = np.tensordot(rr, nxt, axes=([1], [0]))
    return sites


def _right_orthogonalize(sites, stop):
    """QR sweep making ``sites[stop+1:]`` right-orthogonal."""
    sites = list(sites)
    for j in range(len(sites) - 1, stop, -1):
        r, d, k = sites[j].shape
        q, rr = np.linalg.qr(sites[j].reshape(r, d * k).T)
        sites[j] = q.T.reshape(q.shape[1], d, k)
        prev = sites[j - 1]
        sites[j - 1] = np.tensordot(prev, rr.T, axes=([prev.ndim - 1], [0]))
    return sites


def canonicalize(psi: Mps, center: int) -> Mps:
    """Mixed-canonical form with orthogonality center at ``center``."""
    n = psi.n_sites
    if not (0 <= center < n):
        raise IndexError(f"center {center} outside 0..{n - 1}")
    sites = _left_orthogonalize(psi.sites, center)
    sites = _right_orthogonalize(sites, center)
    return Mps(sites, center=center)


def norm(psi: Mps) -> float:
    """l2 norm, computed from the R factors of a QR sweep.

    Unlike ``sqrt(inner(psi, psi))`` this does not lose half the digits when
    ``psi`` is a small difference of two large states.
    """
    sites = _left_orthogonalize(psi.sites, psi.n_sites - 1)
    return float(np.linalg.norm(sites[-1]))


def _truncate_sites(sites, policy):
    sites = _left_orthogonalize(sites, len(sites) - 1)
    discarded = 0.0
    for j in range(len(sites) - 1, 0, -1):
        t = sites[j]
        r = t.shape[0]
        u, s, vh, dw = split_svd(t.reshape(r, -1), policy)
        discarded += dw
        sites[j] = vh.reshape((s.size,) + t.shape[1:])
        prev = sites[j - 1]
        sites[j - 1] = np.tensordot(prev, u * s, axes=([prev.ndim - 1], [0]))
    return sites, discarded


def truncate(psi: Mps, policy: TruncationPolicy) -> tuple[Mps, float]:
    """SVD rounding in canonical gauge.

    Returns the rounded state (right-canonical, center 0) and the total
    discarded weight; the l2 error is at most ``sqrt(discarded_weight)``.
    """
    sites, discarded = _truncate_sites(psi.sites, policy)
    return Mps(sites, center=0), discarded


def scale(psi: Mps, c: complex) -> Mps:
    """Multiply a state by a scalar (applied on the center site if known)."""
    j = psi.center if psi.center is not None else 0
    sites = list(psi.sites)
    sites[j] = sites[j] * c
    return Mps(sites, center=psi.center)


def _direct_sum(a_sites, b_sites, ca, cb):
    n = len(a_sites)
    if n == 1:
        return [ca * a_sites[0] + cb * b_sites[0]]
    out = []
    for j, (a, b) in enumerate(zip(a_sites, b_sites)):
        if j == 0:
            out.append(np.concatenate([ca * a, cb * b], axis=-1))
        elif j == n - 1:
            out.append(np.concatenate([a, b], axis=0))
        else:
            la, ra = a.shape[0], a.shape[-1]
            lb, rb = b.shape[0], b.shape[-1]
            mid = a.shape[1:-1]
            t = np.zeros((la + lb,) + mid + (ra + rb,), dtype=np.complex128)
            t[:la, ..., :ra] = a
            t[la:, ..., ra:] = b
            out.append(t)
    return out


def add(a: Mps, b: Mps, ca: complex = 1.0, cb: complex = 1.0) -> Mps:
    """``ca*a + cb*b`` with block-diagonal bonds (no truncation)."""
    _require_same_length(a, b)
    return Mps(_direct_sum(a.sites, b.sites, ca, cb))


def stack(a: Mps, b: Mps) -> Mps:
    """Kronecker product ``a ⊗ b``; the bits of ``a`` are more significant."""
    return Mps(list(a.sites) + list(b.sites))


def mpo_apply(op: Mpo, psi: Mps) -> Mps:
    _require_same_length(op, psi)
    sites = []
    for w, a in zip(op.sites, psi.sites):
        t = np.einsum("aoib,lic->alobc", w, a)
        wl, l, _, wr, r = t.shape
        sites.append(t.reshape(wl * l, 2, wr * r))
    return Mps(sites)


def expectation(psi: Mps, op: Mpo) -> complex:
    """<psi|op|psi> as one three-layer sweep."""
    _require_same_length(op, psi)
    env = np.ones((1, 1, 1), dtype=np.complex128)  # (bra, op, ket)
    for a, w in zip(psi.sites, op.sites):
        t = np.tensordot(env, a, axes=([2], [0]))  # (bra, op, s, ket')
        t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (bra, ket', o, op')
        env = np.tensordot(a.conj(), t, axes=([0, 1], [0, 2]))  # (bra', ket', op')
        env = env.transpose(0, 2, 1)
    return complex(env[0, 0, 0])


def compression_counts(psi: Mps) -> tuple[int, float, int]:
    """``(param_count, param_count / 2**n, max_bond)``."""
    count = int(sum(s.size for s in psi.sites))
    return count, count / 2.0**psi.n_sites, psi.max_bond


# ---------------------------------------------------------------------------
# Operators


def identity_mpo(n_sites: int) -> Mpo:
    eye = np.eye(2, dtype=np.complex128).reshape(1, 2, 2, 1)
    return Mpo([eye.copy() for _ in range(n_sites)])


def mpo_scale(op: Mpo, c: complex) -> Mpo:
    sites = list(op.sites)
    sites[0] = sites[0] * c
    return Mpo(sites)


def mpo_add(a: Mpo, b: Mpo, ca: complex = 1.0, cb: complex = 1.0) -> Mpo:
    _require_same_length(a, b)
    return Mpo(_direct_sum(a.sites, b.sites, ca, cb))


def mpo_mul(a: Mpo, b: Mpo) -> Mpo:
    """Matrix product ``a @ b`` (bond dimensions multiply)."""
    _require_same_length(a, b)
    sites = []
    for wa, wb in zip(a.sites, b.sites):
        t = np.einsum("aokb,ckid->acoibd", wa, wb)
        la, lb, _, _, ra, rb = t.shape
        sites.append(t.reshape(la * lb, 2, 2, ra * rb))
    return Mpo(sites)


def mpo_truncate(op: Mpo, policy: TruncationPolicy) -> Mpo:
    """Round bonds by SVD, treating each site as a 4-dimensional leg."""
    sites = [w.reshape(w.shape[0], 4, w.shape[-1]) for w in op.sites]
    sites, _ = _truncate_sites(sites, policy)
    return Mpo([t.reshape(t.shape[0], 2, 2, t.shape[-1]) for t in sites])


def mpo_stack(a: Mpo, b: Mpo) -> Mpo:
    """Kronecker product ``a ⊗ b`` of operators on disjoint registers."""
    return Mpo(list(a.sites) + list(b.sites))


def mpo_dagger(op: Mpo) -> Mpo:
    return Mpo([w.transpose(0, 2, 1, 3).conj() for w in op.sites])
