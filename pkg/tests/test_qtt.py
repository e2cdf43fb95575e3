import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mpo, random_mps, rel_err
from cvmps.grids import QuadratureGrid
from cvmps.operators import position_mpo
from cvmps.qtt import (
    LOSSLESS,
    Mpo,
    Mps,
    ResourceLimitError,
    TruncationPolicy,
    add,
    canonicalize,
    compression_counts,
    expectation,
    identity_mpo,
    inner,
    mpo_add,
    mpo_apply,
    mpo_dagger,
    mpo_diagonal,
    mpo_mul,
    mpo_stack,
    mpo_to_dense,
    mpo_truncate,
    mps_from_dense,
    mps_to_dense,
    norm,
    scale,
    split_svd,
    stack,
    truncate,
)

seeds = st.integers(0, 2**32 - 1)


def product(*vectors):
    return Mps([np.asarray(v, dtype=complex).reshape(1, 2, 1) for v in vectors])


# ---------------------------------------------------------------------------
# policy and containers


def test_policy_rejects_bad_values():
    with pytest.raises(ValueError):
        TruncationPolicy(chi_max=0)
    with pytest.raises(ValueError):
        TruncationPolicy(sv_cutoff=1.0)
    with pytest.raises(ValueError):
        TruncationPolicy(sv_cutoff=-1e-3)


def test_mps_rejects_broken_chains():
    with pytest.raises(ValueError):
        Mps([np.ones((1, 2, 2)), np.ones((3, 2, 1))])
    with pytest.raises(ValueError):
        Mps([np.ones((2, 2, 1))])
    with pytest.raises(ValueError):
        Mps([np.ones((1, 3, 1))])
    with pytest.raises(ValueError):
        Mps([])


def test_split_svd_sign_gauge(rng):
    mat = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
    u, s, vh, dw = split_svd(mat)
    assert dw == 0.0
    np.testing.assert_allclose((u * s) @ vh, mat, atol=1e-12)
    for k in range(u.shape[1]):
        j = np.argmax(np.abs(u[:, k]))
        assert abs(u[j, k].imag) < 1e-14 and u[j, k].real > 0
    # the gauge does not depend on an overall phase of the input
    u2, _, _, _ = split_svd(mat * np.exp(0.7j))
    np.testing.assert_allclose(np.abs(u2), np.abs(u), atol=1e-12)


def test_split_svd_reports_discarded_weight():
    mat = np.diag([3.0, 2.0, 1.0])
    _, s, _, dw = split_svd(mat, TruncationPolicy(chi_max=2))
    assert list(s) == [3.0, 2.0]
    assert dw == pytest.approx(1.0)
    _, s, _, dw = split_svd(mat, TruncationPolicy(sv_cutoff=0.5))
    assert list(s) == [3.0, 2.0] and dw == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# dense bridge


def test_basis_vector_is_rank_one():
    psi = mps_from_dense(np.array([1, 0, 0, 0]), TruncationPolicy(chi_max=8))
    assert psi.bonds == [1]
    np.testing.assert_array_equal(mps_to_dense(psi), [1, 0, 0, 0])


def test_constant_vector_is_rank_one():
    psi = mps_from_dense(np.ones(4) / 2)
    assert psi.bonds == [1]
    np.testing.assert_allclose(mps_to_dense(psi), np.ones(4) / 2, atol=1e-15)


def test_gaussian_roundtrip():
    x = np.linspace(-8, 8, 2**10)
    v = np.exp(-(x**2) / 2)
    psi = mps_from_dense(v, TruncationPolicy(sv_cutoff=1e-12))
    assert rel_err(mps_to_dense(psi), v) <= 1e-10


def test_msb_first_ordering():
    # the first site selects the half of the support
    v = np.r_[np.zeros(4), np.ones(4)]
    psi = mps_from_dense(v)
    first = np.abs(psi.sites[0].ravel())
    assert first[0] <= 1e-15 and first[1] > 0.5


def test_single_site_and_product_states():
    np.testing.assert_array_equal(mps_to_dense(Mps([np.array([2.0, 3.0]).reshape(1, 2, 1)])), [2, 3])
    np.testing.assert_array_equal(mps_to_dense(product([1, 0], [0, 1])), [0, 1, 0, 0])


def test_dense_bridge_errors():
    with pytest.raises(ValueError):
        mps_from_dense(np.ones(6))
    with pytest.raises(ValueError):
        mps_from_dense(np.ones(1))
    big = Mps([np.ones((1, 2, 1))] * 27)
    with pytest.raises(ResourceLimitError):
        mps_to_dense(big)
    with pytest.raises(ResourceLimitError):
        mpo_to_dense(identity_mpo(14))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 12), seed=seeds)
def test_lossless_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    assert rel_err(mps_to_dense(mps_from_dense(v, LOSSLESS)), v) <= 1e-12


# ---------------------------------------------------------------------------
# inner products and gauge


def test_inner_of_orthogonal_product_states():
    assert inner(product([1, 0], [1, 0]), product([0, 1], [1, 0])) == 0


def test_inner_rejects_mismatch(rng):
    with pytest.raises(ValueError):
        inner(random_mps(3, 2, rng), random_mps(4, 2, rng))


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_inner_matches_dense(seed):
    rng = np.random.default_rng(seed)
    a, b = random_mps(8, 4, rng), random_mps(8, 5, rng)
    dense = np.vdot(mps_to_dense(a), mps_to_dense(b))
    assert abs(inner(a, b) - dense) <= 1e-12 * max(1.0, abs(dense))
    assert inner(a, a).real == pytest.approx(1.0, abs=1e-12)


def test_canonicalize_range(rng):
    psi = random_mps(4, 2, rng)
    with pytest.raises(IndexError):
        canonicalize(psi, 4)
    with pytest.raises(IndexError):
        canonicalize(psi, -1)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 9), seed=seeds, data=st.data())
def test_canonical_gauge(n, seed, data):
    rng = np.random.default_rng(seed)
    psi = random_mps(n, 6, rng)
    center = data.draw(st.integers(0, n - 1))
    phi = canonicalize(psi, center)
    assert phi.center == center
    assert rel_err(mps_to_dense(phi), mps_to_dense(psi)) <= 1e-13
    for j, A in enumerate(phi.sites):
        if j < center:
            m = A.reshape(-1, A.shape[2])
            np.testing.assert_allclose(m.conj().T @ m, np.eye(m.shape[1]), atol=1e-12)
        elif j > center:
            m = A.reshape(A.shape[0], -1)
            np.testing.assert_allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=1e-12)
    again = canonicalize(phi, center)
    for A, B in zip(again.sites, phi.sites):
        np.testing.assert_allclose(A, B, atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(seed=seeds, center=st.integers(0, 6))
def test_gauge_invariance_of_observables(seed, center):
    rng = np.random.default_rng(seed)
    psi, other = random_mps(7, 4, rng), random_mps(7, 3, rng)
    op = random_mpo(7, 2, rng)
    phi = canonicalize(psi, center)
    assert abs(inner(other, phi) - inner(other, psi)) <= 1e-12
    assert abs(expectation(phi, op) - expectation(psi, op)) <= 1e-12 * max(1, abs(expectation(psi, op)))
    assert abs(norm(phi) - norm(psi)) <= 1e-12


# ---------------------------------------------------------------------------
# truncation


def test_truncation_identity_when_generous(rng):
    psi = random_mps(6, 4, rng)
    out, dw = truncate(psi, TruncationPolicy(chi_max=64))
    assert dw == 0.0
    assert out.bonds == psi.bonds
    assert rel_err(mps_to_dense(out), mps_to_dense(psi)) <= 1e-13


def test_gaussian_truncated_to_two():
    x = np.linspace(-8, 8, 2**10)
    v = np.exp(-(x**2) / 2)
    v /= np.linalg.norm(v)
    full = mps_from_dense(v)
    low, dw = truncate(full, TruncationPolicy(chi_max=2))
    assert low.max_bond <= 2
    w = mps_to_dense(low)
    fid = abs(np.vdot(v, w)) ** 2 / np.vdot(w, w).real
    # sequential SVD rounding: fidelity is at least 1 - discarded weight;
    # the best rank-2 tail at any single cut caps what any chi = 2 state can reach
    assert fid >= 1 - dw
    tails = [(np.linalg.svd(v.reshape(2**k, -1), compute_uv=False)[2:] ** 2).sum() for k in range(1, 10)]
    assert fid <= 1 - max(tails) + 1e-12
    assert fid >= 0.998


def test_bell_state_discards_half():
    psi = mps_from_dense(np.array([1, 0, 0, 1]) / np.sqrt(2))
    out, dw = truncate(psi, TruncationPolicy(chi_max=1))
    assert dw == pytest.approx(0.5)
    assert out.max_bond == 1


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 12), seed=seeds, chi=st.integers(1, 6), cut=st.sampled_from([0.0, 1e-3, 0.1]))
def test_truncation_error_bound(n, seed, chi, cut):
    rng = np.random.default_rng(seed)
    psi = random_mps(n, 8, rng)
    out, dw = truncate(psi, TruncationPolicy(chi_max=chi, sv_cutoff=cut))
    assert out.max_bond <= chi
    err = np.linalg.norm(mps_to_dense(out) - mps_to_dense(psi))
    assert err <= np.sqrt(dw) * (1 + 1e-10) + 1e-12


# ---------------------------------------------------------------------------
# arithmetic


def test_add_cancels(rng):
    psi = random_mps(6, 3, rng)
    assert norm(add(psi, psi, 1, -1)) <= 1e-12


def test_add_basis_states():
    e0 = product([1, 0], [1, 0], [1, 0])
    e1 = product([1, 0], [1, 0], [0, 1])
    np.testing.assert_allclose(mps_to_dense(add(e0, e1, 1, 1)), [1, 1, 0, 0, 0, 0, 0, 0])


def test_add_bonds_add(rng):
    a, b = random_mps(5, 2, rng), random_mps(5, 3, rng)
    assert add(a, b).bonds == [x + y for x, y in zip(a.bonds, b.bonds)]


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 10), seed=seeds)
def test_linearity(n, seed):
    rng = np.random.default_rng(seed)
    a, b = random_mps(n, 4, rng), random_mps(n, 3, rng)
    ca, cb = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
    expected = ca * mps_to_dense(a) + cb * mps_to_dense(b)
    assert rel_err(mps_to_dense(add(a, b, ca, cb)), expected) <= 1e-12
    op = random_mpo(n, 3, rng)
    assert rel_err(mps_to_dense(mpo_apply(op, a)), mpo_to_dense(op) @ mps_to_dense(a)) <= 1e-12


def test_scale(rng):
    psi = random_mps(4, 2, rng)
    np.testing.assert_allclose(mps_to_dense(scale(psi, 2j)), 2j * mps_to_dense(psi))


def test_mpo_apply_identity_and_position(rng):
    psi = random_mps(5, 3, rng)
    np.testing.assert_allclose(mps_to_dense(mpo_apply(identity_mpo(5), psi)), mps_to_dense(psi), atol=1e-14)
    X = position_mpo(QuadratureGrid(0.0, 3.0, 2))
    out = mps_to_dense(mpo_apply(X, mps_from_dense(np.ones(4) / 2)))
    np.testing.assert_allclose(out, np.arange(4) / 2, atol=1e-15)


def test_mpo_apply_bond_product(rng):
    psi, op = random_mps(5, 3, rng), random_mpo(5, 2, rng)
    assert mpo_apply(op, psi).bonds == [2 * b for b in psi.bonds]
    with pytest.raises(ValueError):
        mpo_apply(random_mpo(4, 2, rng), psi)


def test_stack_kron_order(rng):
    a, b = random_mps(3, 2, rng), random_mps(4, 3, rng)
    s = stack(a, b)
    assert s.n_sites == 7
    assert s.bonds[2] == 1
    da, db, ds = mps_to_dense(a), mps_to_dense(b), mps_to_dense(s)
    np.testing.assert_array_equal(ds, np.multiply.outer(da, db).reshape(-1))
    assert norm(s) == pytest.approx(1.0, abs=1e-13)


def test_expectation_of_identity(rng):
    psi = random_mps(6, 3, rng, normalize=False)
    assert expectation(psi, identity_mpo(6)) == pytest.approx(inner(psi, psi), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_expectation_matches_apply(seed):
    rng = np.random.default_rng(seed)
    psi, op = random_mps(7, 4, rng), random_mpo(7, 3, rng)
    ref = inner(psi, mpo_apply(op, psi))
    assert abs(expectation(psi, op) - ref) <= 1e-12 * max(1, abs(ref))


def test_mpo_algebra_dense(rng):
    a, b = random_mpo(4, 2, rng), random_mpo(4, 3, rng)
    da, db = mpo_to_dense(a), mpo_to_dense(b)
    assert rel_err(mpo_to_dense(mpo_add(a, b, 2, -1j)), 2 * da - 1j * db) <= 1e-12
    assert rel_err(mpo_to_dense(mpo_mul(a, b)), da @ db) <= 1e-12
    assert rel_err(mpo_to_dense(mpo_dagger(a)), da.conj().T) <= 1e-12
    assert rel_err(mpo_to_dense(mpo_stack(a, b)), np.kron(da, db)) <= 1e-12
    assert np.linalg.norm(mpo_to_dense(mpo_add(identity_mpo(4), identity_mpo(4), 1, -1))) <= 1e-12


def test_mpo_mul_position_squared():
    grid = QuadratureGrid(-3.0, 5.0, 6)
    X = position_mpo(grid)
    np.testing.assert_allclose(mpo_to_dense(mpo_mul(X, X)), np.diag(grid.points**2), atol=1e-12)


@pytest.mark.parametrize("a, b", [(-24.0, 24.0), (-7.0, 10.0), (-3.0, 5.0)])
def test_mpo_diagonal_is_bitwise_dense_diagonal(a, b, rng):
    X = position_mpo(QuadratureGrid(a, b, 7))
    np.testing.assert_array_equal(mpo_diagonal(X), np.diag(mpo_to_dense(X)))
    W = random_mpo(6, 3, rng)
    np.testing.assert_array_equal(mpo_diagonal(W), np.diag(mpo_to_dense(W)))


def test_mpo_truncate_rounds_redundant_bonds(rng):
    a = random_mpo(5, 2, rng)
    doubled = mpo_add(a, a)
    rounded = mpo_truncate(doubled, TruncationPolicy(sv_cutoff=1e-12))
    assert rounded.max_bond <= a.max_bond * 2 and rounded.max_bond <= 4
    assert rel_err(mpo_to_dense(rounded), 2 * mpo_to_dense(a)) <= 1e-12


def test_compression_counts():
    psi = product(*([[1, 0]] * 25))
    count, ratio, bond = compression_counts(psi)
    assert count == 50 and bond == 1
    assert ratio == 50 / 2**25


def test_mpo_rejects_bad_legs():
    with pytest.raises(ValueError):
        Mpo([np.ones((1, 2, 3, 1))])
