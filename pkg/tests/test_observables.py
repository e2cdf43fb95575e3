import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mps
from cvmps.grids import (
    ModeLayout,
    QuadratureGrid,
    coherent_state_mps,
    hermite_mode_mps,
    initial_system_state,
)
from cvmps.observables import (
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
from cvmps.operators import ladder_mpos, system_operators
from cvmps.oracles import DenseGridStepper, dense_reduced_density
from cvmps.qtt import Mps, TruncationPolicy, expectation, inner, mps_from_dense, mps_to_dense, stack
from cvmps.solver import EvolutionConfig, SolverConfig, StepReport, evolve

TIGHT = TruncationPolicy(sv_cutoff=1e-12)
TABLE10 = ModeLayout(QuadratureGrid(-24.0, 24.0, 12), QuadratureGrid(-10.0, 10.0, 13))
DESK = ModeLayout(QuadratureGrid(-7.0, 10.0, 8), QuadratureGrid(-8.0, 8.0, 8))


def pure(vec):
    vec = np.asarray(vec, dtype=complex)
    return FockDensityMatrix(len(vec), np.outer(vec, vec.conj()))


def coherent_vector(alpha, cutoff):
    m = np.arange(cutoff)
    logs = np.array([math.lgamma(k + 1) for k in m])
    return np.exp(-abs(alpha) ** 2 / 2 + m * np.log(alpha) - logs / 2)


def random_density(rng, cutoff, rank):
    g = rng.standard_normal((cutoff, rank)) + 1j * rng.standard_normal((cutoff, rank))
    rho = g @ g.conj().T
    return FockDensityMatrix(cutoff, rho / np.trace(rho).real)


# ---------------------------------------------------------------------------
# records


def test_record_columns_in_order():
    assert TrajectoryRecord.columns() == [
        "step",
        "tau",
        "n_pump",
        "n_signal",
        "energy",
        "var_x_signal",
        "max_bond",
        "param_count",
        "inverse_compression",
        "residual_raw",
        "residual_normalized",
        "norm_drift",
    ]


# ---------------------------------------------------------------------------
# photon numbers, energy and quadratures


def test_initial_alpha10_numbers():
    psi = initial_system_state(TABLE10, 10.0, TIGHT)
    assert photon_number(psi, TABLE10, "pump") == pytest.approx(100.0, abs=0.01)
    assert abs(photon_number(psi, TABLE10, "signal")) <= 1e-4
    assert total_energy(psi, TABLE10) == pytest.approx(200.0, abs=0.02)
    mean, _ = quadrature_stats(psi, TABLE10, "pump")
    assert mean == pytest.approx(10.0 * math.sqrt(2), abs=1e-4)


def test_initial_alpha100_numbers():
    layout = ModeLayout(QuadratureGrid(-151.0, 151.0, 15), QuadratureGrid(-10.0, 10.0, 15))
    psi = initial_system_state(layout, 100.0, TIGHT)
    assert photon_number(psi, layout, "pump") == pytest.approx(10000.0, abs=1.0)


def test_vacuum_energy_and_variance():
    psi = initial_system_state(TABLE10, 0.0, TIGHT)
    assert abs(total_energy(psi, TABLE10)) <= 1e-4
    mean, var = quadrature_stats(psi, TABLE10, "signal")
    assert abs(mean) <= 1e-10
    assert var == pytest.approx(0.5, abs=1e-6)


def test_mode_argument_checked():
    psi = initial_system_state(DESK, 1.0, TIGHT)
    with pytest.raises(ValueError):
        photon_number(psi, DESK, "idler")


def test_imaginary_expectation_is_an_error():
    from cvmps.observables import _real_expectation
    from cvmps.qtt import identity_mpo, mpo_scale

    psi = initial_system_state(DESK, 1.0, TIGHT)
    # a global phase on the state is harmless
    phased = Mps([s * (1j if j == 0 else 1) for j, s in enumerate(psi.sites)])
    assert photon_number(phased, DESK, "pump") == pytest.approx(photon_number(psi, DESK, "pump"))
    # an anti-Hermitian operator is caught
    with pytest.raises(AssertionError):
        _real_expectation(psi, mpo_scale(identity_mpo(DESK.n_total), 1j), "iI")


def test_photon_numbers_on_product_state_are_mode_local():
    pump = coherent_state_mps(DESK.pump, 1.5, TIGHT)
    signal = coherent_state_mps(DESK.signal, 0.5, TIGHT)
    psi = stack(pump, signal)
    n_p = expectation(pump, ladder_mpos(DESK.pump).number).real
    n_s = expectation(signal, ladder_mpos(DESK.signal).number).real
    assert photon_number(psi, DESK, "pump") == pytest.approx(n_p, abs=1e-10)
    assert photon_number(psi, DESK, "signal") == pytest.approx(n_s, abs=1e-10)


# ---------------------------------------------------------------------------
# reduced density matrices


def test_vacuum_signal_density():
    rho = reduced_density_fock(initial_system_state(DESK, 1.0, TIGHT), DESK, "signal", 5)
    expected = np.zeros((5, 5))
    expected[0, 0] = 1
    assert np.max(np.abs(rho.entries - expected)) <= 1e-6


def test_coherent_pump_is_poisson():
    rho = reduced_density_fock(initial_system_state(DESK, 2.0, TIGHT), DESK, "pump", 20)
    m = np.arange(20)
    poisson = np.exp(-4.0) * 4.0**m / np.array([math.factorial(k) for k in m])
    assert np.max(np.abs(rho.populations - poisson)) <= 1e-4
    assert rho.hermiticity_error() <= 1e-12
    assert 1 - 1e-3 <= rho.captured_weight <= 1 + 1e-8


def test_product_state_density_is_factor_projection():
    pump = coherent_state_mps(DESK.pump, 1.0, TIGHT)
    signal = mps_from_dense(
        mps_to_dense(hermite_mode_mps(DESK.signal, 0)) + 0.5 * mps_to_dense(hermite_mode_mps(DESK.signal, 2))
    )
    psi = stack(pump, signal)
    c = np.array([inner(hermite_mode_mps(DESK.signal, m), signal) for m in range(8)])
    rho = reduced_density_fock(psi, DESK, "signal", 8)
    scale = inner(pump, pump).real
    assert np.max(np.abs(rho.entries - scale * np.outer(c, c.conj()))) <= 1e-8


def test_density_matches_dense_contraction():
    # 7 bits resolve the oscillator functions up to m = 9
    layout = ModeLayout(QuadratureGrid(-6.0, 8.0, 7), QuadratureGrid(-7.0, 7.0, 7))
    ops = system_operators(layout, 0.02)
    psi0 = initial_system_state(layout, 1.0, TIGHT)
    rec = evolve(psi0, ops.U, EvolutionConfig(0.02, 10), SolverConfig(truncation=TruncationPolicy(chi_max=32)))
    psi = rec[-1][2]
    for mode, cutoff in (("pump", 4), ("signal", 4)):
        a = reduced_density_fock(psi, layout, mode, cutoff).entries
        b = dense_reduced_density(mps_to_dense(psi), layout, mode, cutoff).entries
        # the dense path re-encodes the state without truncation
        np.testing.assert_allclose(a, b, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_density_invariants_on_random_states(seed):
    rng = np.random.default_rng(seed)
    layout = ModeLayout(QuadratureGrid(-7.0, 7.0, 6), QuadratureGrid(-7.0, 7.0, 6))
    psi = random_mps(12, 6, rng)
    for mode in ("pump", "signal"):
        rho = reduced_density_fock(psi, layout, mode, 3)
        assert rho.hermiticity_error() <= 1e-8
        assert np.linalg.eigvalsh(rho.entries).min() >= -1e-8
        assert rho.captured_weight <= 1 + 1e-8


def test_density_requires_resolution():
    with pytest.raises(ValueError):
        reduced_density_fock(initial_system_state(DESK, 1.0), DESK, "signal", 200)


def test_density_shape_checked():
    with pytest.raises(ValueError):
        FockDensityMatrix(3, np.eye(2))


# ---------------------------------------------------------------------------
# fidelity


def test_fidelity_examples():
    rho = pure(coherent_vector(1.0, 20))
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)
    e0, e1 = np.eye(20)[0], np.eye(20)[1]
    assert abs(fidelity(pure(e0), pure(e1))) <= 1e-12
    assert fidelity(pure(e0), rho) == pytest.approx(math.exp(-1), abs=1e-6)
    with pytest.raises(ValueError):
        fidelity(rho, pure(np.eye(5)[0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r1=st.integers(1, 6), r2=st.integers(1, 6))
def test_fidelity_bounds_and_symmetry(seed, r1, r2):
    rng = np.random.default_rng(seed)
    rho, sigma = random_density(rng, 6, r1), random_density(rng, 6, r2)
    f = fidelity(rho, sigma)
    assert -1e-12 <= f <= 1 + 1e-10
    assert f == pytest.approx(fidelity(sigma, rho), abs=1e-10)
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-7)


# ---------------------------------------------------------------------------
# compression and the observer


def test_compression_metrics():
    psi = Mps([np.array([1.0, 0.0]).reshape(1, 2, 1)] * 25)
    assert compression_metrics(psi) == (50, 50 / 2**25, 1)


def test_observer_record():
    psi = initial_system_state(TABLE10, 10.0, TIGHT)
    rep = StepReport(residual_raw=2e-9, norm_before_renorm=1.0 - 1e-7, max_bond=psi.max_bond)
    rec = make_observer(TABLE10)(3, 1.5e-4, psi, rep)
    assert rec.step == 3 and rec.tau == 1.5e-4
    assert rec.energy == pytest.approx(rec.n_signal + 2 * rec.n_pump)
    assert rec.inverse_compression == rec.param_count / 2**25
    assert rec.residual_normalized == rec.residual_raw  # 25 sites: N = 1
    assert rec.norm_drift == pytest.approx(-1e-7)
    assert rec.var_x_signal > 0 and rec.n_signal >= -1e-6


def test_mid_evolution_photons_match_dense_grid(small_layout):
    layout = small_layout
    dtau = 0.02
    ops = system_operators(layout, dtau)
    psi0 = initial_system_state(layout, 1.0, TIGHT)
    grid = DenseGridStepper(layout, 1.0, dtau)
    records = evolve(
        psi0,
        ops.U,
        EvolutionConfig(dtau, 20, observe_every=20),
        SolverConfig(rel_residual_tol=1e-10, truncation=TruncationPolicy(chi_max=32)),
        observer=make_observer(layout),
        on_step=lambda *_: grid.step(),
    )
    ref = grid.record()
    assert records[-1].n_signal == pytest.approx(ref.n_signal, rel=1e-6)
    assert records[-1].n_pump == pytest.approx(ref.n_pump, rel=1e-6)
