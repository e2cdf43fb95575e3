"""Desk-scale validation: one MPS run checked step by step against the
dense-grid oracle (state overlap, photon numbers) and the Fock-basis oracle
(reduced-density fidelities)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .grids import initial_system_state
from .observables import TrajectoryRecord, fidelity, make_observer, reduced_density_fock
from .operators import system_operators
from .oracles import DenseGridStepper, FockStepper, compare_trajectories
from .qtt import TruncationPolicy, mps_to_dense
from .solver import EvolutionConfig, SolverConfig, evolve

__all__ = ["DeskValidation", "desk_validation", "OVERLAP_MIN", "PHOTON_TOL", "FIDELITY_MIN"]

OVERLAP_MIN = 0.999
PHOTON_TOL = 1e-3
FIDELITY_MIN = 0.99


@dataclass
class DeskValidation:
    min_overlap: float = 1.0
    max_dn_pump: float = 0.0
    max_dn_signal: float = 0.0
    min_fidelity_pump: float = 1.0
    min_fidelity_signal: float = 1.0
    seconds: float = 0.0
    records: list[TrajectoryRecord] = field(default_factory=list)
    grid_records: list[TrajectoryRecord] = field(default_factory=list)
    fock_records: list[TrajectoryRecord] = field(default_factory=list)

    @property
    def a3_passed(self) -> bool:
        return self.min_overlap >= OVERLAP_MIN and max(self.max_dn_pump, self.max_dn_signal) <= PHOTON_TOL

    @property
    def a4_passed(self) -> bool:
        return min(self.min_fidelity_pump, self.min_fidelity_signal) >= FIDELITY_MIN

    def lines(self) -> list[str]:
        a3 = "PASS" if self.a3_passed else "FAIL"
        a4 = "PASS" if self.a4_passed else "FAIL"
        return [
            f"A3 {a3}: min overlap {self.min_overlap:.9f} (>= {OVERLAP_MIN}), "
            f"max |dn_p| {self.max_dn_pump:.2e}, max |dn_s| {self.max_dn_signal:.2e} (<= {PHOTON_TOL:g})",
            f"A4 {a4}: min fidelity pump {self.min_fidelity_pump:.6f}, signal {self.min_fidelity_signal:.6f} "
            f"(>= {FIDELITY_MIN})",
            f"wall-clock {self.seconds:.1f} s",
        ]


def desk_validation(cfg: SimConfig, progress=None) -> DeskValidation:
    """Evolve ``cfg`` with the MPS solver while stepping both oracles in lockstep.

    The overlap is checked after every step; photon numbers and fidelities at
    every recorded step (``cfg.observe_every``).
    """
    layout = cfg.layout
    t0 = time.perf_counter()
    policy = TruncationPolicy(chi_max=cfg.chi_max, sv_cutoff=cfg.sv_cutoff)
    ops = system_operators(layout, cfg.delta_tau)
    grid = DenseGridStepper(layout, cfg.alpha, cfg.delta_tau, cfg.renormalize)
    fock = FockStepper(cfg.alpha, (cfg.fock_cutoff_pump, cfg.fock_cutoff_signal), cfg.delta_tau, cfg.renormalize)
    result = DeskValidation()
    overlaps = {}

    def on_step(step, psi, report):
        grid.step()
        fock.step()
        v = mps_to_dense(psi)
        overlaps[step] = abs(np.vdot(grid.psi, v)) / (np.linalg.norm(v) * np.linalg.norm(grid.psi))
        result.min_overlap = min(result.min_overlap, overlaps[step])

    base = make_observer(layout, cfg.n_ref_bits)

    def observer(step, tau, psi, report):
        rec = base(step, tau, psi, report)
        result.grid_records.append(grid.record(cfg.n_ref_bits))
        result.fock_records.append(fock.record())
        rho_p, rho_s = fock.reduced()
        f_p = fidelity(reduced_density_fock(psi, layout, "pump", cfg.fock_cutoff_pump), rho_p)
        f_s = fidelity(reduced_density_fock(psi, layout, "signal", cfg.fock_cutoff_signal), rho_s)
        result.min_fidelity_pump = min(result.min_fidelity_pump, f_p)
        result.min_fidelity_signal = min(result.min_fidelity_signal, f_s)
        if progress is not None:
            progress(rec, f_p, f_s)
        return rec

    psi0 = initial_system_state(layout, cfg.alpha, policy)
    overlaps[0] = abs(np.vdot(grid.psi, mps_to_dense(psi0)))
    result.min_overlap = overlaps[0]
    ecfg = EvolutionConfig(cfg.delta_tau, cfg.n_steps, cfg.renormalize, cfg.observe_every)
    scfg = SolverConfig(
        max_sweeps=cfg.max_sweeps, rel_residual_tol=cfg.residual_tol, truncation=policy, n_ref_bits=cfg.n_ref_bits
    )
    result.records = evolve(psi0, ops.U, ecfg, scfg, observer=observer, on_step=on_step)
    cmp = compare_trajectories(
        result.records,
        result.grid_records,
        {"n_pump": PHOTON_TOL, "n_signal": PHOTON_TOL, "overlap": OVERLAP_MIN},
        overlap=lambda step: overlaps[step],
    )
    result.max_dn_pump = cmp.max_abs["n_pump"]
    result.max_dn_signal = cmp.max_abs["n_signal"]
    result.seconds = time.perf_counter() - t0
    return result
