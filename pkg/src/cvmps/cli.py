"""Command-line entry point.

    python3 -m cvmps run <config> [--stop-after N]
    python3 -m cvmps report <csv> [<csv> ...]
    python3 -m cvmps validate <config>
    python3 -m cvmps preset <alpha10|alpha100|desk>

Exit codes: 0 success, 1 solver breakdown or failed validation, 2 bad
configuration or an unusable output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
from filelock import FileLock, Timeout

from . import __version__
from .config import ConfigError, SimConfig, config_hash, parse_config, preset
from .grids import initial_system_state
from .io import (
    CheckpointError,
    append_records,
    load_checkpoint,
    read_records,
    save_checkpoint,
    write_json_atomic,
    write_records,
)
from .observables import make_observer
from .operators import system_operators
from .oracles import FockStepper, dense_grid_evolve
from .qtt import TruncationPolicy
from .solver import EvolutionConfig, SolverBreakdown, SolverConfig, evolve

log = logging.getLogger("cvmps")

EXIT_OK = 0
EXIT_BREAKDOWN = 1
EXIT_CONFIG = 2
OUTPUT_ROOT_ENV = "CVMPS_OUTPUT_ROOT"

TRAJECTORY = "trajectory.csv"
CHECKPOINT = "checkpoint.qtts"
MANIFEST = "manifest.json"
ORACLE_FILES = {"oracle-grid": "oracle_grid.csv", "oracle-fock": "oracle_fock.csv"}


class _Interrupted(Exception):
    """Raised by ``--stop-after`` to imitate a run killed mid-way."""


def output_dir(cfg: SimConfig) -> Path:
    """``cfg.output_dir``, resolved against $CVMPS_OUTPUT_ROOT when it is set."""
    path = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _versions() -> dict:
    return {
        "cvmps": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _solver_configs(cfg: SimConfig):
    policy = TruncationPolicy(chi_max=cfg.chi_max, sv_cutoff=cfg.sv_cutoff)
    scfg = SolverConfig(
        max_sweeps=cfg.max_sweeps, rel_residual_tol=cfg.residual_tol, truncation=policy, n_ref_bits=cfg.n_ref_bits
    )
    ecfg = EvolutionConfig(cfg.delta_tau, cfg.n_steps, cfg.renormalize, cfg.observe_every)
    return policy, scfg, ecfg


def _run_mps(cfg: SimConfig, out: Path, stop_after: int | None, manifest: dict) -> int:
    layout = cfg.layout
    policy, scfg, ecfg = _solver_configs(cfg)
    chash = config_hash(cfg)
    csv_path, ckpt_path = out / TRAJECTORY, out / CHECKPOINT

    start_step = 0
    if ckpt_path.exists():
        try:
            psi, start_step, stored = load_checkpoint(ckpt_path)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if stored != chash:
            print(f"error: {ckpt_path} was written for a different configuration; refusing to resume", file=sys.stderr)
            return EXIT_CONFIG
        if psi.n_sites != layout.n_total:
            print(f"error: checkpoint has {psi.n_sites} sites, config needs {layout.n_total}", file=sys.stderr)
            return EXIT_CONFIG
        kept = [r for r in read_records(csv_path) if r.step <= start_step] if csv_path.exists() else []
        write_records(csv_path, kept)
        manifest["resumed_from_step"] = start_step
        print(f"resuming from step {start_step}")
    else:
        psi = initial_system_state(layout, cfg.alpha, policy)
        write_records(csv_path, [])

    if start_step >= cfg.n_steps:
        manifest["steps_completed"] = start_step
        return EXIT_OK

    ops = system_operators(layout, cfg.delta_tau)
    base = make_observer(layout, cfg.n_ref_bits)
    last = {"step": start_step, "psi": psi}

    def observer(step, tau, state, report):
        rec = base(step, tau, state, report)
        append_records(csv_path, [rec])
        return rec

    def on_step(step, state, report):
        last["step"], last["psi"] = step, state
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_path, state, step, chash)
        if stop_after is not None and step >= stop_after:
            raise _Interrupted(step)

    try:
        evolve(psi, ops.U, ecfg, scfg, observer=observer, start_step=start_step, on_step=on_step)
    except _Interrupted:
        manifest["status"] = "interrupted"
        manifest["steps_completed"] = last["step"]
        print(f"stopped after step {last['step']}; re-run the same command to resume")
        return EXIT_OK
    except SolverBreakdown as exc:
        save_checkpoint(ckpt_path, last["psi"], last["step"], chash)
        manifest["status"] = "solver-breakdown"
        manifest["error"] = str(exc)
        manifest["steps_completed"] = last["step"]
        print(f"solver breakdown after step {last['step']}: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    save_checkpoint(ckpt_path, last["psi"], last["step"], chash)
    manifest["steps_completed"] = last["step"]
    return EXIT_OK


def _run_oracle_grid(cfg: SimConfig, out: Path, manifest: dict) -> int:
    _, _, ecfg = _solver_configs(cfg)
    records = dense_grid_evolve(cfg.layout, cfg.alpha, ecfg)
    write_records(out / ORACLE_FILES["oracle-grid"], records)
    manifest["steps_completed"] = cfg.n_steps
    return EXIT_OK


def _run_oracle_fock(cfg: SimConfig, out: Path, manifest: dict) -> int:
    stepper = FockStepper(cfg.alpha, (cfg.fock_cutoff_pump, cfg.fock_cutoff_signal), cfg.delta_tau, cfg.renormalize)
    records = [stepper.record()]
    top = stepper.top_occupation()
    for step in range(1, cfg.n_steps + 1):
        stepper.step()
        if step % cfg.observe_every == 0 or step == cfg.n_steps:
            records.append(stepper.record())
            top = max(top, stepper.top_occupation())
    write_records(out / ORACLE_FILES["oracle-fock"], records)
    manifest["steps_completed"] = cfg.n_steps
    manifest["fock_top_occupation"] = top
    return EXIT_OK


def _run_validate(cfg: SimConfig, manifest: dict) -> int:
    from .validation import desk_validation

    result = desk_validation(cfg)
    for line in result.lines():
        print(line)
    manifest["validation"] = {"A3": result.a3_passed, "A4": result.a4_passed, "lines": result.lines()}
    manifest["steps_completed"] = cfg.n_steps
    return EXIT_OK if (result.a3_passed and result.a4_passed) else EXIT_BREAKDOWN


def run(cfg: SimConfig, stop_after: int | None = None, mode: str | None = None) -> int:
    """Execute ``cfg`` (in ``mode``, default ``cfg.mode``) under a lock on its
    output directory; always leaves a manifest behind."""
    mode = mode or cfg.mode
    out = output_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        print(f"error: another process is writing to {out}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        started = time.perf_counter()
        manifest = {
            "config": cfg.to_text(),
            "config_hash": config_hash(cfg).hex(),
            "mode": mode,
            "versions": _versions(),
            "started_utc": datetime.now(timezone.utc).isoformat(),
            "status": "running",
        }
        write_json_atomic(out / MANIFEST, manifest)
        if mode == "run":
            code = _run_mps(cfg, out, stop_after, manifest)
        elif mode == "oracle-grid":
            code = _run_oracle_grid(cfg, out, manifest)
        elif mode == "oracle-fock":
            code = _run_oracle_fock(cfg, out, manifest)
        else:
            code = _run_validate(cfg, manifest)
        if manifest["status"] == "running":
            manifest["status"] = "complete" if code == EXIT_OK else "failed"
        manifest["wall_clock_seconds"] = time.perf_counter() - started
        manifest["finished_utc"] = datetime.now(timezone.utc).isoformat()
        write_json_atomic(out / MANIFEST, manifest)
        return code
    finally:
        lock.release()


# ---------------------------------------------------------------------------
# report


def _fmt(value, spec=".6g"):
    return "n/a" if value is None else format(value, spec)


def summarize(records) -> dict:
    """The headline numbers of one trajectory; bond fields of oracle runs
    (negative sentinels) come out as None."""
    if not records:
        raise ValueError("trajectory has no rows")
    e0 = records[0].energy
    np0 = records[0].n_pump
    drift = max(abs(r.energy - e0) for r in records)
    depletion = max(1.0 - r.n_pump / np0 for r in records) if np0 > 0 else 0.0
    low = min(records, key=lambda r: r.var_x_signal)
    bonds = [r.max_bond for r in records if r.max_bond >= 0]
    comp = [r.inverse_compression for r in records if r.inverse_compression >= 0]
    resid = [r.residual_normalized for r in records[1:]]
    return {
        "max_energy_drift": drift / abs(e0) if e0 else drift,
        "max_pump_depletion": depletion,
        "min_var_x_signal": low.var_x_signal,
        "tau_at_min_var": low.tau,
        "peak_max_bond": max(bonds) if bonds else None,
        "min_inverse_compression": min(comp) if comp else None,
        "max_residual_normalized": max(resid) if resid else 0.0,
    }


def report_text(paths) -> str:
    blocks = []
    for path in paths:
        s = summarize(read_records(path))
        blocks.append(
            "\n".join(
                [
                    f"{path}",
                    f"  max energy drift (relative)   {_fmt(s['max_energy_drift'], '.3e')}",
                    f"  max pump depletion            {_fmt(s['max_pump_depletion'], '.4f')}",
                    f"  min var_x_signal              {_fmt(s['min_var_x_signal'], '.6f')} at tau = {_fmt(s['tau_at_min_var'])}",
                    f"  peak max_bond                 {_fmt(s['peak_max_bond'], 'd')}",
                    f"  min inverse compression       {_fmt(s['min_inverse_compression'], '.3e')}",
                    f"  max normalized residual       {_fmt(s['max_residual_normalized'], '.3e')}",
                ]
            )
        )
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# argument handling


def _load(path) -> SimConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvmps", description="QTT/MPS simulation of degenerate down-conversion")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configuration (mode taken from the file)")
    p_run.add_argument("config")
    p_run.add_argument("--stop-after", type=int, default=None, metavar="N", help="stop after step N (resumable)")
    p_rep = sub.add_parser("report", help="summarize trajectory CSV files")
    p_rep.add_argument("csv", nargs="+")
    p_val = sub.add_parser("validate", help="run the desk-scale oracle comparison for a configuration")
    p_val.add_argument("config")
    p_pre = sub.add_parser("preset", help="print a built-in configuration")
    p_pre.add_argument("name")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "preset":
            sys.stdout.write(preset(args.name).to_text())
            return EXIT_OK
        if args.command == "report":
            try:
                print(report_text(args.csv))
            except (OSError, ValueError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            return EXIT_OK
        cfg = _load(args.config)
        if args.command == "validate":
            return run(cfg, mode="validate")
        if args.stop_after is not None and args.stop_after < 1:
            raise ConfigError("--stop-after must be >= 1")
        return run(cfg, stop_after=args.stop_after)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
