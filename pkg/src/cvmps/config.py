"""Run configuration: a small ``key = value`` format with ``[pump]`` and
``[signal]`` grid sections, built-in presets, and a config hash used to
key checkpoints.

Example::

    alpha = 2
    delta_tau = 5e-4
    n_steps = 2000

    [pump]
    x_min = -7
    x_max = 10
    bits = 8

    [signal]
    x_min = -8
    x_max = 8
    bits = 8
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass

from .grids import ModeLayout, QuadratureGrid

__all__ = ["ConfigError", "GridSpec", "SimConfig", "config_hash", "parse_config", "preset", "PRESETS"]

MODES = ("run", "oracle-grid", "oracle-fock", "validate")
MAX_BITS = 30
_TOP = "__top__"


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    bits: int

    def grid(self) -> QuadratureGrid:
        return QuadratureGrid(self.x_min, self.x_max, self.bits)


@dataclass(frozen=True)
class SimConfig:
    alpha: float
    pump: GridSpec
    signal: GridSpec
    delta_tau: float
    n_steps: int
    chi_max: int = 30
    sv_cutoff: float = 1e-10
    max_sweeps: int = 8
    residual_tol: float = 1e-8
    renormalize: bool = True
    observe_every: int = 1
    fock_cutoff_pump: int = 20
    fock_cutoff_signal: int = 30
    n_ref_bits: int = 25
    output_dir: str = "run"
    checkpoint_every: int = 100
    mode: str = "run"

    @property
    def layout(self) -> ModeLayout:
        return ModeLayout(self.pump.grid(), self.signal.grid())

    def replace(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        _validate(cfg)
        return cfg

    def to_text(self) -> str:
        """Serialize in the same format :func:`parse_config` reads."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name in ("pump", "signal"):
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        for name in ("pump", "signal"):
            spec = getattr(self, name)
            lines += ["", f"[{name}]", f"x_min = {_format(spec.x_min)}", f"x_max = {_format(spec.x_max)}", f"bits = {spec.bits}"]
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TOP_KEYS = {f.name: f for f in dataclasses.fields(SimConfig) if f.name not in ("pump", "signal")}
_REQUIRED = ("alpha", "delta_tau", "n_steps")
_GRID_KEYS = ("x_min", "x_max", "bits")


def _convert(key, raw, kind, where):
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot read {key} = {text!r} as {kind.__name__}") from None


def _kind(name):
    t = _TOP_KEYS[name].type
    return {"float": float, "int": int, "bool": bool, "str": str}[t if isinstance(t, str) else t.__name__]


def parse_config(text: str) -> SimConfig:
    """Parse and validate a config document; unknown keys are errors."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str  # keep keys case-sensitive
    try:
        # the implicit top section shifts line numbers by one
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.MissingSectionHeaderError as exc:  # pragma: no cover - header is always present
        raise ConfigError(str(exc)) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] - 1 if exc.errors else "?"
        raise ConfigError(f"line {line}: cannot parse {exc.errors[0][1].strip() if exc.errors else ''}") from None
    except configparser.Error as exc:
        msg = str(exc)
        if getattr(exc, "lineno", None):
            msg = f"line {exc.lineno - 1}: {exc.message if hasattr(exc, 'message') else msg}"
        raise ConfigError(msg) from None

    extra_sections = set(parser.sections()) - {_TOP, "pump", "signal"}
    if extra_sections:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra_sections))}")

    values = {}
    top = parser[_TOP]
    for key, raw in top.items():
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, raw, _kind(key), "config")
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    for name in ("pump", "signal"):
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        section = parser[name]
        unknown = set(section.keys()) - set(_GRID_KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        for key in _GRID_KEYS:
            if key not in section:
                raise ConfigError(f"missing key {name}.{key}")
        values[name] = GridSpec(
            x_min=_convert(f"{name}.x_min", section["x_min"], float, f"[{name}]"),
            x_max=_convert(f"{name}.x_max", section["x_max"], float, f"[{name}]"),
            bits=_convert(f"{name}.bits", section["bits"], int, f"[{name}]"),
        )
    cfg = SimConfig(**values)
    _validate(cfg)
    return cfg


def _check(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def _validate(cfg: SimConfig):
    _check(cfg.alpha >= 0, "alpha", "must be >= 0")
    _check(cfg.delta_tau > 0, "delta_tau", "must be > 0")
    _check(cfg.n_steps >= 1, "n_steps", "must be >= 1")
    _check(cfg.chi_max >= 1, "chi_max", "must be >= 1")
    _check(0.0 <= cfg.sv_cutoff < 1.0, "sv_cutoff", "must lie in [0, 1)")
    _check(cfg.max_sweeps >= 1, "max_sweeps", "must be >= 1")
    _check(cfg.residual_tol > 0, "residual_tol", "must be > 0")
    _check(cfg.observe_every >= 1, "observe_every", "must be >= 1")
    _check(cfg.fock_cutoff_pump >= 1, "fock_cutoff_pump", "must be >= 1")
    _check(cfg.fock_cutoff_signal >= 1, "fock_cutoff_signal", "must be >= 1")
    _check(1 <= cfg.n_ref_bits <= 2 * MAX_BITS, "n_ref_bits", f"must lie in [1, {2 * MAX_BITS}]")
    _check(cfg.checkpoint_every >= 0, "checkpoint_every", "must be >= 0 (0 disables)")
    _check(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")
    _check(bool(cfg.output_dir.strip()), "output_dir", "must not be empty")
    for name in ("pump", "signal"):
        spec = getattr(cfg, name)
        _check(1 <= spec.bits <= MAX_BITS, f"{name}.bits", f"must lie in [1, {MAX_BITS}]")
        _check(spec.x_max > spec.x_min, f"{name}.x_max", "must exceed x_min")


def config_hash(cfg: SimConfig) -> bytes:
    """SHA-256 over everything that changes the computed trajectory.

    ``output_dir``, ``checkpoint_every`` and ``mode`` do not, so a run can be
    moved or re-checkpointed and still resume.
    """
    skip = {"output_dir", "checkpoint_every", "mode"}
    parts = []
    for f in dataclasses.fields(cfg):
        if f.name in skip:
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, GridSpec):
            parts.append(f"{f.name}={value.x_min!r},{value.x_max!r},{value.bits}")
        else:
            parts.append(f"{f.name}={value!r}")
    return hashlib.sha256("\n".join(parts).encode()).digest()


def _alpha10():
    return SimConfig(
        alpha=10.0,
        pump=GridSpec(-24.0, 24.0, 12),
        signal=GridSpec(-10.0, 10.0, 13),
        delta_tau=5e-5,
        n_steps=6000,
        chi_max=30,
        observe_every=20,
        fock_cutoff_pump=160,
        fock_cutoff_signal=320,
        output_dir="alpha10",
        checkpoint_every=200,
    )


def _alpha100():
    return SimConfig(
        alpha=100.0,
        pump=GridSpec(-151.0, 151.0, 15),
        signal=GridSpec(-10.0, 10.0, 15),
        delta_tau=5e-6,
        n_steps=12000,
        chi_max=30,
        observe_every=40,
        fock_cutoff_pump=160,
        fock_cutoff_signal=320,
        output_dir="alpha100",
        checkpoint_every=200,
    )


def _desk():
    # alpha = 2 on 8 + 8 bits; the grids resolve the oscillator functions up
    # to the Fock cutoffs 20 (pump) and 30 (signal)
    return SimConfig(
        alpha=2.0,
        pump=GridSpec(-7.0, 10.0, 8),
        signal=GridSpec(-8.0, 8.0, 8),
        delta_tau=5e-4,
        n_steps=2000,
        chi_max=32,
        sv_cutoff=1e-8,
        residual_tol=1e-6,
        observe_every=20,
        fock_cutoff_pump=20,
        fock_cutoff_signal=30,
        output_dir="desk",
        checkpoint_every=200,
        mode="validate",
    )


PRESETS = {"alpha10": _alpha10, "alpha100": _alpha100, "desk": _desk}


def preset(name: str) -> SimConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
