"""Trajectory CSV, binary checkpoints and the run manifest."""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .observables import TrajectoryRecord
from .qtt import Mps

__all__ = [
    "CheckpointError",
    "append_records",
    "format_value",
    "load_checkpoint",
    "read_records",
    "save_checkpoint",
    "write_json_atomic",
    "write_records",
]

MAGIC = b"QTTS"
FORMAT_VERSION = 1
# magic, version, site count, config hash, step
_HEADER = struct.Struct("<4sII32sQ")
_DIMS = struct.Struct("<III")
_INT_FIELDS = {"step", "max_bond", "param_count"}


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CSV


def format_value(value) -> str:
    """Integers as-is; floats as the shortest decimal that round-trips."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def _row(record: TrajectoryRecord):
    return [format_value(getattr(record, name)) for name in TrajectoryRecord.columns()]


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TrajectoryRecord.columns())
        for rec in records:
            writer.writerow(_row(rec))


def append_records(path, records) -> None:
    """Append rows, writing the header first if the file is new."""
    new = not Path(path).exists() or Path(path).stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(TrajectoryRecord.columns())
        for rec in records:
            writer.writerow(_row(rec))
        fh.flush()


def read_records(path) -> list[TrajectoryRecord]:
    """Parse a trajectory CSV; raises ValueError on a malformed file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header != TrajectoryRecord.columns():
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = {k: (int(v) if k in _INT_FIELDS else float(v)) for k, v in zip(header, row)}
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            out.append(TrajectoryRecord(**values))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, psi: Mps, step: int, config_hash: bytes) -> None:
    """Write ``psi`` bit-exactly; the file is replaced atomically."""
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, psi.n_sites, config_hash, step))
        for A in psi.sites:
            fh.write(_DIMS.pack(*A.shape))
            fh.write(np.ascontiguousarray(A, dtype="<c16").tobytes(order="C"))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[Mps, int, bytes]:
    """Return ``(psi, step, config_hash)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, n_sites, chash, step = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = _HEADER.size
    sites = []
    for _ in range(n_sites):
        if offset + _DIMS.size > len(data):
            raise CheckpointError(f"{path}: truncated site header")
        dims = _DIMS.unpack_from(data, offset)
        offset += _DIMS.size
        count = dims[0] * dims[1] * dims[2]
        nbytes = 16 * count
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated site data")
        arr = np.frombuffer(data, dtype="<c16", count=count, offset=offset).reshape(dims)
        sites.append(arr.astype(np.complex128))
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        psi = Mps(sites)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return psi, int(step), chash


def write_json_atomic(path, payload: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
