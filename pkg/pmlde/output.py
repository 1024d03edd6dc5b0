"""Run output: field snapshots, energy and layout CSV, checkpoints.

Snapshot block layout (little-endian)::

    magic "WSC1" | version u32 | nx u32 | ny u32 | hx f64 | hy f64 |
    x0 f64 | y0 f64 | t f64 | n i64 | field id 16 bytes | nx*ny f64 (row-major)

``nx`` and ``ny`` are the array dimensions; ``hx``, ``hy`` and the origin are
those of the grid the array lives on.
"""

import csv
import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import config
from .exceptions import CheckpointError, OutputError, SnapshotFormatError
from .grid import EdgeField, StaggeredGrid

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIIIdddddq16s")
LAYOUT_COLUMNS = ("step", "level", "i0", "j0", "i1", "j1")
MANIFEST_NAME = "manifest.json"
BLOCKS_NAME = "blocks.wsc"


@dataclass
class Snapshot:
    """One decoded snapshot block."""

    values: np.ndarray
    hx: float
    hy: float
    x0: float
    y0: float
    t: float
    n: int
    field: str
    version: int = config.FORMAT_VERSION


# ── Snapshot blocks ──────────────────────────────────────────


def encode_snapshot(values, grid, t, n, field):
    """Header plus payload bytes of one block."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("snapshot values must be two-dimensional")
    name = field.encode("ascii")
    if len(name) > 16:
        raise ValueError(f"field id '{field}' is longer than 16 bytes")
    header = HEADER.pack(
        config.SNAPSHOT_MAGIC,
        config.FORMAT_VERSION,
        values.shape[0],
        values.shape[1],
        grid.hx,
        grid.hy,
        grid.x0,
        grid.y0,
        float(t),
        int(n),
        name,
    )
    return header + values.tobytes(order="C")


def decode_snapshot(data, offset=0, path=None):
    """Decode the block starting at ``offset``; returns ``(snapshot, next_offset)``."""
    if len(data) - offset < HEADER.size:
        raise SnapshotFormatError("truncated snapshot header", path)
    magic, version, nx, ny, hx, hy, x0, y0, t, n, name = HEADER.unpack_from(data, offset)
    if magic != config.SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}", path)
    if version != config.FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}", path)
    start = offset + HEADER.size
    end = start + nx * ny * 8
    if len(data) < end:
        raise SnapshotFormatError("truncated snapshot payload", path)
    values = np.frombuffer(data, dtype="<f8", count=nx * ny, offset=start).reshape(nx, ny).astype(float)
    field = name.rstrip(b"\0").decode("ascii")
    return Snapshot(values, hx, hy, x0, y0, t, n, field, version), end


def write_snapshot(path, values, grid, t, n, field="p"):
    """Write one field as a single snapshot file."""
    try:
        with open(path, "wb") as fh:
            fh.write(encode_snapshot(values, grid, t, n, field))
    except OSError as exc:
        raise OutputError(f"cannot write snapshot: {exc.strerror}", path) from exc
    logger.debug("wrote snapshot %s (n=%d, t=%g)", path, n, t)


def read_snapshot(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot: {exc.strerror}", path) from exc
    snapshot, end = decode_snapshot(data, 0, path)
    if end != len(data):
        raise SnapshotFormatError("trailing bytes after snapshot block", path)
    return snapshot


# ── CSV ──────────────────────────────────────────────────────


def _append_rows(path, header, rows):
    try:
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot append rows: {exc.strerror}", path) from exc


def write_energy_row(row, path):
    """Append one ledger row, writing the header first for a new file."""
    _append_rows(path, config.ENERGY_COLUMNS, [[_csv_value(v) for v in row.as_csv_row()]])


def write_energy_rows(rows, path):
    _append_rows(path, config.ENERGY_COLUMNS, [[_csv_value(v) for v in row.as_csv_row()] for row in rows])


def read_energy_rows(path):
    """Energy CSV as a list of dicts with numeric values."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            return [
                {k: (int(v) if k in ("n", "solver_iters") else float(v)) for k, v in row.items()}
                for row in reader
            ]
    except OSError as exc:
        raise OutputError(f"cannot read energy file: {exc.strerror}", path) from exc


def write_layout_rows(rows, path):
    """Append ``(step, level, i0, j0, i1, j1)`` patch rows."""
    _append_rows(path, LAYOUT_COLUMNS, rows)


def _csv_value(value):
    # repr round-trips floats exactly
    return repr(value) if isinstance(value, float) else value


# ── Checkpoints ──────────────────────────────────────────────


def grid_signature(grid):
    return {"nx": grid.nx, "ny": grid.ny, "hx": grid.hx, "hy": grid.hy, "x0": grid.x0, "y0": grid.y0}


def write_checkpoint(path, grid, t, n, patches, ledger_tail=(), extra=None):
    """Write a checkpoint directory: one block file plus a JSON manifest.

    ``patches`` is a list of dicts with ``level``, ``box`` and the four state
    arrays (``lam`` entries are EdgeFields). Blocks carry the spacing and
    origin of the record's own ``grid`` when given, else of ``grid``. The
    manifest lists every block segment with its offset, size and SHA-256 digest.
    """
    try:
        os.makedirs(path, exist_ok=True)
        segments = []
        offset = 0
        with open(os.path.join(path, BLOCKS_NAME), "wb") as fh:
            for index, record in enumerate(patches):
                patch_grid = record.get("grid", grid)
                for field, values in _record_arrays(record):
                    block = encode_snapshot(values, patch_grid, t, n, field)
                    fh.write(block)
                    segments.append({
                        "patch": index,
                        "field": field,
                        "offset": offset,
                        "size_bytes": len(block),
                        "sha256": hashlib.sha256(block).hexdigest(),
                    })
                    offset += len(block)
        manifest = {
            "magic": config.CHECKPOINT_MAGIC.decode("ascii"),
            "version": config.FORMAT_VERSION,
            "grid": grid_signature(grid),
            "t": t,
            "n": n,
            "patches": [{"level": r["level"], "box": [int(v) for v in r["box"]]} for r in patches],
            "segments": segments,
            "ledger_tail": [_row_dict(row) for row in ledger_tail],
            "extra": extra or {},
        }
        with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
            json.dump(manifest, fh, indent=1)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint: {exc.strerror}", path) from exc
    logger.info("checkpoint written to %s at step %d", path, n)


def read_checkpoint(path, grid=None):
    """Load a checkpoint; returns ``(manifest, patch records)``.

    With ``grid`` the stored base grid must match it exactly.
    """
    try:
        with open(os.path.join(path, MANIFEST_NAME)) as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, BLOCKS_NAME), "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest: {exc}", path) from exc

    if manifest.get("magic") != config.CHECKPOINT_MAGIC.decode("ascii"):
        raise CheckpointError("not a checkpoint manifest", path)
    if manifest.get("version") != config.FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}", path)
    if grid is not None and manifest["grid"] != grid_signature(grid):
        raise CheckpointError(f"checkpoint grid {manifest['grid']} does not match {grid_signature(grid)}", path)

    records = [{"level": p["level"], "box": tuple(p["box"])} for p in manifest["patches"]]
    for segment in manifest["segments"]:
        start = segment["offset"]
        block = data[start:start + segment["size_bytes"]]
        if hashlib.sha256(block).hexdigest() != segment["sha256"]:
            raise CheckpointError(f"corrupt payload in segment {segment['field']}", path)
        snapshot, _ = decode_snapshot(block, 0, path)
        records[segment["patch"]][segment["field"]] = snapshot.values
    for record in records:
        record["lam_prev"] = EdgeField(record.pop("lam_prev.x"), record.pop("lam_prev.y"))
        record["lam"] = EdgeField(record.pop("lam.x"), record.pop("lam.y"))
    logger.info("checkpoint restored from %s at step %d", path, manifest["n"])
    return manifest, records


def manifest_grid(manifest):
    return StaggeredGrid(**manifest["grid"])


def _record_arrays(record):
    yield "p_prev", record["p_prev"]
    yield "p_curr", record["p_curr"]
    for name in ("lam_prev", "lam"):
        yield f"{name}.x", record[name].x
        yield f"{name}.y", record[name].y


def _row_dict(row):
    return {key: value for key, value in vars(row).items()}


# ── Background writer ────────────────────────────────────────


class AsyncWriter:
    """Single background thread for output so stepping does not wait on disk."""

    def __init__(self, enabled=True):
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="pmlde-writer") if enabled else None
        self._pending = []

    def submit(self, func, *args, **kwargs):
        if self._pool is None:
            func(*args, **kwargs)
            return
        self._pending.append(self._pool.submit(func, *args, **kwargs))

    def flush(self):
        """Wait for every queued write; re-raises the first failure."""
        pending, self._pending = self._pending, []
        for future in pending:
            future.result()

    def close(self):
        try:
            self.flush()
        finally:
            if self._pool is not None:
                self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
