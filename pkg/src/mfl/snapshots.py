"""Binary trajectory and grid snapshots, plus result-file helpers.

Trajectory file (``.mfl``), all fields little-endian::

    offset  size  field
    0       4     magic b"MFL1"
    4       4     d      uint32
    8       8     N      uint64
    16      8     dt     float64
    24      8     count  uint64
    32      ...   count frames, each 2*N*d float64: positions (N x d, row-major)
                  then velocities (N x d, row-major)

Grid file (``.mflg``): one line of UTF-8 JSON terminated by ``\\n``, then
nx*nv little-endian float64 values, row-major with x outer and v inner.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .particles import ParticleState, TrajectoryWindow
from .vlasov import PhaseGrid

MAGIC = b"MFL1"
_HEADER = struct.Struct("<4sIQdQ")
GRID_FORMAT = "MFL-GRID1"


class SnapshotFormatError(ValueError):
    """The file is not a valid snapshot."""


def write_trajectory(path, states, dt: float) -> None:
    states = list(states)
    if not states:
        raise ValueError("no states to write")
    n, d = states[0].n, states[0].dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, n, float(dt), len(states)))
        for s in states:
            if (s.n, s.dim) != (n, d):
                raise ValueError("all frames must share N and d")
            fh.write(np.ascontiguousarray(s.positions, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.velocities, dtype="<f8").tobytes())


def read_trajectory(path) -> TrajectoryWindow:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(f"{path}: too short for a trajectory header")
    magic, d, n, dt, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    frame = 2 * n * d
    if len(raw) != _HEADER.size + 8 * frame * count:
        raise SnapshotFormatError(f"{path}: size does not match header (N={n}, d={d}, count={count})")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, 2, n, d)
    states = [ParticleState(data[k, 0], data[k, 1], k * dt) for k in range(count)]
    return TrajectoryWindow(states, dt if dt > 0 else 1.0)


def read_points(path) -> np.ndarray:
    """Last frame of a trajectory file as an (N, 2d) phase-space cloud."""
    return read_trajectory(path).states[-1].phase


def write_grid(path, grid: PhaseGrid) -> None:
    head = {
        "format": GRID_FORMAT,
        "nx": int(len(grid.x_nodes)), "nv": int(len(grid.v_nodes)),
        "x_min": float(grid.x_nodes[0]), "x_max": float(grid.x_nodes[-1]),
        "v_min": float(grid.v_nodes[0]), "v_max": float(grid.v_nodes[-1]),
        "time": float(grid.time), "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_grid(path) -> PhaseGrid:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    try:
        head = json.loads(raw[:cut])
    except (ValueError, UnicodeDecodeError) as exc:
        raise SnapshotFormatError(f"{path}: unreadable grid header") from exc
    if cut < 0 or head.get("format") != GRID_FORMAT:
        raise SnapshotFormatError(f"{path}: not a {GRID_FORMAT} file")
    nx, nv = head["nx"], head["nv"]
    body = raw[cut + 1:]
    if len(body) != 8 * nx * nv:
        raise SnapshotFormatError(f"{path}: payload size does not match nx*nv")
    vals = np.frombuffer(body, dtype="<f8").reshape(nx, nv).copy()
    x = np.linspace(head["x_min"], head["x_max"], nx)
    v = np.linspace(head["v_min"], head["v_max"], nv)
    return PhaseGrid(x, v, vals, head["time"])


# ---------------------------------------------------------------------------
# result artifacts

CSV_COLUMNS = ("study", "N", "replica", "t", "metric", "value")


def write_csv(path, rows) -> None:
    """Long-format results with a header row; floats in repr precision."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                    for x in (row[c] for c in CSV_COLUMNS)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, manifest: dict, files) -> Path:
    """Attach digests of ``files`` and write manifest.json atomically (rename)."""
    out_dir = Path(out_dir)
    manifest = dict(manifest)
    manifest["files"] = {Path(f).name: sha256_file(f) for f in files}
    tmp = out_dir / ".manifest.json.tmp"
    write_json(tmp, manifest)
    final = out_dir / "manifest.json"
    os.replace(tmp, final)
    return final
