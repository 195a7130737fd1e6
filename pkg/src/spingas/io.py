"""File formats: trajectory binaries and the CSV exports.

Trajectory binary layout (little-endian):

    8 bytes   magic b"CTCTRAJ1"
    u64       N, number of frequency nodes
    f64       sample_rate, Hz
    u64       record count
    records   contiguous f64: t, mean_px, mean_py, mean_pz, then, when full
              states were recorded, px[0:N], py[0:N], pz[0:N]

Whether full states are present follows from the file size.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .integrate import PoincarePoints, Trajectory

MAGIC = b"CTCTRAJ1"
_HEADER = struct.Struct("<8sQdQ")


def write_trajectory_bin(path, traj: Trajectory, n_nodes: int) -> None:
    n_rec = len(traj)
    cols = [traj.times, traj.mean_px, traj.mean_py, traj.mean_pz]
    data = np.column_stack(cols)
    if traj.full_states is not None:
        data = np.hstack([data, traj.full_states.reshape(n_rec, 3 * n_nodes)])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n_nodes, float(traj.sample_rate), n_rec))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_trajectory_bin(path) -> tuple[Trajectory, int]:
    """Returns (trajectory, N)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n_nodes, rate, n_rec = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if n_rec == 0:
        width = 4
    else:
        width, rem = divmod(body.size, n_rec)
        if rem or width not in (4, 4 + 3 * n_nodes):
            raise ValueError(f"{path}: body size does not match header")
    data = body.reshape(n_rec, width).astype(float)
    full = data[:, 4:].reshape(n_rec, 3, n_nodes).copy() if width > 4 else None
    traj = Trajectory(data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy(),
                      data[:, 3].copy(), rate, full)
    return traj, int(n_nodes)


def _write_rows(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def write_trajectory_csv(path, traj: Trajectory) -> None:
    _write_rows(path, ["t", "mean_px", "mean_py", "mean_pz"],
                [traj.times, traj.mean_px, traj.mean_py, traj.mean_pz])


def write_poincare_csv(path, points: PoincarePoints) -> None:
    _write_rows(path, ["t", "mean_px", "mean_pz"], [points.t, points.mean_px, points.mean_pz])


def write_spectrum_csv(path, spec) -> None:
    _write_rows(path, ["freq_hz", "power", "phase_rad"],
                [spec.freqs, spec.power, np.mod(np.angle(spec.amplitudes), 2 * np.pi)])


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}
