"""Wire formats: matrix CSV/JSON, trajectory CSV, certificate JSON, scan CSV.

Artifacts are deterministic: floats are written with 17 significant digits,
JSON keys are sorted, nothing embeds timestamps or machine state, so a rerun
of the same deck and seeds is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from sowinfree.analysis import Certificate
from sowinfree.dynamics import TrajectoryRecord
from sowinfree.equilibria import ScanResult


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([_fmt(v) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            rows.append([float(v) for v in row])
    m = np.array(rows, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got shape {m.shape}")
    return m


def matrix_to_json(m: np.ndarray) -> dict:
    """Row-major flat encoding {dim, entries}."""
    m = np.asarray(m, dtype=float)
    return {"dim": int(m.shape[0]), "entries": [float(v) for v in m.ravel(order="C")]}


def matrix_from_json(obj: dict) -> np.ndarray:
    dim = int(obj["dim"])
    entries = np.asarray(obj["entries"], dtype=float)
    if entries.size != dim * dim:
        raise ValueError(f"entry count {entries.size} does not match dim {dim}")
    return entries.reshape(dim, dim)


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_certificate(path, cert: Certificate) -> None:
    write_json(path, cert.to_dict())


def write_trajectory_csv(path, record: TrajectoryRecord) -> None:
    """Long-format rows (t, i, dist, trace_gap, mean_influence)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "dist", "trace_gap", "mean_influence"])
        for k, t in enumerate(record.times):
            for i in range(record.count):
                w.writerow([_fmt(t), i, _fmt(record.distances[k, i]),
                            _fmt(record.trace_gaps[k, i]),
                            _fmt(record.mean_influence[k])])


def write_scan_csv(path, scan: ScanResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "f", "defect"])
        for x, f, d in zip(scan.xs, scan.values, scan.defects):
            w.writerow([_fmt(x), _fmt(f), _fmt(d)])


def write_columns_csv(path, header: list, columns: list) -> None:
    """Write same-length numeric columns under the given header."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def write_rows_csv(path, header: list, rows: list) -> None:
    """Write dict rows under a fixed header; floats get the 17-digit format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v
                        for v in (row.get(k, "") for k in header)])


def config_hash(mapping: dict) -> str:
    """Stable digest of a deck mapping (plus whatever the caller mixes in)."""
    blob = json.dumps(mapping, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
