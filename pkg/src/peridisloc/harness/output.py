"""Field, probe and table writers (CSV with round-trip decimals, legacy VTK)."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

FIELD_COLUMNS = ("id", "x", "y", "z", "ux", "uy", "uz",
                 "sxx", "syy", "szz", "sxy", "sxz", "syz", "theta")


@dataclass
class FieldOutput:
    """Interior-node fields: ids, reference positions, u, virial stress, dilatation."""

    ids: np.ndarray
    positions: np.ndarray
    displacement: np.ndarray
    stress: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        for name, width in (("positions", 3), ("displacement", 3), ("stress", 6)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n, width):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, width)}")
            setattr(self, name, arr)
        self.theta = np.asarray(self.theta, dtype=float).reshape(n)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.ids)

    def table(self) -> np.ndarray:
        return np.column_stack([self.positions, self.displacement, self.stress, self.theta])

    def subset(self, index) -> "FieldOutput":
        return FieldOutput(self.ids[index], self.positions[index], self.displacement[index],
                           self.stress[index], self.theta[index])


def ensure_writable(directory) -> Path:
    """Create ``directory`` if needed and check that files can be written in it."""
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def _fmt(x: float) -> str:
    # shortest decimal that round-trips to the same double
    return repr(float(x))


def write_fields_csv(fields: FieldOutput, path) -> Path:
    path = Path(path)
    data = fields.table().tolist()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(FIELD_COLUMNS) + "\n")
        for i, row in zip(fields.ids.tolist(), data):
            fh.write(str(i) + "," + ",".join(map(_fmt, row)) + "\n")
    return path


def read_fields_csv(path) -> FieldOutput:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:len(FIELD_COLUMNS)]) != FIELD_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    vals = np.array([[float(v) for v in r[1:len(FIELD_COLUMNS)]] for r in rows], dtype=float).reshape(-1, 13)
    return FieldOutput(ids, vals[:, 0:3], vals[:, 3:6], vals[:, 6:12], vals[:, 12])


def write_fields_vtk(fields: FieldOutput, path, title="peridisloc fields") -> Path:
    """Legacy ASCII POLYDATA with point vectors ``displacement`` and tensors ``stress``."""
    path = Path(path)
    n = len(fields)
    s = fields.stress
    tensors = np.stack([s[:, 0], s[:, 3], s[:, 4], s[:, 3], s[:, 1], s[:, 5],
                        s[:, 4], s[:, 5], s[:, 2]], axis=1)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, fields.positions, fmt="%.17g")
        fh.write(f"VERTICES {n} {2 * n}\n")
        np.savetxt(fh, np.column_stack([np.ones(n, dtype=np.int64), np.arange(n)]), fmt="%d")
        fh.write(f"POINT_DATA {n}\n")
        fh.write("VECTORS displacement double\n")
        np.savetxt(fh, fields.displacement, fmt="%.17g")
        fh.write("TENSORS stress double\n")
        np.savetxt(fh, tensors, fmt="%.17g")
        fh.write("SCALARS theta double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, fields.theta, fmt="%.17g")
        fh.write("SCALARS id long 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, fields.ids, fmt="%d")
    return path


def write_fields(fields: FieldOutput, directory, formats=("csv",), stem="fields") -> list:
    directory = ensure_writable(directory)
    written = []
    if "csv" in formats:
        written.append(write_fields_csv(fields, directory / f"{stem}.csv"))
    if "vtk" in formats:
        written.append(write_fields_vtk(fields, directory / f"{stem}.vtk"))
    return written


def sample_line(positions, start, end, points=None, spacing=None) -> tuple:
    """Nearest-node samples along a segment.

    Returns ``(index, s)``: node indices (consecutive duplicates removed) and
    the projected distance of each chosen node along the segment.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    if length == 0:
        raise ValueError("probe segment has zero length")
    if points is None:
        if spacing is None:
            raise ValueError("need points or spacing")
        # half-spacing queries so no node is skipped when queries land on cell faces
        points = max(int(math.ceil(2 * length / spacing)) + 1, 2)
    t = np.linspace(0.0, 1.0, points)
    query = start[None] + t[:, None] * (end - start)[None]
    _, idx = cKDTree(positions).query(query)
    keep = np.ones(len(idx), dtype=bool)
    keep[1:] = idx[1:] != idx[:-1]
    idx = idx[keep]
    direction = (end - start) / length
    s = (positions[idx] - start) @ direction
    return idx, s


def write_table(rows, path, columns=None) -> Path:
    """CSV table from a list of dicts with a fixed column order."""
    path = Path(path)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])
    return path


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def read_table(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(data, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
