"""CSV readers and writers for tabulated pcfs and covariate geometry."""
import csv
import math
import os

import numpy as np

from ..errors import InvalidArgumentError
from .intensity import DistanceField, RasterField
from .pcf import EmpiricalPCF


def write_pcf(model, path):
    with open(path, "w", newline="") as fh:
        fh.write("r,g\n")
        for r, g in zip(model.r.tolist(), model.g.tolist()):
            fh.write(f"{r!r},{g!r}\n")


def _read_rows(path, expected):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header != expected:
            raise InvalidArgumentError(f"{path}: expected header {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise InvalidArgumentError(f"{path}: line {lineno}: malformed row {row!r}") from None
            if len(vals) != len(expected) or not all(math.isfinite(v) for v in vals):
                raise InvalidArgumentError(f"{path}: line {lineno}: bad row {row!r}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(expected)), header


def read_pcf(path):
    rows, _ = _read_rows(path, ["r", "g"])
    return EmpiricalPCF(rows[:, 0], rows[:, 1])


def _sniff(path):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"file not found: {path}")
    with open(path, newline="") as fh:
        return [h.strip().lower() for h in next(csv.reader(fh), [])]


def read_covariate(path, name=None):
    """Covariate field from CSV, dispatched on the header.

    ``x,y`` → distance to points; ``id,x,y`` → distance to polylines (vertex
    order within each id); ``x,y,value`` → bilinear raster.
    """
    header = _sniff(path)
    name = name or os.path.splitext(os.path.basename(path))[0]
    if header == ["x", "y"]:
        rows, _ = _read_rows(path, header)
        if not len(rows):
            raise InvalidArgumentError(f"{path}: no points")
        return DistanceField(rows, name)
    if header == ["id", "x", "y"]:
        rows, _ = _read_rows(path, header)
        if not len(rows):
            raise InvalidArgumentError(f"{path}: no polyline vertices")
        lines = []
        ids = rows[:, 0]
        for k in dict.fromkeys(ids.tolist()):
            lines.append(rows[ids == k, 1:])
        return DistanceField(lines, name)
    if header == ["x", "y", "value"]:
        rows, _ = _read_rows(path, header)
        return RasterField.from_points(rows, name)
    raise InvalidArgumentError(f"{path}: unrecognized covariate header {','.join(header)}")


def read_points(path):
    """(n, 2) array from an ``x,y`` CSV."""
    rows, _ = _read_rows(path, ["x", "y"])
    return rows


def write_polylines(lines, path):
    with open(path, "w", newline="") as fh:
        fh.write("id,x,y\n")
        for k, line in enumerate(lines, start=1):
            for x, y in np.asarray(line, dtype=float).tolist():
                fh.write(f"{k},{x!r},{y!r}\n")


def write_points(points, path):
    with open(path, "w", newline="") as fh:
        fh.write("x,y\n")
        for x, y in np.asarray(points, dtype=float).reshape(-1, 2).tolist():
            fh.write(f"{x!r},{y!r}\n")
