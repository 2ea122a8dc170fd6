"""Consolidate per-timestep subdomain files into single files plus summaries.

Raw campaign layout: <root>/<sim_key>/t<step>/sub<id>.csv or .bin, one
file per subdomain. Consolidation concatenates the subdomains in id
order into one "CONS" file per time step and writes a summary CSV with
each subdomain's bounding box and row range, used later to read only
the subdomains that intersect a remap block.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import blockfile
from .blockfile import BlockHeader
from .errors import DataError, FormatError, ValidationError

SUBD_MAGIC = "SUBD"
CONS_MAGIC = "CONS"

_SUB_RE = re.compile(r"sub(\d+)\.(csv|bin)$")
_STEP_RE = re.compile(r"t(\d+)$")

SUMMARY_FIELDS = ("subdomain_id", "x_min", "x_max", "y_min", "y_max", "start_row", "n_points")


@dataclass(frozen=True)
class SubdomainRecord:
    subdomain_id: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    start_row: int
    n_points: int


@dataclass
class TimestepSummary:
    records: list

    def save(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SUMMARY_FIELDS)
            for r in self.records:
                w.writerow([r.subdomain_id, repr(r.x_min), repr(r.x_max), repr(r.y_min), repr(r.y_max), r.start_row, r.n_points])

    @classmethod
    def load(cls, path):
        records = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if tuple(header) != SUMMARY_FIELDS:
                raise FormatError(f"{path}: unexpected summary columns {header}")
            for row in reader:
                records.append(
                    SubdomainRecord(
                        int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]), int(row[5]), int(row[6])
                    )
                )
        return cls(records)


def _subdomain_id_of(path):
    m = _SUB_RE.search(Path(path).name)
    if not m:
        raise FormatError(f"{path}: file name does not match sub<id>.csv|bin")
    return int(m.group(1))


def read_subdomain_file(path):
    """Read one subdomain file; returns (subdomain_id, points array).

    The points array is n_points x (2 + n_vars) with columns x, y, var0...
    """
    path = Path(path)
    sub_id = _subdomain_id_of(path)
    if path.suffix == ".csv":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header[:2] != ["x", "y"]:
                raise FormatError(f"{path}: CSV header must start with x,y")
            data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
            if data.size == 0:
                data = data.reshape(0, len(header))
    else:
        h, data = blockfile.read_file(path, SUBD_MAGIC)
        if h.block_id != sub_id:
            raise FormatError(f"{path}: header subdomain id {h.block_id} != file name id {sub_id}")
    if data.shape[1] < 3:
        raise FormatError(f"{path}: need at least x, y and one variable column")
    return sub_id, data


def write_subdomain_file(path, subdomain_id, time_step, points, binary=True):
    points = np.asarray(points, dtype=np.float64)
    path = Path(path)
    if binary:
        h = BlockHeader(
            SUBD_MAGIC,
            "f64",
            subdomain_id,
            points.shape[0],
            points.shape[1],
            time_step,
            float(points[:, 1].min()) if len(points) else 0.0,
            float(points[:, 1].max()) if len(points) else 0.0,
        )
        blockfile.write_file(path, h, points)
    else:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y"] + [f"var{i}" for i in range(points.shape[1] - 2)])
            for row in points:
                w.writerow([repr(v) for v in row])


def consolidate_timestep(subdomain_paths, out_path, time_step=0):
    """Concatenate one time step's subdomain files in subdomain-id order.

    Writes the "CONS" file and returns the TimestepSummary. Subdomain ids
    must form a complete 0..n_sub-1 range and all files must agree on the
    number of variables.
    """
    by_id = {}
    for p in subdomain_paths:
        sub_id, data = read_subdomain_file(p)
        if sub_id in by_id:
            raise ValidationError(f"duplicate subdomain id {sub_id}")
        by_id[sub_id] = data
    n_sub = len(by_id)
    missing = [i for i in range(n_sub) if i not in by_id]
    if missing:
        raise ValidationError(f"missing subdomain id {missing[0]} (have {n_sub} files)")

    n_cols = {d.shape[1] for d in by_id.values()}
    if len(n_cols) != 1:
        raise ValidationError(f"subdomains disagree on variable count: {sorted(c - 2 for c in n_cols)}")

    records = []
    start = 0
    parts = []
    for i in range(n_sub):
        d = by_id[i]
        if np.isnan(d[:, :2]).any():
            raise DataError(f"subdomain {i}: NaN coordinate")
        if len(d):
            records.append(
                SubdomainRecord(
                    i,
                    float(d[:, 0].min()), float(d[:, 0].max()),
                    float(d[:, 1].min()), float(d[:, 1].max()),
                    start, len(d),
                )
            )
        else:
            records.append(SubdomainRecord(i, np.nan, np.nan, np.nan, np.nan, start, 0))
        parts.append(d)
        start += len(d)

    all_points = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    h = BlockHeader(
        CONS_MAGIC,
        "f64",
        0,
        all_points.shape[0],
        all_points.shape[1],
        time_step,
        float(all_points[:, 1].min()) if len(all_points) else 0.0,
        float(all_points[:, 1].max()) if len(all_points) else 0.0,
    )
    blockfile.write_file(out_path, h, all_points)
    return TimestepSummary(records)


def read_consolidated(path):
    """Read a consolidated time step; returns (time_step, points array)."""
    h, data = blockfile.read_file(path, CONS_MAGIC)
    return h.row_offset, data


def open_consolidated(path):
    """Memory-map a consolidated time step; returns (time_step, memmap)."""
    h, mm = blockfile.open_payload(path, "r", CONS_MAGIC)
    return h.row_offset, mm


def query_subdomains_in_range(summary, x_range, y_range):
    """Subdomain ids whose bounding box intersects the query box."""
    x_lo, x_hi = x_range
    y_lo, y_hi = y_range
    if not (x_lo <= x_hi and y_lo <= y_hi):
        raise ValidationError("query ranges must be non-empty")
    out = []
    for r in summary.records:
        if r.n_points == 0:
            continue
        if r.x_max >= x_lo and r.x_min <= x_hi and r.y_max >= y_lo and r.y_min <= y_hi:
            out.append(r.subdomain_id)
    return out


def list_timesteps(sim_dir):
    """Ascending (step, dir) pairs for a raw simulation directory."""
    sim_dir = Path(sim_dir)
    steps = []
    for d in sim_dir.iterdir():
        m = _STEP_RE.fullmatch(d.name)
        if m and d.is_dir():
            steps.append((int(m.group(1)), d))
    return sorted(steps)


def consolidate_simulation(sim_dir, out_dir):
    """Consolidate every time step of one simulation.

    Writes <out_dir>/t<step>.cons and t<step>.summary.csv per step.
    Steps are independent of one another and may be processed in parallel
    across simulations by the caller.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = list_timesteps(sim_dir)
    if not steps:
        raise ValidationError(f"{sim_dir}: no t<step> directories")
    for step, d in steps:
        paths = sorted(p for p in d.iterdir() if _SUB_RE.search(p.name))
        summary = consolidate_timestep(paths, out_dir / f"t{step:04d}.cons", step)
        summary.save(out_dir / f"t{step:04d}.summary.csv")
    return [s for s, _ in steps]
