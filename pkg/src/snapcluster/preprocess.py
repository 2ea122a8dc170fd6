"""Coordinate alignment, cropping, and 1-nearest-neighbor remapping.

Simulations cover different x-extents, so each one is first shifted so
its right edge sits at x = 0, cropped to a shared x-range, and then
remapped onto a fixed common grid. The remap is plain nearest-neighbor:
every grid point takes the value of its closest source point, with
exact ties broken by the lexicographically smallest (y, x) source
coordinate so results are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import blockfile, ingest
from .blockfile import BlockHeader
from .errors import CoverageError, DataError, ValidationError
from .store import BlockSpec

RMAP_MAGIC = "RMAP"

# Defaults mirroring the reference campaign geometry; all configurable.
DEFAULT_CROP = (-32.0, 0.0)
DEFAULT_GRID_X = (-31.5, -0.5)
DEFAULT_GRID_Y = (0.0063, 10.99)
DEFAULT_DELTA = 0.0125
DEFAULT_BLOCK_ROWS = 40
DEFAULT_MARGIN_CELLS = 4

_GRID_KEYS = ("x_lo", "x_hi", "y_lo", "y_hi", "delta", "target_block_rows")


@dataclass(frozen=True)
class CommonGrid:
    """The shared regular lattice all simulations are remapped onto."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    delta: float
    n_x: int
    n_y: int
    blocks: tuple
    target_block_rows: int

    @property
    def n_points(self):
        return self.n_x * self.n_y

    def x_coords(self):
        return self.x_lo + self.delta * np.arange(self.n_x)

    def y_coords(self):
        return self.y_lo + self.delta * np.arange(self.n_y)

    def block_grid_rows(self, spec):
        """(first_grid_row, last_grid_row_exclusive) for a block."""
        first = spec.row_offset // self.n_x
        return first, first + spec.row_count // self.n_x

    def block_points(self, spec):
        """Grid point coordinates of one block in natural (y, x) order."""
        r0, r1 = self.block_grid_rows(spec)
        ys = self.y_coords()[r0:r1]
        xs = self.x_coords()
        yy = np.repeat(ys, self.n_x)
        xx = np.tile(xs, r1 - r0)
        return xx, yy

    def save(self, path):
        lines = [f"{k} = {getattr(self, k)!r}" for k in _GRID_KEYS]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        vals = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
        return build_common_grid(
            (float(vals["x_lo"]), float(vals["x_hi"])),
            (float(vals["y_lo"]), float(vals["y_hi"])),
            float(vals["delta"]),
            int(vals["target_block_rows"]),
        )


def _axis_count(lo, hi, delta):
    # Snap within 1e-9 so exact multiples of delta survive float rounding.
    return int(math.floor((hi - lo) / delta + 1e-9)) + 1


def build_common_grid(x_range, y_range, delta, target_block_rows=DEFAULT_BLOCK_ROWS):
    """Lay out the common grid and its y-range row blocks.

    Grid points are x_lo + i*delta, y_lo + j*delta for all i, j that fit
    inside the ranges. Blocks own target_block_rows grid rows each; the
    last block takes the remainder.
    """
    x_lo, x_hi = x_range
    y_lo, y_hi = y_range
    if not (x_lo < x_hi and y_lo < y_hi):
        raise ValidationError("grid ranges must be non-degenerate")
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if delta > x_hi - x_lo or delta > y_hi - y_lo:
        raise ValidationError(f"delta {delta} exceeds a range extent")
    if target_block_rows < 1:
        raise ValidationError("target_block_rows must be >= 1")
    n_x = _axis_count(x_lo, x_hi, delta)
    n_y = _axis_count(y_lo, y_hi, delta)

    specs = []
    row = 0
    offset = 0
    while row < n_y:
        rows = min(target_block_rows, n_y - row)
        # Do not leave a tiny remainder as its own block unless it is the
        # natural tail; the last block simply takes whatever is left.
        if n_y - (row + rows) < 0:
            rows = n_y - row
        specs.append(
            BlockSpec(
                len(specs),
                y_lo + row * delta,
                y_lo + (row + rows) * delta,
                rows * n_x,
                offset,
            )
        )
        offset += rows * n_x
        row += rows
    return CommonGrid(x_lo, x_hi, y_lo, y_hi, delta, n_x, n_y, tuple(specs), target_block_rows)


def default_common_grid():
    return build_common_grid(DEFAULT_GRID_X, DEFAULT_GRID_Y, DEFAULT_DELTA, DEFAULT_BLOCK_ROWS)


@dataclass
class AlignSpec:
    """Per-simulation x-shifts plus the crop range they were applied with."""

    crop_range: tuple = DEFAULT_CROP
    x_shift_per_sim: dict = field(default_factory=dict)


def align_and_crop(points, x_max_of_domain, crop_range=DEFAULT_CROP):
    """Shift x so the domain's right edge is 0, then crop to crop_range.

    points is n x (2 + n_vars) with columns x, y, values... Returns the
    surviving rows with shifted x; order is preserved. An empty result is
    allowed. NaN coordinates are rejected.
    """
    lo, hi = crop_range
    if not lo < hi:
        raise ValidationError(f"crop range [{lo}, {hi}] is empty")
    points = np.asarray(points, dtype=np.float64)
    if np.isnan(points[:, :2]).any():
        raise DataError("NaN coordinate in input points")
    shifted = points[:, 0] - x_max_of_domain
    keep = (shifted >= lo) & (shifted <= hi)
    out = points[keep].copy()
    out[:, 0] = shifted[keep]
    return out


def align_simulation(sim_dir, out_dir, crop_range=DEFAULT_CROP):
    """Align and crop every consolidated time step of one simulation.

    The x-shift is the maximum x coordinate of the simulation's points,
    taken from the first time step and applied unchanged to all steps.
    Summaries are rebuilt per step since cropping changes row ranges.
    Returns the shift.
    """
    sim_dir = Path(sim_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cons_paths = sorted(sim_dir.glob("t*.cons"))
    if not cons_paths:
        raise ValidationError(f"{sim_dir}: no consolidated time steps")

    _, first = ingest.read_consolidated(cons_paths[0])
    if np.isnan(first[:, 0]).any():
        raise DataError(f"{cons_paths[0]}: NaN coordinate")
    x_max = float(first[:, 0].max())

    for path in cons_paths:
        step, pts = ingest.read_consolidated(path)
        summary = ingest.TimestepSummary.load(sim_dir / f"{path.stem}.summary.csv")
        records = []
        parts = []
        start = 0
        for rec in summary.records:
            seg = align_and_crop(pts[rec.start_row : rec.start_row + rec.n_points], x_max, crop_range)
            if len(seg):
                records.append(
                    ingest.SubdomainRecord(
                        rec.subdomain_id,
                        float(seg[:, 0].min()), float(seg[:, 0].max()),
                        float(seg[:, 1].min()), float(seg[:, 1].max()),
                        start, len(seg),
                    )
                )
            else:
                records.append(ingest.SubdomainRecord(rec.subdomain_id, np.nan, np.nan, np.nan, np.nan, start, 0))
            parts.append(seg)
            start += len(seg)
        cropped = np.concatenate(parts, axis=0)
        h = BlockHeader(
            ingest.CONS_MAGIC, "f64", 0, cropped.shape[0], cropped.shape[1], step,
            float(cropped[:, 1].min()) if len(cropped) else 0.0,
            float(cropped[:, 1].max()) if len(cropped) else 0.0,
        )
        blockfile.write_file(out_dir / path.name, h, cropped)
        ingest.TimestepSummary(records).save(out_dir / f"{path.stem}.summary.csv")
    return x_max


def nearest_source_indices(source_xy, grid, spec, margin=None):
    """Index of the nearest source point for every grid point of a block.

    Only sources inside the block's box expanded by `margin` are
    candidates (the caller guarantees sources cover the block, i.e. we
    interpolate rather than extrapolate). Exact distance ties go to the
    source with the lexicographically smallest (y, x); remaining ties
    (coincident sources) to the earliest input row.
    """
    if margin is None:
        margin = DEFAULT_MARGIN_CELLS * grid.delta
    source_xy = np.asarray(source_xy, dtype=np.float64)
    if np.isnan(source_xy).any():
        raise DataError("NaN coordinate in source points")

    inside = (
        (source_xy[:, 0] >= grid.x_lo - margin)
        & (source_xy[:, 0] <= grid.x_hi + margin)
        & (source_xy[:, 1] >= spec.y_lo - margin)
        & (source_xy[:, 1] <= spec.y_hi + margin)
    )
    cand = np.flatnonzero(inside)
    if cand.size == 0:
        raise CoverageError(
            f"block {spec.block_id}: no source points within the margin-expanded box "
            f"(margin {margin})"
        )
    # Sort candidates by (y, x); the tie rule becomes "smallest sorted index".
    order = np.lexsort((source_xy[cand, 0], source_xy[cand, 1]))
    cand = cand[order]
    cxy = source_xy[cand]

    gx, gy = grid.block_points(spec)
    targets = np.column_stack([gx, gy])
    tree = cKDTree(cxy)
    dist, nearest = tree.query(targets)

    chosen = nearest.copy()
    # Exact ties: re-examine every candidate within an ulp-inflated ball and
    # pick the first (sorted by (y, x)) achieving the exact minimum squared
    # distance, matching an exhaustive scan bit for bit.
    balls = tree.query_ball_point(targets, dist * (1.0 + 1e-12) + 0.0)
    for t, ball in enumerate(balls):
        if len(ball) <= 1:
            continue
        ball = sorted(ball)
        dx = cxy[ball, 0] - targets[t, 0]
        dy = cxy[ball, 1] - targets[t, 1]
        d2 = dx * dx + dy * dy
        chosen[t] = ball[int(np.argmin(d2))]
    return cand[chosen]


def remap_1nn(source_xy, source_values, grid, spec, margin=None):
    """Remap one scalar field onto one block of the common grid."""
    source_values = np.asarray(source_values)
    idx = nearest_source_indices(source_xy, grid, spec, margin)
    return source_values[idx]


def remap_simulation(sim_dir, grid, out_dir, margin=None):
    """Remap all time steps of one aligned simulation onto the common grid.

    All steps of a simulation share the same source coordinates, so the
    nearest-neighbor indices are computed once per block and reused for
    every step and variable. Each block is written as an "RMAP" file with
    columns x, y, then one column per (step, variable), step-major.
    Subdomain summaries restrict reads to the subdomains intersecting the
    block's expanded box.
    """
    sim_dir = Path(sim_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if margin is None:
        margin = DEFAULT_MARGIN_CELLS * grid.delta
    cons_paths = sorted(sim_dir.glob("t*.cons"))
    if not cons_paths:
        raise ValidationError(f"{sim_dir}: no consolidated time steps")
    n_steps = len(cons_paths)

    _, first = ingest.read_consolidated(cons_paths[0])
    coords0 = first[:, :2]
    n_vars = first.shape[1] - 2
    summaries = [ingest.TimestepSummary.load(sim_dir / f"{p.stem}.summary.csv") for p in cons_paths]

    for p in cons_paths[1:]:
        _, mm = ingest.open_consolidated(p)
        if mm.shape != first.shape or not np.array_equal(np.asarray(mm[:, :2]), coords0):
            raise ValidationError(
                f"{p}: source coordinates differ from {cons_paths[0].name}; "
                "time steps of a simulation must share one grid"
            )

    for spec in grid.blocks:
        x_box = (grid.x_lo - margin, grid.x_hi + margin)
        y_box = (spec.y_lo - margin, spec.y_hi + margin)
        sub_ids = ingest.query_subdomains_in_range(summaries[0], x_box, y_box)
        if not sub_ids:
            raise CoverageError(f"block {spec.block_id}: no subdomain intersects its expanded box")
        rows = np.concatenate(
            [
                np.arange(r.start_row, r.start_row + r.n_points)
                for r in summaries[0].records
                if r.subdomain_id in set(sub_ids)
            ]
        )
        src_xy = coords0[rows]
        idx = nearest_source_indices(src_xy, grid, spec, margin)

        out = np.empty((spec.row_count, 2 + n_vars * n_steps), dtype=np.float64)
        gx, gy = grid.block_points(spec)
        out[:, 0] = gx
        out[:, 1] = gy
        for s, p in enumerate(cons_paths):
            _, mm = ingest.open_consolidated(p)
            vals = np.asarray(mm[rows[idx], 2:])
            out[:, 2 + s * n_vars : 2 + (s + 1) * n_vars] = vals
        h = BlockHeader(
            RMAP_MAGIC, "f64", spec.block_id, spec.row_count, out.shape[1],
            spec.row_offset, spec.y_lo, spec.y_hi, n_steps=n_steps, n_vars=n_vars,
        )
        blockfile.write_file(out_dir / f"block_{spec.block_id:04d}.rmap", h, out)
    return n_steps, n_vars
