"""Block-partitioned snapshot matrix store and the snapshot index.

A store is a directory of "SNPB" block files, one per y-range block,
plus a text index mapping matrix columns to (simulation, time step).
Concatenating the blocks in block_id order reconstructs the full
D x N snapshot matrix with grid points in natural (y, x) order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blockfile
from .blockfile import BlockHeader
from .errors import FormatError, ValidationError

SNPB_MAGIC = "SNPB"
OUTCOME_LABELS = ("break", "almost_break", "no_break", "unknown")

_BLOCK_FILE_RE = re.compile(r"block_(\d{4})\.snpb$")


def block_filename(block_id):
    return f"block_{block_id:04d}.snpb"


@dataclass(frozen=True)
class BlockSpec:
    """One row-block of the snapshot matrix: rows owned by a y-range."""

    block_id: int
    y_lo: float
    y_hi: float
    row_count: int
    row_offset: int


def validate_specs(specs):
    """Check ordering, disjointness, and prefix-sum offsets of blocks."""
    if not specs:
        raise ValidationError("a store needs at least one block")
    offset = 0
    for i, s in enumerate(specs):
        if s.block_id != i:
            raise ValidationError(f"block ids must be 0..{len(specs) - 1} in order, got {s.block_id} at position {i}")
        if s.row_count < 1:
            raise ValidationError(f"block {i} has row_count {s.row_count}")
        if not s.y_lo < s.y_hi:
            raise ValidationError(f"block {i} has empty y-range [{s.y_lo}, {s.y_hi})")
        if i > 0 and s.y_lo < specs[i - 1].y_hi:
            raise ValidationError(
                f"block {i} overlaps or precedes block {i - 1}: y ranges must be disjoint and ascending"
            )
        if s.row_offset != offset:
            raise ValidationError(f"block {i} row_offset {s.row_offset}, expected prefix sum {offset}")
        offset += s.row_count


@dataclass(frozen=True)
class SimMeta:
    """Per-simulation inputs and outcome label."""

    he_length: float
    tip_velocity: float
    jet_radius: float
    outcome_label: str = "unknown"

    def __post_init__(self):
        if self.outcome_label not in OUTCOME_LABELS:
            raise ValidationError(f"unknown outcome label {self.outcome_label!r}")


@dataclass
class SnapshotIndex:
    """Maps matrix columns to (sim_key, time_step) plus per-sim metadata.

    entries[i] is the (sim_key, time_step) of column i.
    """

    entries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def n_snapshots(self):
        return len(self.entries)

    def validate(self):
        steps_seen = {}
        for col, (sim, step) in enumerate(self.entries):
            if sim not in self.metadata:
                raise ValidationError(f"column {col}: sim {sim!r} missing from metadata")
            prev = steps_seen.get(sim)
            if prev is None:
                if step != 0:
                    raise ValidationError(f"sim {sim!r} starts at time step {step}, expected 0")
            elif step != prev + 1:
                raise ValidationError(
                    f"sim {sim!r} time steps not contiguous: {prev} followed by {step}"
                )
            steps_seen[sim] = step

    def columns_for(self, sim_key):
        return [c for c, (sim, _) in enumerate(self.entries) if sim == sim_key]

    def save(self, path):
        lines = ["[snapshots]"]
        for col, (sim, step) in enumerate(self.entries):
            lines.append(f"{col},{sim},{step}")
        lines.append("[simulations]")
        for sim in sorted(self.metadata):
            m = self.metadata[sim]
            lines.append(
                f"{sim},{m.he_length!r},{m.tip_velocity!r},{m.jet_radius!r},{m.outcome_label}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        entries = {}
        metadata = {}
        section = None
        for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("[snapshots]", "[simulations]"):
                section = line
                continue
            parts = line.split(",")
            if section == "[snapshots]":
                if len(parts) != 3:
                    raise FormatError(f"{path}:{ln}: expected column,sim_key,time_step")
                entries[int(parts[0])] = (parts[1], int(parts[2]))
            elif section == "[simulations]":
                if len(parts) != 5:
                    raise FormatError(f"{path}:{ln}: expected sim_key,he_length,tip_velocity,jet_radius,label")
                metadata[parts[0]] = SimMeta(float(parts[1]), float(parts[2]), float(parts[3]), parts[4])
            else:
                raise FormatError(f"{path}:{ln}: record outside a section")
        if sorted(entries) != list(range(len(entries))):
            raise ValidationError(f"{path}: column numbers must be 0..N-1 without gaps or duplicates")
        index = cls([entries[c] for c in range(len(entries))], metadata)
        index.validate()
        return index


class BlockMatrix:
    """Handle on an on-disk block-partitioned D x N matrix."""

    def __init__(self, directory, specs, n_cols, dtype="f64", grid=None):
        validate_specs(specs)
        if n_cols < 1:
            raise ValidationError(f"n_cols must be >= 1, got {n_cols}")
        blockfile.numpy_dtype(dtype)
        self.directory = Path(directory)
        self.specs = list(specs)
        self.n_cols = n_cols
        self.dtype = dtype
        self.grid = grid

    @property
    def total_rows(self):
        return sum(s.row_count for s in self.specs)

    @property
    def n_blocks(self):
        return len(self.specs)

    def block_path(self, block_id):
        return self.directory / block_filename(block_id)

    def _header(self, spec):
        return BlockHeader(
            SNPB_MAGIC,
            self.dtype,
            spec.block_id,
            spec.row_count,
            self.n_cols,
            spec.row_offset,
            spec.y_lo,
            spec.y_hi,
        )

    def _spec(self, block_id):
        if not 0 <= block_id < len(self.specs):
            raise ValidationError(f"block id {block_id} out of range 0..{len(self.specs) - 1}")
        return self.specs[block_id]

    def _check_column(self, column):
        if not 0 <= column < self.n_cols:
            raise ValidationError(f"column {column} out of range 0..{self.n_cols - 1}")

    def write_column_block(self, block_id, column, values):
        spec = self._spec(block_id)
        self._check_column(column)
        values = np.asarray(values, dtype=blockfile.numpy_dtype(self.dtype))
        if values.shape != (spec.row_count,):
            raise ValidationError(
                f"block {block_id} expects {spec.row_count} values per column, got shape {values.shape}"
            )
        _, mm = blockfile.open_payload(self.block_path(block_id), "r+", SNPB_MAGIC)
        mm[:, column] = values
        mm.flush()

    def write_columns_block(self, block_id, col_start, values):
        """Write a contiguous range of columns (row_count x k) into one block."""
        spec = self._spec(block_id)
        values = np.asarray(values, dtype=blockfile.numpy_dtype(self.dtype))
        k = values.shape[1]
        self._check_column(col_start)
        self._check_column(col_start + k - 1)
        if values.shape[0] != spec.row_count:
            raise ValidationError(
                f"block {block_id} expects {spec.row_count} rows, got {values.shape[0]}"
            )
        _, mm = blockfile.open_payload(self.block_path(block_id), "r+", SNPB_MAGIC)
        mm[:, col_start : col_start + k] = values
        mm.flush()

    def read_column_block(self, block_id, column):
        spec = self._spec(block_id)
        self._check_column(column)
        _, mm = blockfile.open_payload(self.block_path(block_id), "r", SNPB_MAGIC)
        out = np.array(mm[:, column])
        assert out.shape == (spec.row_count,)
        return out

    def read_column(self, column):
        """Full length-D column in natural grid order."""
        return np.concatenate([self.read_column_block(s.block_id, column) for s in self.specs])

    def open_block(self, block_id, mode="r"):
        """Memory-map one block's payload (row_count x n_cols)."""
        spec = self._spec(block_id)
        header, mm = blockfile.open_payload(self.block_path(block_id), mode, SNPB_MAGIC)
        if header.row_count != spec.row_count or header.n_cols != self.n_cols:
            raise FormatError(
                f"{self.block_path(block_id)}: header disagrees with store specs"
            )
        return mm

    def stream_rows(self, visitor):
        """Call visitor(global_row_index, row) for every row in natural order."""
        for spec in self.specs:
            mm = self.open_block(spec.block_id)
            for r in range(spec.row_count):
                visitor(spec.row_offset + r, np.array(mm[r]))

    def iter_row_chunks(self, max_rows=65536):
        """Yield (block_id, global_row_start, chunk) across all blocks in order.

        Chunks never cross block boundaries, so per-block partial sums can
        be reduced in block order for reproducible accumulation.
        """
        for spec in self.specs:
            mm = self.open_block(spec.block_id)
            for r0 in range(0, spec.row_count, max_rows):
                r1 = min(r0 + max_rows, spec.row_count)
                yield spec.block_id, spec.row_offset + r0, np.array(mm[r0:r1])


def create_store(directory, specs, n_cols, dtype="f64", grid=None):
    """Create zero-filled block files plus headers; returns the handle."""
    m = BlockMatrix(directory, specs, n_cols, dtype, grid)
    m.directory.mkdir(parents=True, exist_ok=True)
    for spec in m.specs:
        blockfile.create_file(m.block_path(spec.block_id), m._header(spec))
    if grid is not None:
        grid.save(m.directory / "grid.cfg")
    return m


def open_store(directory):
    """Open an existing store, rebuilding specs from the block headers."""
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if _BLOCK_FILE_RE.search(p.name))
    if not paths:
        raise FormatError(f"{directory}: no block files found")
    specs = []
    n_cols = None
    dtype = None
    for p in paths:
        h = blockfile.read_header(p, SNPB_MAGIC)
        blockfile.check_payload_size(p, h)
        specs.append(BlockSpec(h.block_id, h.y_lo, h.y_hi, h.row_count, h.row_offset))
        if n_cols is None:
            n_cols, dtype = h.n_cols, h.dtype
        elif h.n_cols != n_cols or h.dtype != dtype:
            raise FormatError(f"{p}: n_cols/dtype disagree with the other blocks")
    grid = None
    grid_path = directory / "grid.cfg"
    if grid_path.exists():
        from .preprocess import CommonGrid

        grid = CommonGrid.load(grid_path)
    return BlockMatrix(directory, specs, n_cols, dtype, grid)


def load_index(directory):
    return SnapshotIndex.load(Path(directory) / "index.txt")


def assemble_variable_store(remap_root, grid, var_index, sim_metas, out_dir, dtype="f64"):
    """Build one variable's snapshot store from per-simulation remapped blocks.

    remap_root/<sim_key>/block_XXXX.rmap files must all live on `grid`.
    Columns are ordered by sorted sim_key, then ascending time step. Writes
    the block files plus index.txt and grid.cfg; returns (store, index).
    """
    remap_root = Path(remap_root)
    sim_keys = sorted(d.name for d in remap_root.iterdir() if d.is_dir())
    if not sim_keys:
        raise ValidationError(f"{remap_root}: no simulation directories")
    missing = [k for k in sim_keys if k not in sim_metas]
    if missing:
        raise ValidationError(f"no metadata for simulations: {', '.join(missing)}")

    # Column layout from the per-sim step counts in the block-0 headers.
    entries = []
    col_start = {}
    steps_of = {}
    for sim in sim_keys:
        h = blockfile.read_header(remap_root / sim / "block_0000.rmap", "RMAP")
        if var_index >= h.n_vars:
            raise ValidationError(f"{sim}: variable {var_index} out of range, file has {h.n_vars}")
        col_start[sim] = len(entries)
        steps_of[sim] = h.n_steps
        entries.extend((sim, t) for t in range(h.n_steps))

    index = SnapshotIndex(entries, {k: sim_metas[k] for k in sim_keys})
    index.validate()
    m = create_store(out_dir, grid.blocks, len(entries), dtype, grid)
    for sim in sim_keys:
        for spec in grid.blocks:
            path = remap_root / sim / f"block_{spec.block_id:04d}.rmap"
            h, data = blockfile.read_file(path, "RMAP")
            if h.row_count != spec.row_count:
                raise FormatError(f"{path}: block shape disagrees with the common grid")
            # Remapped layout: x, y, then variables step-major (var fastest).
            cols = 2 + var_index + np.arange(steps_of[sim]) * h.n_vars
            m.write_columns_block(spec.block_id, col_start[sim], data[:, cols])
    index.save(m.directory / "index.txt")
    return m, index
