"""Very sparse random projection of block snapshot matrices.

The projected matrix is built incrementally: stream the store one row
chunk at a time, generate the matching columns of the sparse random
matrix on the fly, and add the outer products into a dense d x N
accumulator. Neither the random matrix nor the snapshot matrix is ever
materialized. Entries of the random matrix are a pure function of
(seed, row, column) via a counter-based generator, so any column can be
regenerated independently and block-parallel runs are reproducible.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

PROJ_MAGIC = b"PROJ"
_PROJ_HEADER = struct.Struct("<4sIBxxxQQQd")
_HEADER_SIZE = 64

DEFAULT_REDUCED_DIM = 2200
DEFAULT_ACCUMULATOR_BUDGET = 2 << 30  # bytes


@dataclass(frozen=True)
class JLParams:
    epsilon: float
    n_points: int
    d_min: int


def jl_dimension(epsilon, n_points):
    """Smallest reduced dimension satisfying the distance-distortion bound.

    d_min = ceil(4 * ln(N) / (eps^2/2 - eps^3/3)). This bound is advisory:
    much smaller d works well in practice, and the toolkit default is 2200.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must be in (0, 1), got {epsilon}")
    if n_points < 2:
        raise ValidationError(f"need at least 2 points, got {n_points}")
    denom = epsilon**2 / 2.0 - epsilon**3 / 3.0
    d_min = math.ceil(4.0 * math.log(n_points) / denom)
    return JLParams(epsilon, n_points, d_min)


@dataclass(frozen=True)
class SparseRPSpec:
    """Defines the d x D random matrix elementwise.

    Entries are sqrt(s) * {+1 w.p. 1/(2s), 0 w.p. 1 - 1/s, -1 w.p. 1/(2s)},
    drawn independently per (row, column) from a Philox stream keyed on
    (seed, column). kind="identity" is a test hook: the exact identity map
    (requires d == D).
    """

    d: int
    D: int
    s: float
    seed: int
    kind: str = "sparse"

    def __post_init__(self):
        if self.d < 1 or self.D < 1:
            raise ValidationError("d and D must be positive")
        if self.kind not in ("sparse", "identity"):
            raise ValidationError(f"unknown projection kind {self.kind!r}")
        if self.kind == "identity" and self.d != self.D:
            raise ValidationError("identity projection requires d == D")
        if self.s < 1.0:
            raise ValidationError(f"sparsity parameter s must be >= 1, got {self.s}")


def sqrt_d_sparsity(D):
    """The very sparse choice s = sqrt(D)."""
    return math.sqrt(D)


def make_spec(d, D, seed, s=None, kind="sparse"):
    return SparseRPSpec(d, D, sqrt_d_sparsity(D) if s is None else float(s), seed, kind)


def column_nonzeros(spec, j):
    """Nonzero entries of column j of the random matrix.

    Returns (rows, values). Column j is an independent Philox stream keyed
    (seed, j); entry i is decided by the i-th uniform draw of that stream.
    """
    if spec.kind == "identity":
        return np.array([j]), np.array([1.0])
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, j]))
    u = rng.random(spec.d)
    p = 1.0 / (2.0 * spec.s)
    root_s = math.sqrt(spec.s)
    plus = np.flatnonzero(u < p)
    minus = np.flatnonzero(u >= 1.0 - p)
    rows = np.concatenate([plus, minus])
    vals = np.concatenate([np.full(plus.size, root_s), np.full(minus.size, -root_s)])
    return rows, vals


def dense_column(spec, j):
    """Column j as a dense length-d vector (oracle/verification path)."""
    col = np.zeros(spec.d)
    rows, vals = column_nonzeros(spec, j)
    col[rows] = vals
    return col


@dataclass
class ProjectedMatrix:
    """Dense d x N result of projecting a snapshot store."""

    values: np.ndarray
    spec: SparseRPSpec
    source_id: str = ""

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]


def _project_block(m, spec, block_id):
    partial = np.zeros((spec.d, m.n_cols))
    mm = m.open_block(block_id)
    row_offset = m.specs[block_id].row_offset
    for r in range(m.specs[block_id].row_count):
        rows, vals = column_nonzeros(spec, row_offset + r)
        if rows.size:
            partial[rows] += vals[:, None] * np.asarray(mm[r])[None, :]
    return partial


def project_stream(m, spec, jobs=1, budget_bytes=DEFAULT_ACCUMULATOR_BUDGET):
    """Streaming outer-product projection of a block store.

    Each block contributes a partial accumulator (rows added in ascending
    source-row order); partials are reduced in block order, so the result
    is bit-identical for any job count.
    """
    if spec.D != m.total_rows:
        raise ValidationError(f"spec.D = {spec.D} but the store has {m.total_rows} rows")
    workers = max(1, min(jobs, m.n_blocks))
    need = (workers + 1) * spec.d * m.n_cols * 8
    if need > budget_bytes:
        raise ValidationError(
            f"accumulation buffers would need {need} bytes, over the {budget_bytes} budget"
        )
    if workers == 1:
        partials = (_project_block(m, spec, b) for b in range(m.n_blocks))
        acc = np.zeros((spec.d, m.n_cols))
        for partial in partials:
            acc += partial
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_project_block, m, spec, b) for b in range(m.n_blocks)]
            acc = np.zeros((spec.d, m.n_cols))
            for f in futures:  # block order
                acc += f.result()
    return ProjectedMatrix(acc, spec, str(m.directory))


def save_projected(path, p):
    hdr = _PROJ_HEADER.pack(
        PROJ_MAGIC, 1, 0 if p.values.dtype == np.float64 else 1,
        p.d, p.n_cols, p.spec.seed, p.spec.s,
    ).ljust(_HEADER_SIZE, b"\0")
    with open(Path(path), "wb") as f:
        f.write(hdr)
        np.asfortranarray(p.values).T.tofile(f)  # column-major payload


def load_projected(path, D=None):
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(_HEADER_SIZE)
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: header truncated")
        magic, version, code, d, n, seed, s = _PROJ_HEADER.unpack(raw[: _PROJ_HEADER.size])
        if magic != PROJ_MAGIC:
            raise FormatError(f"{path}: magic {magic!r}, expected {PROJ_MAGIC!r}")
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        dtype = np.dtype("<f8") if code == 0 else np.dtype("<f4")
        data = np.fromfile(f, dtype=dtype, count=d * n)
    if data.size != d * n:
        raise FormatError(f"{path}: payload truncated")
    values = data.reshape((n, d)).T.astype(np.float64)
    spec = SparseRPSpec(d, D if D is not None else d, float(s), seed)
    return ProjectedMatrix(values, spec, "")


@dataclass(frozen=True)
class DistortionPair:
    ref_col: int
    other_col: int
    orig_dist: float
    proj_dist: float
    ratio: float   # proj/orig, nan when flagged
    flagged: bool  # zero original distance


def original_distances(m, reference_columns, chunk_rows=65536):
    """Euclidean distances from each reference column to every column.

    Streams the store once, accumulating squared differences per chunk.
    Returns an array (n_refs, N).
    """
    refs = list(reference_columns)
    acc = np.zeros((len(refs), m.n_cols))
    for _, _, chunk in m.iter_row_chunks(chunk_rows):
        for i, r in enumerate(refs):
            diff = chunk - chunk[:, r][:, None]
            acc[i] += np.einsum("ij,ij->j", diff, diff)
    return np.sqrt(acc)


def distortion_report(m, p, reference_columns, chunk_rows=65536):
    """Per-pair original vs projected distances and their ratio.

    Pairs with zero original distance (including each reference against
    itself) are flagged and carry no ratio.
    """
    refs = list(reference_columns)
    for r in refs:
        if not 0 <= r < m.n_cols:
            raise ValidationError(f"reference column {r} out of range")
    if p.n_cols != m.n_cols:
        raise ValidationError("projected matrix and store disagree on column count")
    orig = original_distances(m, refs, chunk_rows)
    pairs = []
    for i, r in enumerate(refs):
        diff = p.values - p.values[:, r][:, None]
        proj = np.sqrt(np.einsum("ij,ij->j", diff, diff))
        for other in range(m.n_cols):
            o, q = float(orig[i, other]), float(proj[other])
            flagged = o == 0.0
            pairs.append(DistortionPair(r, other, o, q, np.nan if flagged else q / o, flagged))
    return pairs


def save_distortion_csv(path, pairs):
    with open(Path(path), "w") as f:
        f.write("ref_col,other_col,orig,proj,ratio\n")
        for p in pairs:
            ratio = "" if p.flagged else repr(p.ratio)
            f.write(f"{p.ref_col},{p.other_col},{p.orig_dist!r},{p.proj_dist!r},{ratio}\n")
