"""Consensus matrices over k-means ensembles and cluster extraction.

The consensus matrix holds, for every snapshot pair, the fraction of
ensemble repetitions that put the pair in one cluster. Histograms of
its values diagnose how stable a cluster count is; a stable ensemble
has nearly all mass at 0.0 and 1.0. Cluster assignment is read off the
matrix by transitively chaining always-together pairs.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .kmeans import ClusterAssignment

CONS2_MAGIC = b"CONS2"
_CONS2_HEADER = struct.Struct("<5sBBxQII4s")
_HEADER_SIZE = 64

HISTOGRAM_VALUES = tuple(v / 10.0 for v in range(11))


@dataclass
class ConsensusMatrix:
    """Symmetric N x N co-clustering fractions in [0, 1], unit diagonal."""

    values: np.ndarray
    repetitions: int
    nc: int = 0
    tag: str = ""

    @property
    def n_snapshots(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class ConsensusHistogram:
    """Share of matrix entries rounding to each tenth, in percent.

    Counts the full symmetric matrix excluding the diagonal; percentages
    sum to 100.
    """

    values: tuple
    pct: tuple


def build_consensus(assignments, nc=0, tag=""):
    """Fraction of repetitions co-clustering each pair of snapshots."""
    if not assignments:
        raise ValidationError("need at least one assignment")
    n = assignments[0].n_snapshots
    for a in assignments:
        if a.n_snapshots != n:
            raise ValidationError("assignments disagree on the number of snapshots")
    counts = np.zeros((n, n))
    for a in assignments:
        labels = np.asarray(a.labels)
        counts += labels[:, None] == labels[None, :]
    return ConsensusMatrix(counts / len(assignments), len(assignments), nc, tag)


def histogram(c):
    """Distribution of off-diagonal values, bucketed to the nearest tenth."""
    n = c.n_snapshots
    off = ~np.eye(n, dtype=bool)
    bins = np.clip(np.rint(c.values[off] * 10).astype(int), 0, 10)
    counts = np.bincount(bins, minlength=11)
    total = counts.sum()
    pct = tuple(100.0 * cnt / total for cnt in counts)
    return ConsensusHistogram(HISTOGRAM_VALUES, pct)


def extract_clusters(c, threshold=1.0):
    """Clusters as connected components of pairs with consensus >= threshold.

    Rows are scanned in ascending order; each not-yet-assigned snapshot
    starts a new cluster which is grown transitively (a snapshot paired
    with any cluster member at >= threshold joins the cluster). Labels
    are numbered by discovery order.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    n = c.n_snapshots
    linked = c.values >= threshold
    labels = np.full(n, -1, dtype=int)
    next_label = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        frontier = [start]
        labels[start] = next_label
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(linked[i]):
                if labels[j] < 0:
                    labels[j] = next_label
                    frontier.append(int(j))
        next_label += 1
    return ClusterAssignment(labels=labels, nc=next_label)


def reorder_by_cluster(c, assignment):
    """Reorder the matrix so clusters form contiguous diagonal blocks.

    Returns (reordered matrix, permutation); permutation is stable within
    a cluster, and reordered[i, j] == original[perm[i], perm[j]].
    """
    labels = np.asarray(assignment.labels)
    if len(labels) != c.n_snapshots:
        raise ValidationError("assignment does not cover the matrix")
    perm = np.argsort(labels, kind="stable")
    reordered = c.values[np.ix_(perm, perm)]
    return ConsensusMatrix(reordered, c.repetitions, c.nc, c.tag), perm


@dataclass(frozen=True)
class MergeRecord:
    cluster: int
    size: int
    target: int
    mean_consensus: float
    merged: bool


def merge_small_clusters(c, assignment, min_size, strong_threshold=0.7):
    """Fold strongly connected small clusters into their best neighbor.

    Clusters below min_size are visited in label order. Each is merged
    into the cluster with the highest mean inter-cluster consensus,
    provided that mean reaches strong_threshold; otherwise it is kept and
    reported for human review (entries near 0.5 always end up there).
    Returns (new assignment with compact labels, merge records).
    """
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}")
    if not 0.0 < strong_threshold <= 1.0:
        raise ValidationError(f"strong_threshold must be in (0, 1], got {strong_threshold}")
    labels = np.asarray(assignment.labels).copy()
    records = []
    for k in range(assignment.nc):
        members = np.flatnonzero(labels == k)
        if members.size == 0 or members.size >= min_size:
            continue
        best_target, best_mean = -1, -1.0
        for other in range(assignment.nc):
            if other == k:
                continue
            other_members = np.flatnonzero(labels == other)
            if other_members.size == 0:
                continue
            mean = float(c.values[np.ix_(members, other_members)].mean())
            if mean > best_mean:
                best_target, best_mean = other, mean
        merged = best_target >= 0 and best_mean >= strong_threshold
        records.append(MergeRecord(k, int(members.size), best_target, best_mean, merged))
        if merged:
            labels[members] = best_target

    if any(r.merged for r in records):
        survivors = np.unique(labels)
        remap = {old: new for new, old in enumerate(survivors)}
        labels = np.array([remap[v] for v in labels])
        nc = len(survivors)
    else:
        nc = assignment.nc
    return ClusterAssignment(labels=labels, nc=nc), records


def override_labels(assignment, moves):
    """Apply manual label moves; returns (new assignment, audit records).

    moves is a sequence of (column, new_label). Only the listed columns
    change; duplicate columns are rejected. The audit lists
    (column, old_label, new_label) for every move.
    """
    labels = np.asarray(assignment.labels).copy()
    seen = set()
    audit = []
    for column, new_label in moves:
        if column in seen:
            raise ValidationError(f"duplicate column {column} in moves")
        seen.add(column)
        if not 0 <= column < len(labels):
            raise ValidationError(f"column {column} out of range")
        if not 0 <= new_label < assignment.nc:
            raise ValidationError(f"new label {new_label} out of range 0..{assignment.nc - 1}")
        audit.append((int(column), int(labels[column]), int(new_label)))
        labels[column] = new_label
    return ClusterAssignment(labels=labels, nc=assignment.nc), audit


def save_consensus(path, c):
    """Write a consensus matrix: .csv extension gives text, else binary."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            for row in c.values:
                w.writerow([repr(v) for v in row])
        return
    hdr = _CONS2_HEADER.pack(
        CONS2_MAGIC, 1, 0, c.n_snapshots, c.repetitions, c.nc,
        c.tag[:4].ljust(4).encode("ascii"),
    ).ljust(_HEADER_SIZE, b"\0")
    with open(path, "wb") as f:
        f.write(hdr)
        np.ascontiguousarray(c.values, dtype=np.float64).tofile(f)


def load_consensus(path):
    path = Path(path)
    if path.suffix == ".csv":
        values = np.loadtxt(path, delimiter=",", ndmin=2)
        return ConsensusMatrix(values, repetitions=0)
    with open(path, "rb") as f:
        raw = f.read(_HEADER_SIZE)
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: header truncated")
        magic, version, code, n, reps, nc, tag = _CONS2_HEADER.unpack(raw[: _CONS2_HEADER.size])
        if magic != CONS2_MAGIC:
            raise FormatError(f"{path}: magic {magic!r}, expected {CONS2_MAGIC!r}")
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        values = np.fromfile(f, dtype=np.float64, count=n * n)
    if values.size != n * n:
        raise FormatError(f"{path}: payload truncated")
    return ConsensusMatrix(values.reshape((n, n)), reps, nc, tag.decode("ascii").strip())


def save_histogram_csv(path, hist):
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["value", "pct"])
        for v, p in zip(hist.values, hist.pct):
            w.writerow([f"{v:.1f}", repr(p)])
