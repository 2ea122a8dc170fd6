"""Agglomerative clustering over a precomputed distance matrix.

Distances are computed once by streaming the block store (they are the
expensive part) and persisted, so linkage experiments can be rerun
cheaply. The clustering itself is the classic greedy merge loop with
Lance-Williams updates for single, complete, average, and Ward linkage.
Ward dissimilarities are reported as the increase in the error sum of
squares caused by the merge.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .kmeans import ClusterAssignment

DIST_MAGIC = b"DIST"
_DIST_HEADER = struct.Struct("<4sIBBxxQ")
_HEADER_SIZE = 64

LINKAGES = ("single", "complete", "average", "ward")


@dataclass
class DistanceMatrix:
    values: np.ndarray
    metric: str = "euclidean"

    @property
    def n_snapshots(self):
        return self.values.shape[0]

    def validate(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"distance matrix must be square, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("distance matrix has non-finite entries")
        if (v < 0).any():
            raise ValidationError("distances must be nonnegative")
        if not np.allclose(v, v.T):
            raise ValidationError("distance matrix must be symmetric")
        if np.diagonal(v).any():
            raise ValidationError("distance matrix diagonal must be zero")


@dataclass
class Dendrogram:
    """Full merge history: one record per merge, N-1 records total.

    merges is (N-1) x 4: left node, right node, dissimilarity, new size.
    Original snapshots are nodes 0..N-1; the cluster created by merge t
    is node N+t. left < right in every record.
    """

    merges: np.ndarray
    n_leaves: int

    @property
    def monotonic(self):
        d = self.merges[:, 2]
        return bool((np.diff(d) >= -1e-12 * max(1.0, float(np.abs(d).max()))).all())


def pairwise_distances(m, chunk_rows=65536):
    """Euclidean distances between all column pairs of a block store.

    Accumulates the Gram matrix block by block (one streaming pass), then
    converts to distances. Tiny negative squared distances from rounding
    are clamped to zero.
    """
    n = m.n_cols
    gram = np.zeros((n, n))
    for _, _, chunk in m.iter_row_chunks(chunk_rows):
        gram += chunk.T @ chunk
    gram = (gram + gram.T) / 2.0
    sq = np.diagonal(gram)
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    values = np.sqrt(d2)
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(values)


def _lw_update(linkage, m, a, b, sizes, merge_cost, active):
    """New dissimilarity row for the merged cluster against all others."""
    na, nb = sizes[a], sizes[b]
    if linkage == "single":
        row = np.minimum(m[a], m[b])
    elif linkage == "complete":
        row = np.maximum(m[a], m[b])
    elif linkage == "average":
        row = (na * m[a] + nb * m[b]) / (na + nb)
    else:  # ward, on ESS increments
        nk = sizes
        row = ((na + nk) * m[a] + (nb + nk) * m[b] - nk * merge_cost) / (na + nb + nk)
    row[~active] = np.inf
    return row


def hcluster(dist, linkage, nc):
    """Merge clusters greedily until one remains; cut the tree at nc.

    Returns (assignment at nc clusters, full dendrogram). Merge ties are
    broken by the smallest (left node, right node) pair, which makes the
    merge sequence deterministic.
    """
    if linkage not in LINKAGES:
        raise ValidationError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    dist.validate()
    n = dist.n_snapshots
    if not 1 <= nc <= n:
        raise ValidationError(f"nc must be in 1..{n}, got {nc}")

    # Working dissimilarities: Ward merges minimize the ESS increase,
    # which for singletons is half the squared distance.
    if linkage == "ward":
        m = dist.values.astype(np.float64) ** 2 / 2.0
    else:
        m = dist.values.astype(np.float64).copy()
    np.fill_diagonal(m, np.inf)

    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    node_id = np.arange(n)
    merges = np.empty((n - 1, 4))

    for t in range(n - 1):
        best = m.min()
        ai, bi = np.nonzero(m == best)
        # Candidate slot pairs -> node-id pairs; ties pick the smallest.
        pairs = sorted(
            (min(node_id[i], node_id[j]), max(node_id[i], node_id[j]), i, j)
            for i, j in zip(ai, bi)
            if i < j
        )
        left, right, i, j = pairs[0]
        merges[t] = (left, right, best, sizes[i] + sizes[j])

        keep, drop = (i, j) if i < j else (j, i)
        row = _lw_update(linkage, m, i, j, sizes, best, active)
        sizes[keep] += sizes[drop]
        node_id[keep] = n + t
        active[drop] = False
        row[keep] = np.inf
        m[keep, :] = row
        m[:, keep] = row
        m[drop, :] = np.inf
        m[:, drop] = np.inf

    dend = Dendrogram(merges, n)
    return cut_dendrogram(dend, nc), dend


def cut_dendrogram(dend, nc):
    """Assignment with nc clusters: replay the first N - nc merges.

    Cluster labels are numbered by first appearance when scanning
    snapshots in ascending order.
    """
    n = dend.n_leaves
    if not 1 <= nc <= n:
        raise ValidationError(f"nc must be in 1..{n}, got {nc}")
    return _labels_from_merges(dend.merges[: n - nc], n)


def cut_dendrogram_at(dend, max_dissimilarity):
    """Assignment from merges with dissimilarity <= max_dissimilarity.

    The secondary cut mode: merges above the threshold are discarded, in
    merge order, so the clusters are exactly those formed at or below the
    threshold.
    """
    keep = dend.merges[:, 2] <= max_dissimilarity
    stop = int(np.argmin(keep)) if not keep.all() else len(keep)
    return _labels_from_merges(dend.merges[:stop], dend.n_leaves)


def _labels_from_merges(merges, n):
    parent = list(range(n + len(merges)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t, (left, right, _, _) in enumerate(merges):
        new = n + t
        parent[find(int(left))] = new
        parent[find(int(right))] = new

    labels = np.empty(n, dtype=int)
    seen = {}
    for i in range(n):
        root = find(i)
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return ClusterAssignment(labels=labels, nc=len(seen))


def save_distance_matrix(path, dm):
    """Binary upper-triangle file (row-major, i < j)."""
    n = dm.n_snapshots
    hdr = _DIST_HEADER.pack(DIST_MAGIC, 1, 0, 0, n).ljust(_HEADER_SIZE, b"\0")
    iu = np.triu_indices(n, k=1)
    with open(Path(path), "wb") as f:
        f.write(hdr)
        np.ascontiguousarray(dm.values[iu], dtype=np.float64).tofile(f)


def load_distance_matrix(path):
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(_HEADER_SIZE)
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: header truncated")
        magic, version, code, metric, n = _DIST_HEADER.unpack(raw[: _DIST_HEADER.size])
        if magic != DIST_MAGIC:
            raise FormatError(f"{path}: magic {magic!r}, expected {DIST_MAGIC!r}")
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        tri = np.fromfile(f, dtype=np.float64, count=n * (n - 1) // 2)
    if tri.size != n * (n - 1) // 2:
        raise FormatError(f"{path}: payload truncated")
    values = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    values[iu] = tri
    values += values.T
    return DistanceMatrix(values)


def save_dendrogram_csv(path, dend):
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "left", "right", "dissimilarity", "size"])
        for t, (left, right, diss, size) in enumerate(dend.merges):
            w.writerow([t, int(left), int(right), repr(float(diss)), int(size)])
