"""Lloyd-style k-means over the columns of an in-memory matrix.

Points are matrix columns (projected snapshots or SVD weight vectors).
The implementation is deterministic for a given seed: initial centroids
are nc distinct columns sampled without replacement, assignment ties go
to the lowest centroid index, and an empty cluster is reseeded with the
snapshot currently farthest from its own centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class KMeansConfig:
    nc: int
    niter: int = 100
    thresh: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.nc < 1:
            raise ValidationError(f"nc must be >= 1, got {self.nc}")
        if self.niter < 1:
            raise ValidationError(f"niter must be >= 1, got {self.niter}")
        if self.thresh < 0:
            raise ValidationError(f"thresh must be >= 0, got {self.thresh}")


@dataclass
class ClusterAssignment:
    """A labeling of N snapshots into nc clusters.

    Produced by k-means (with centroids, wcss and the per-iteration wcss
    trace filled in) and by consensus extraction or dendrogram cuts
    (labels only).
    """

    labels: np.ndarray
    nc: int
    centroids: np.ndarray | None = None   # (d, nc), column k = centroid k
    wcss: float | None = None
    iterations_run: int = 0
    converged: bool = True
    wcss_trace: tuple = ()
    empty_clusters: tuple = ()

    @property
    def n_snapshots(self):
        return len(self.labels)

    def sizes(self):
        return np.bincount(self.labels, minlength=self.nc)


def _assign(data, centroids):
    # Squared distances via the Gram expansion; ties go to the lowest
    # centroid index because argmin returns the first minimum.
    xs = np.einsum("ij,ij->j", data, data)
    cs = np.einsum("ij,ij->j", centroids, centroids)
    d2 = xs[:, None] + cs[None, :] - 2.0 * (data.T @ centroids)
    return np.argmin(d2, axis=1)


def _exact_wcss(data, centroids, labels):
    total = 0.0
    for k in range(centroids.shape[1]):
        members = labels == k
        if members.any():
            diff = data[:, members] - centroids[:, k][:, None]
            total += float(np.einsum("ij,ij->", diff, diff))
    return total


def kmeans_fit(data, cfg):
    """Cluster the columns of data (d x N) into cfg.nc clusters.

    Iterates assign/update until no centroid moves more than cfg.thresh
    (Euclidean) or cfg.niter iterations have run. With the default
    thresh = 0.0 termination means an exact fixed point was reached.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValidationError(f"data must be 2-D, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValidationError("data contains non-finite values")
    n = data.shape[1]
    if cfg.nc > n:
        raise ValidationError(f"nc = {cfg.nc} exceeds the number of snapshots N = {n}")

    rng = np.random.default_rng(cfg.seed)
    centroids = data[:, rng.choice(n, size=cfg.nc, replace=False)].copy()

    trace = []
    converged = False
    iterations = 0
    for _ in range(cfg.niter):
        iterations += 1
        labels = _assign(data, centroids)
        trace.append(_exact_wcss(data, centroids, labels))

        new_centroids = centroids.copy()
        for k in range(cfg.nc):
            members = labels == k
            if members.any():
                new_centroids[:, k] = data[:, members].mean(axis=1)
        empties = [k for k in range(cfg.nc) if not (labels == k).any()]
        for k in empties:
            # Reseed with the snapshot farthest from its own centroid.
            d = data - new_centroids[:, labels]
            worst = int(np.argmax(np.einsum("ij,ij->j", d, d)))
            new_centroids[:, k] = data[:, worst]
            labels = _assign(data, new_centroids)

        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=0)).max())
        centroids = new_centroids
        if movement <= cfg.thresh:
            converged = True
            break

    labels = _assign(data, centroids)
    wcss = _exact_wcss(data, centroids, labels)
    final_empty = tuple(k for k in range(cfg.nc) if not (labels == k).any())
    return ClusterAssignment(
        labels=labels,
        nc=cfg.nc,
        centroids=centroids,
        wcss=wcss,
        iterations_run=iterations,
        converged=converged,
        wcss_trace=tuple(trace),
        empty_clusters=final_empty,
    )


def derive_seed(seed, repetition):
    """Stable per-repetition seed for ensemble runs."""
    return int(np.random.SeedSequence([seed, repetition]).generate_state(1, np.uint64)[0])


def kmeans_ensemble(data, cfg, repetitions):
    """Run k-means `repetitions` times with derived seeds.

    Repetition r uses derive_seed(cfg.seed, r), so runs are independent
    of one another and the whole ensemble is reproducible.
    """
    if repetitions < 1:
        raise ValidationError(f"repetitions must be >= 1, got {repetitions}")
    return [
        kmeans_fit(data, replace(cfg, seed=derive_seed(cfg.seed, r)))
        for r in range(repetitions)
    ]


def partition_wcss(data, labels):
    """Within-cluster sum of squares of an arbitrary labeling of columns."""
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    for k in np.unique(labels):
        members = data[:, labels == k]
        diff = members - members.mean(axis=1)[:, None]
        total += float(np.einsum("ij,ij->", diff, diff))
    return total


def pair_counting_agreement(labels_a, labels_b):
    """Fraction of snapshot pairs on which two clusterings agree.

    A pair agrees when both clusterings put it in one cluster or both
    split it. Permutation-invariant; 1.0 means identical partitions.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValidationError("label vectors must have the same length")
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    contingency = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(contingency, (ai, bi), 1.0)

    def pairs(x):
        return float((x * (x - 1) / 2).sum())

    total = n * (n - 1) / 2
    same_same = pairs(contingency)
    same_a = pairs(contingency.sum(axis=1))
    same_b = pairs(contingency.sum(axis=0))
    return (total + 2 * same_same - same_a - same_b) / total
