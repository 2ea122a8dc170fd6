"""Per-snapshot weight vectors from the SVD, via the Gram matrix.

With millions of grid points the left singular vectors can never be
materialized, so the decomposition is done with the method of
snapshots: the N x N Gram matrix X^T X is accumulated in one streaming
pass, its eigendecomposition gives the right singular vectors and
singular values, and the weight of mode k in snapshot i is
w_ki = sigma_k * v_ki. Euclidean distances between weight columns equal
distances between the original snapshots (exactly, in exact
arithmetic), so the weights are a drop-in clustering representation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

WGTS_MAGIC = b"WGTS"
_WGTS_HEADER = struct.Struct("<4sIBxxxQ")
_HEADER_SIZE = 64

RANK_TOLERANCE = 1e-12  # relative eigenvalue clamp


@dataclass
class WeightMatrix:
    """N x N weights; row k holds mode k's weight across all snapshots."""

    values: np.ndarray
    singular_values: np.ndarray
    rank_deficient: tuple = ()

    @property
    def n_snapshots(self):
        return self.values.shape[1]


def gram_matrix(m, chunk_rows=65536):
    """X^T X accumulated block by block; symmetric positive semidefinite."""
    n = m.n_cols
    gram = np.zeros((n, n))
    for _, _, chunk in m.iter_row_chunks(chunk_rows):
        gram += chunk.T @ chunk
    return (gram + gram.T) / 2.0


def weights_from_gram(gram, sym_tol=1e-8):
    """Weight matrix and singular values from the Gram matrix.

    Eigenvalues below RANK_TOLERANCE times the largest are clamped to
    zero and their modes flagged rank-deficient. Each eigenvector's sign
    is fixed so its first significant entry is positive.
    """
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValidationError(f"Gram matrix must be square, got {gram.shape}")
    scale = float(np.abs(gram).max()) or 1.0
    if float(np.abs(gram - gram.T).max()) > sym_tol * scale:
        raise ValidationError("Gram matrix is not symmetric within tolerance")
    gram = (gram + gram.T) / 2.0

    eigvals, eigvecs = np.linalg.eigh(gram)  # ascending
    eigvals = eigvals[::-1].copy()
    eigvecs = eigvecs[:, ::-1].copy()

    clamp = eigvals < RANK_TOLERANCE * max(eigvals[0], 0.0)
    eigvals = np.where(clamp, 0.0, eigvals)
    deficient = tuple(int(k) for k in np.flatnonzero(clamp))

    for k in range(eigvecs.shape[1]):
        col = eigvecs[:, k]
        big = np.flatnonzero(np.abs(col) > 1e-9 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            eigvecs[:, k] = -col

    sigma = np.sqrt(eigvals)
    weights = sigma[:, None] * eigvecs.T
    return WeightMatrix(weights, sigma, deficient)


def reconstruct_check(m, wm, k_modes, chunk_rows=65536):
    """Residual norm of the rank-k reconstruction, per snapshot.

    The spatial modes are recovered on the fly: for each block chunk C,
    the rank-k reconstruction is C @ P with P the projector onto the top
    k right singular vectors. Modes whose singular value is within the
    rank tolerance are skipped and reported.
    Returns (residual norms, skipped mode indices).
    """
    n = wm.n_snapshots
    if not 1 <= k_modes <= n:
        raise ValidationError(f"k_modes must be in 1..{n}, got {k_modes}")
    sigma = wm.singular_values[:k_modes]
    usable = sigma > RANK_TOLERANCE * max(float(wm.singular_values[0]), 0.0)
    skipped = tuple(int(k) for k in np.flatnonzero(~usable))
    v = (wm.values[:k_modes][usable] / sigma[usable, None]).T  # N x k
    projector = v @ v.T

    res2 = np.zeros(n)
    for _, _, chunk in m.iter_row_chunks(chunk_rows):
        err = chunk - chunk @ projector
        res2 += np.einsum("ij,ij->j", err, err)
    return np.sqrt(res2), skipped


def save_weights(path, wm):
    n = wm.n_snapshots
    hdr = _WGTS_HEADER.pack(WGTS_MAGIC, 1, 0, n).ljust(_HEADER_SIZE, b"\0")
    with open(Path(path), "wb") as f:
        f.write(hdr)
        np.ascontiguousarray(wm.values, dtype=np.float64).tofile(f)
        np.ascontiguousarray(wm.singular_values, dtype=np.float64).tofile(f)


def load_weights(path):
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(_HEADER_SIZE)
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: header truncated")
        magic, version, code, n = _WGTS_HEADER.unpack(raw[: _WGTS_HEADER.size])
        if magic != WGTS_MAGIC:
            raise FormatError(f"{path}: magic {magic!r}, expected {WGTS_MAGIC!r}")
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        values = np.fromfile(f, dtype=np.float64, count=n * n)
        sigma = np.fromfile(f, dtype=np.float64, count=n)
    if values.size != n * n or sigma.size != n:
        raise FormatError(f"{path}: payload truncated")
    deficient = tuple(int(k) for k in np.flatnonzero(sigma == 0.0))
    return WeightMatrix(values.reshape((n, n)), sigma, deficient)
