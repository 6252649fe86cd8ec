"""Sparse-sign oblivious subspace embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SparseSignEmbedding:
    """A ``d x n`` matrix with ``zeta`` entries ``+-1/sqrt(zeta)`` per column.

    ``rows[c]`` holds the ``zeta`` distinct row indices of column ``c`` and
    ``signs[c]`` their signs.  The operator is immutable and fully determined
    by ``(d, n, zeta, seed)``.
    """

    d: int
    n: int
    zeta: int
    seed: int
    rows: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)
    _mat: sp.csr_matrix = field(repr=False, compare=False)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.zeta)

    @property
    def shape(self):
        return (self.d, self.n)

    def apply(self, x):
        return apply(self, x)

    def apply_block(self, x):
        return apply_block(self, x)

    def toarray(self):
        return self._mat.toarray()


def _distinct_rows(rng, n, d, zeta):
    """``(n, zeta)`` row indices, distinct within each column, by resampling duplicates."""
    rows = rng.integers(0, d, size=(n, zeta))
    while True:
        srt = np.sort(rows, axis=1)
        bad = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        nbad = int(bad.sum())
        if nbad == 0:
            return rows
        if zeta * 4 > d:
            # dense regime: a random permutation prefix per bad column
            keys = rng.random((nbad, d))
            rows[bad] = np.argsort(keys, axis=1)[:, :zeta]
        else:
            rows[bad] = rng.integers(0, d, size=(nbad, zeta))


def build_embedding(d: int, n: int, zeta: int = 8, seed: int = 0) -> SparseSignEmbedding:
    """Draw a sparse-sign embedding.

    Row indices per column are sampled uniformly without replacement and
    the signs are uniform; every entry has magnitude ``1/sqrt(zeta)`` so
    that ``||Omega e_i|| = 1`` and ``E ||Omega x||^2 = ||x||^2``.
    """
    d, n, zeta = int(d), int(n), int(zeta)
    if not (1 <= zeta <= d <= n):
        raise ValueError(f"need 1 <= zeta <= d <= n, got zeta={zeta}, d={d}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    rows = _distinct_rows(rng, n, d, zeta)
    signs = rng.integers(0, 2, size=(n, zeta), dtype=np.int8) * 2 - 1
    rows.setflags(write=False)
    signs.setflags(write=False)
    data = signs.astype(float).ravel() / np.sqrt(zeta)
    cols = np.repeat(np.arange(n), zeta)
    mat = sp.csr_matrix((data, (rows.ravel(), cols)), shape=(d, n))
    mat.sort_indices()
    return SparseSignEmbedding(d, n, zeta, int(seed), rows, signs, mat)


def apply(omega: SparseSignEmbedding, x) -> np.ndarray:
    """Sketch a single n-vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (omega.n,):
        raise ValueError(f"expected a vector of length {omega.n}, got shape {x.shape}")
    return omega._mat @ x


def apply_block(omega: SparseSignEmbedding, x_block) -> np.ndarray:
    """Sketch the columns of an ``n x j`` block."""
    x_block = np.asarray(x_block, dtype=float)
    if x_block.ndim != 2 or x_block.shape[0] != omega.n:
        raise ValueError(f"expected an array with {omega.n} rows, got shape {x_block.shape}")
    out = np.empty((omega.d, x_block.shape[1]))
    for c in range(x_block.shape[1]):
        out[:, c] = omega._mat @ np.ascontiguousarray(x_block[:, c])
    return out


def sketch_norm(omega: SparseSignEmbedding, x) -> float:
    return float(np.linalg.norm(apply(omega, x)))


def subspace_distortion(omega: SparseSignEmbedding, basis) -> float:
    """Measured ``epsilon`` of ``omega`` on ``span(basis)``.

    The smallest ``eps`` with ``(1-eps)||x||^2 <= ||Omega x||^2 <= (1+eps)||x||^2``
    for every ``x`` in the span, from the singular values of ``Omega Q``
    where ``Q`` is an orthonormal basis of the span.  Diagnostic only.
    """
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    q, _ = np.linalg.qr(basis)
    sv = np.linalg.svd(apply_block(omega, q), compute_uv=False)
    return float(max(sv[0] ** 2 - 1.0, 1.0 - sv[-1] ** 2))
