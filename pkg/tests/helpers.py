"""Random test problems shared by several test modules."""

import numpy as np
import scipy.sparse as sp

from rks.sparse_io import CsrMatrix


def outlier_matrix(n, seed, n_out=8, n_pairs=2, bulk=1.0, noise=0.05, density=None):
    """Sparse nonsymmetric matrix with a few well-separated outlying eigenvalues.

    The bulk of the spectrum sits in ``[-bulk, bulk]``; ``n_out`` real outliers
    and ``n_pairs`` complex-conjugate pairs lie at modulus between 2 and 5.
    A random sparse perturbation of size ``noise`` mixes everything up.
    """
    rng = np.random.default_rng(seed)
    diag = rng.uniform(-bulk, bulk, n)
    outl = rng.uniform(2.0, 5.0, n_out) * rng.choice([-1.0, 1.0], n_out)
    diag[:n_out] = outl
    mat = sp.lil_matrix((n, n))
    mat.setdiag(diag)
    pos = n_out
    for _ in range(n_pairs):
        re = rng.uniform(2.0, 4.0) * rng.choice([-1.0, 1.0])
        im = rng.uniform(0.3, 1.5)
        mat[pos, pos] = re
        mat[pos + 1, pos + 1] = re
        mat[pos, pos + 1] = im
        mat[pos + 1, pos] = -im
        pos += 2
    density = density if density is not None else min(1.0, 5.0 / n)
    pert = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    full = (mat.tocsr() + noise * pert).tocsr()
    # a random permutation hides the block structure
    perm = rng.permutation(n)
    full = full[perm][:, perm]
    return CsrMatrix.from_scipy(full)


def random_sparse(n, seed, density=0.05):
    rng = np.random.default_rng(seed)
    mat = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    mat = mat + sp.diags(rng.uniform(-3, 3, n))
    return CsrMatrix.from_scipy(mat)


def dense_apply_columns(a, x):
    """``A @ X`` column by column through the sparse matvec."""
    return np.column_stack([a @ x[:, i] for i in range(x.shape[1])])


def random_krylov_decomposition(a, omega, k, seed, m=None):
    """A sketch-orthonormal Krylov decomposition of order ``k`` that is not Arnoldi.

    Expands from a random start, then rotates by a random orthogonal matrix
    so the coupling row is dense and ``B`` is full.
    """
    from rks.krylov import init_decomposition

    rng = np.random.default_rng(seed)
    m = k if m is None else m
    dec = init_decomposition(a, omega, rng.standard_normal(a.shape[0]), m=m,
                             rng=np.random.default_rng(seed + 1))
    dec.extend(a, k)
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    dec.apply_similarity(q)
    return dec


def skew_basis(dec, cond, seed, mix=0.3):
    """Apply a nonorthogonal change of basis ``X = Q T D`` to ``dec``.

    ``Q`` is orthogonal, ``T`` unit upper triangular with entries of size ``mix`` and
    ``D`` a diagonal of powers of two spanning ``cond``. ``U <- U X``, ``S <- S X``,
    ``B <- X^-1 B X`` and ``b <- X^T b`` keep ``A U = U B + u b^T``. Scaling by powers
    of two is exact, so rounding in the transformed ``B`` is bounded by ``cond(T)``
    rather than ``cond``; a dense ``X`` of the same condition would itself perturb the
    Ritz values by ``eps * cond**2``.
    """
    rng = np.random.default_rng(seed)
    j = dec.j
    q, _ = np.linalg.qr(rng.standard_normal((j, j)))
    t = np.eye(j) + mix * np.triu(rng.standard_normal((j, j)), 1)
    d = 2.0 ** -np.round(np.linspace(0.0, np.log2(cond), j))
    u, s, b, row = dec.U[:, :j], dec.S[:, :j], dec.H[:j, :j], dec.H[j, :j]
    for x in (q, t):
        u, s, b, row = u @ x, s @ x, np.linalg.solve(x, b @ x), row @ x
    u, s, b, row = u * d, s * d, b * d / d[:, None], row * d
    dec.U[:, :j], dec.S[:, :j], dec.H[:j, :j], dec.H[j, :j] = u, s, b, row
    return q @ t @ np.diag(d)
