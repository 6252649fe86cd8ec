"""Independent reference computations for the tests.

Nothing here shares code with the package: the eigenvalue oracle is a
Givens-based Hessenberg reduction followed by single-shift complex QR with
Wilkinson shifts, and the polynomial oracle combines Faddeev-LeVerrier with
Durand-Kerner root finding.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment


def givens_hessenberg(a):
    """Upper Hessenberg form by Givens rotations (similarity, complex output)."""
    h = np.array(a, dtype=complex)
    n = h.shape[0]
    for col in range(n - 2):
        for row in range(n - 1, col + 1, -1):
            x, y = h[row - 1, col], h[row, col]
            if y == 0:
                continue
            r = np.hypot(abs(x), abs(y))
            c, s = x / r, y / r
            g = np.array([[np.conj(c), np.conj(s)], [-s, c]])
            h[[row - 1, row], :] = g @ h[[row - 1, row], :]
            h[:, [row - 1, row]] = h[:, [row - 1, row]] @ g.conj().T
            h[row, col] = 0.0
    return h


def _wilkinson(h, hi):
    a, b, c, d = h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi]
    tr, det = a + d, a * d - b * c
    disc = np.sqrt(tr * tr / 4 - det)
    l1, l2 = tr / 2 + disc, tr / 2 - disc
    return l1 if abs(l1 - d) < abs(l2 - d) else l2


def qr_eigenvalues(a, max_iter_per_eig=100):
    """Eigenvalues of a real or complex square matrix by shifted complex QR."""
    h = givens_hessenberg(a)
    n = h.shape[0]
    eigs = []
    hi = n - 1
    it = 0
    scale = max(np.abs(h).max(), 1e-300)
    while hi >= 0:
        if hi == 0:
            eigs.append(h[0, 0])
            break
        # find active block [lo, hi]
        lo = hi
        while lo > 0 and abs(h[lo, lo - 1]) > 1e-15 * (abs(h[lo, lo]) + abs(h[lo - 1, lo - 1]) + 1e-300 * scale):
            lo -= 1
        if lo == hi:
            eigs.append(h[hi, hi])
            hi -= 1
            it = 0
            continue
        it += 1
        if it > max_iter_per_eig:
            raise RuntimeError("oracle QR did not converge")
        mu = _wilkinson(h, hi) if it % 11 else h[hi, hi] + abs(h[hi, hi - 1])
        blk = slice(lo, hi + 1)
        sub = h[blk, blk] - mu * np.eye(hi - lo + 1)
        rots = []
        for i in range(hi - lo):
            x, y = sub[i, i], sub[i + 1, i]
            r = np.hypot(abs(x), abs(y))
            if r == 0:
                rots.append(np.eye(2, dtype=complex))
                continue
            c, s = x / r, y / r
            g = np.array([[np.conj(c), np.conj(s)], [-s, c]])
            sub[i:i + 2, :] = g @ sub[i:i + 2, :]
            rots.append(g)
        for i, g in enumerate(rots):
            sub[:, i:i + 2] = sub[:, i:i + 2] @ g.conj().T
        h[blk, blk] = sub + mu * np.eye(hi - lo + 1)
        # only the active block matters for the eigenvalues
    return np.array(eigs[::-1])


def faddeev_leverrier(a):
    """Characteristic polynomial coefficients, highest degree first (monic)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    m = np.zeros_like(a)
    for k in range(1, n + 1):
        m = a @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(a @ m) / k)
    return np.array(coeffs)


def durand_kerner(coeffs, iters=2000, tol=1e-15):
    c = np.asarray(coeffs, dtype=complex) / coeffs[0]
    n = c.size - 1
    radius = 1 + np.max(np.abs(c[1:]))
    z = radius * np.exp(2j * np.pi * (np.arange(n) + 0.25) / n)
    for _ in range(iters):
        old = z.copy()
        for i in range(n):
            num = np.polyval(c, z[i])
            den = np.prod([z[i] - z[j] for j in range(n) if j != i])
            z[i] = z[i] - num / den
        if np.max(np.abs(z - old)) <= tol * np.max(np.abs(z)):
            break
    return z


def multiset_distance(a, b):
    """Max distance under the optimal one-to-one matching of two complex sets."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d = np.abs(a[:, None] - b[None, :])
    i, j = linear_sum_assignment(d)
    return float(d[i, j].max()) if len(i) else 0.0


def nearest_distance(values, reference):
    """For each value, distance to the closest entry of ``reference``."""
    values = np.asarray(values, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    return np.min(np.abs(values[:, None] - reference[None, :]), axis=1)


def sketched_sin_angle(omega_mat, x, y):
    """Sine of the largest principal angle between span(Omega x) and span(Omega y)."""
    qa, _ = np.linalg.qr(omega_mat @ x)
    qb, _ = np.linalg.qr(omega_mat @ y)
    return float(np.linalg.norm(qb - qa @ (qa.T @ qb), 2))


def mgs_arnoldi(a, v0, m):
    """Textbook modified Gram-Schmidt Arnoldi with full reorthogonalization."""
    n = a.shape[0]
    v = np.zeros((n, m + 1))
    h = np.zeros((m + 1, m))
    v[:, 0] = v0 / np.linalg.norm(v0)
    for j in range(m):
        w = a @ v[:, j]
        for _ in range(2):
            for i in range(j + 1):
                c = v[:, i] @ w
                h[i, j] += c
                w = w - c * v[:, i]
        h[j + 1, j] = np.linalg.norm(w)
        v[:, j + 1] = w / h[j + 1, j]
    return v, h


def relative_matching_distance(a, b):
    """Max of ``|a_i - b_j| / |b_j|`` under the matching that minimises that maximum's sum."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d = np.abs(a[:, None] - b[None, :]) / np.maximum(np.abs(b[None, :]), 1e-300)
    i, j = linear_sum_assignment(d)
    return float(d[i, j].max()) if len(i) else 0.0


def measured_distortion(omega_mat, basis):
    """Smallest eps with (1-eps)|x|^2 <= |Omega x|^2 <= (1+eps)|x|^2 on span(basis)."""
    q, _ = np.linalg.qr(np.asarray(basis, dtype=float))
    sv = np.linalg.svd(omega_mat @ q, compute_uv=False)
    return float(max(sv[0] ** 2 - 1.0, 1.0 - sv[-1] ** 2))
