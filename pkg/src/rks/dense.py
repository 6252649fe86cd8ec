"""Small dense kernels used on the projected (m x m) problems.

Everything here works in dimensions bounded by the Krylov or sketch size, so
the routines favour clarity and numerical robustness over blocking.  All
functions are pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(float).eps


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class SchurConvergenceError(np.linalg.LinAlgError):
    pass


class ReorderError(np.linalg.LinAlgError):
    """Raised when swapping two adjacent diagonal blocks is ill-conditioned."""

    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


@dataclass
class RealSchurForm:
    """Orthonormal ``q`` and quasi-upper-triangular ``t`` with ``b = q t q^T``."""

    q: np.ndarray
    t: np.ndarray
    block_starts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.block_starts:
            self.block_starts = block_structure(self.t)

    @property
    def blocks(self):
        """(start, size) for every diagonal block."""
        m = self.t.shape[0]
        ends = self.block_starts[1:] + [m]
        return [(s, e - s) for s, e in zip(self.block_starts, ends)]

    def eigenvalues(self):
        return quasi_triangular_eigenvalues(self.t, self.block_starts)


@dataclass
class EigenPairsSmall:
    values: np.ndarray
    vectors: np.ndarray
    clustered: np.ndarray


def _house(x):
    """Householder vector ``v`` (v[0] = 1) and ``beta`` with (I - beta v v^T) x = alpha e_1.

    ``alpha`` is chosen nonnegative so that reflectors never flip an
    already-reduced column.
    """
    x = np.asarray(x, dtype=float)
    sigma = float(x[1:] @ x[1:])
    v = x.copy()
    v[0] = 1.0
    if sigma == 0.0:
        if x[0] >= 0.0:
            return v, 0.0, x[0]
        return v, 2.0, -x[0]
    mu = math.sqrt(x[0] * x[0] + sigma)
    if x[0] <= 0.0:
        v0 = x[0] - mu
    else:
        v0 = -sigma / (x[0] + mu)
    beta = 2.0 * v0 * v0 / (sigma + v0 * v0)
    v[1:] = x[1:] / v0
    return v, beta, mu


def householder_qr(a, full=False, check_rank=True):
    """Householder QR of a tall matrix with a nonnegative diagonal in ``r``.

    Parameters
    ----------
    a : (d, j) array with d >= j
    full : bool
        Return the square (d, d) orthogonal factor instead of the thin one.
    check_rank : bool
        Raise :class:`RankDeficiencyError` when some ``|r[i, i]|`` falls
        below ``1e-14 * ||a||_F``.

    Returns
    -------
    q, r
    """
    a = np.array(a, dtype=float, order="F")
    if a.ndim != 2:
        raise ValueError("householder_qr expects a 2-d array")
    d, j = a.shape
    if d < j:
        raise ValueError(f"householder_qr needs a tall matrix, got {d}x{j}")
    if not np.all(np.isfinite(a)):
        raise ValueError("householder_qr: non-finite input")
    anorm = np.linalg.norm(a)
    vs = []
    for i in range(j):
        v, beta, _ = _house(a[i:, i])
        if beta != 0.0:
            a[i:, i:] -= beta * np.outer(v, v @ a[i:, i:])
        a[i + 1:, i] = 0.0
        vs.append((v, beta))
    r = np.triu(a[:j, :j])
    ncols = d if full else j
    q = np.eye(d, ncols, order="F")
    for i in range(j - 1, -1, -1):
        v, beta = vs[i]
        if beta != 0.0:
            q[i:, i:] -= beta * np.outer(v, v @ q[i:, i:])
    # the reflector sign convention already gives r[i,i] >= 0 except for
    # exact-zero pivots; enforce it explicitly
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    r *= signs[:, None]
    q[:, :j] *= signs[None, :]
    if check_rank and j > 0:
        small = np.abs(np.diag(r)) < 1e-14 * anorm if anorm > 0 else np.ones(j, bool)
        if np.any(small):
            raise RankDeficiencyError(
                f"rank-deficient input: |r[{int(np.argmax(small))},"
                f"{int(np.argmax(small))}]| below 1e-14*||a||")
    return q, r


def hessenberg_reduce(b):
    """Orthogonal reduction ``q^T b q = h`` with ``h`` upper Hessenberg."""
    h = np.array(b, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("hessenberg_reduce expects a square matrix")
    if not np.all(np.isfinite(h)):
        raise ValueError("hessenberg_reduce: non-finite input")
    m = h.shape[0]
    q = np.eye(m)
    for k in range(m - 2):
        x = h[k + 1:, k]
        if not np.any(x[1:]):
            continue
        v, beta, _ = _house(x)
        h[k + 1:, :] -= beta * np.outer(v, v @ h[k + 1:, :])
        h[:, k + 1:] -= beta * np.outer(h[:, k + 1:] @ v, v)
        q[:, k + 1:] -= beta * np.outer(q[:, k + 1:] @ v, v)
    h[np.tril_indices(m, -2)] = 0.0
    return q, h


def standardize_2x2(a, b, c, d):
    """Schur factorization of a real 2x2 block (LAPACK ``dlanv2``).

    Returns ``(aa, bb, cc, dd, cs, sn)`` such that::

        [a b]   [cs -sn] [aa bb] [ cs sn]
        [c d] = [sn  cs] [cc dd] [-sn cs]

    where either ``cc == 0`` (real eigenvalues) or ``aa == dd`` and
    ``bb * cc < 0`` (complex-conjugate pair).
    """
    multpl = 4.0
    if c == 0.0:
        cs, sn = 1.0, 0.0
    elif b == 0.0:
        cs, sn = 0.0, 1.0
        a, d = d, a
        b, c = -c, 0.0
    elif (a - d) == 0.0 and math.copysign(1.0, b) != math.copysign(1.0, c):
        cs, sn = 1.0, 0.0
    else:
        temp = a - d
        p = 0.5 * temp
        bcmax = max(abs(b), abs(c))
        bcmis = min(abs(b), abs(c)) * math.copysign(1.0, b) * math.copysign(1.0, c)
        scale = max(abs(p), bcmax)
        z = (p / scale) * p + (bcmax / scale) * bcmis
        if z >= multpl * EPS:
            # real eigenvalues
            z = p + math.copysign(math.sqrt(scale) * math.sqrt(z), p)
            a = d + z
            d = d - (bcmax / z) * bcmis
            tau = math.hypot(c, z)
            cs = z / tau
            sn = c / tau
            b = b - c
            c = 0.0
        else:
            # complex or almost equal real eigenvalues: equalize the diagonal
            sigma = b + c
            tau = math.hypot(sigma, temp)
            cs = math.sqrt(0.5 * (1.0 + abs(sigma) / tau))
            sn = -(p / (tau * cs)) * math.copysign(1.0, sigma)
            aa = a * cs + b * sn
            bb = -a * sn + b * cs
            cc = c * cs + d * sn
            dd = -c * sn + d * cs
            a = aa * cs + cc * sn
            b = bb * cs + dd * sn
            c = -aa * sn + cc * cs
            d = -bb * sn + dd * cs
            temp = 0.5 * (a + d)
            a = d = temp
            if c != 0.0:
                if b != 0.0:
                    if math.copysign(1.0, b) == math.copysign(1.0, c):
                        # real eigenvalues after all
                        sab = math.sqrt(abs(b))
                        sac = math.sqrt(abs(c))
                        p = math.copysign(sab * sac, c)
                        tau = 1.0 / math.sqrt(abs(b + c))
                        a = temp + p
                        d = temp - p
                        b = b - c
                        c = 0.0
                        cs1 = sab * tau
                        sn1 = sac * tau
                        temp = cs * cs1 - sn * sn1
                        sn = cs * sn1 + sn * cs1
                        cs = temp
                else:
                    b, c = -c, 0.0
                    cs, sn = -sn, cs
    return a, b, c, d, cs, sn


def _apply_rotation(t, q, i, cs, sn):
    """t <- G^T t G and q <- q G for G acting on coordinates (i, i+1)."""
    g = np.array([[cs, -sn], [sn, cs]])
    t[i:i + 2, :] = g.T @ t[i:i + 2, :]
    t[:, i:i + 2] = t[:, i:i + 2] @ g
    if q is not None:
        q[:, i:i + 2] = q[:, i:i + 2] @ g


def _standardize_block(t, q, i):
    a, b, c, d, cs, sn = standardize_2x2(t[i, i], t[i, i + 1], t[i + 1, i], t[i + 1, i + 1])
    _apply_rotation(t, q, i, cs, sn)
    t[i, i], t[i, i + 1], t[i + 1, i], t[i + 1, i + 1] = a, b, c, d


def block_structure(t):
    """Start indices of the 1x1/2x2 diagonal blocks of a quasi-triangular matrix."""
    m = t.shape[0]
    starts = []
    i = 0
    while i < m:
        starts.append(i)
        if i + 1 < m and t[i + 1, i] != 0.0:
            i += 2
        else:
            i += 1
    return starts


def quasi_triangular_eigenvalues(t, block_starts=None):
    if block_starts is None:
        block_starts = block_structure(t)
    m = t.shape[0]
    vals = np.empty(m, dtype=complex)
    for s in block_starts:
        if s + 1 < m and t[s + 1, s] != 0.0:
            re = 0.5 * (t[s, s] + t[s + 1, s + 1])
            im = math.sqrt(abs(t[s, s + 1])) * math.sqrt(abs(t[s + 1, s]))
            vals[s] = complex(re, im)
            vals[s + 1] = complex(re, -im)
        else:
            vals[s] = t[s, s]
    return vals


def real_schur(b, max_sweeps_per_eig=30):
    """Real Schur form via Hessenberg reduction and Francis double-shift QR.

    A subdiagonal entry is deflated once
    ``|h[i+1,i]| <= eps * (|h[i,i]| + |h[i+1,i+1]|)``.  2x2 blocks are put in
    standard form, and blocks with real eigenvalues are split, so every
    remaining nonzero subdiagonal belongs to a complex-conjugate pair.

    Raises
    ------
    SchurConvergenceError
        After ``max_sweeps_per_eig * m`` double-shift sweeps.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("real_schur expects a square matrix")
    m = b.shape[0]
    if m == 0:
        raise ValueError("real_schur expects m >= 1")
    if not np.all(np.isfinite(b)):
        raise ValueError("real_schur: non-finite input")
    q, h = hessenberg_reduce(b)
    if m == 1:
        return RealSchurForm(q, h, [0])
    hnorm = np.linalg.norm(h)
    sweep_cap = max_sweeps_per_eig * m
    total = 0
    its = 0
    hi = m - 1
    while hi >= 0:
        if hi == 0:
            break
        l = hi
        while l > 0:
            s = abs(h[l - 1, l - 1]) + abs(h[l, l])
            if s == 0.0:
                s = hnorm
            if abs(h[l, l - 1]) <= EPS * s:
                h[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            hi -= 1
            its = 0
            continue
        if l == hi - 1:
            _standardize_block(h, q, l)
            hi -= 2
            its = 0
            continue
        total += 1
        its += 1
        if total > sweep_cap:
            raise SchurConvergenceError(
                f"Francis QR did not converge after {sweep_cap} sweeps "
                f"(active window [{l}, {hi}], |h[hi,hi-1]|={abs(h[hi, hi - 1]):.3e})")
        if its % 10 == 0:
            # exceptional shift
            sh = abs(h[hi, hi - 1]) + abs(h[hi - 1, hi - 2])
            tr = 1.5 * sh
            det = sh * sh
        else:
            tr = h[hi - 1, hi - 1] + h[hi, hi]
            det = h[hi - 1, hi - 1] * h[hi, hi] - h[hi - 1, hi] * h[hi, hi - 1]
        x = h[l, l] * h[l, l] + h[l, l + 1] * h[l + 1, l] - tr * h[l, l] + det
        y = h[l + 1, l] * (h[l, l] + h[l + 1, l + 1] - tr)
        z = h[l + 1, l] * h[l + 2, l + 1]
        for k in range(l, hi - 1):
            v, beta, _ = _house(np.array([x, y, z]))
            if beta != 0.0:
                c0 = max(l, k - 1)
                h[k:k + 3, c0:] -= beta * np.outer(v, v @ h[k:k + 3, c0:])
                r1 = min(k + 3, hi) + 1
                h[:r1, k:k + 3] -= beta * np.outer(h[:r1, k:k + 3] @ v, v)
                q[:, k:k + 3] -= beta * np.outer(q[:, k:k + 3] @ v, v)
            if k > l:
                h[k + 1, k - 1] = 0.0
                h[k + 2, k - 1] = 0.0
            x = h[k + 1, k]
            y = h[k + 2, k]
            if k < hi - 2:
                z = h[k + 3, k]
        v, beta, _ = _house(np.array([x, y]))
        if beta != 0.0:
            k = hi - 1
            h[k:k + 2, k - 1:] -= beta * np.outer(v, v @ h[k:k + 2, k - 1:])
            h[:hi + 1, k:k + 2] -= beta * np.outer(h[:hi + 1, k:k + 2] @ v, v)
            q[:, k:k + 2] -= beta * np.outer(q[:, k:k + 2] @ v, v)
        h[hi, hi - 2] = 0.0
    h[np.tril_indices(m, -2)] = 0.0
    return RealSchurForm(q, h, block_structure(h))


def _sylvester_small(a, b, c):
    """Solve ``a x - x b = c`` for blocks of order 1 or 2 (Kronecker form)."""
    p, r = a.shape[0], b.shape[0]
    k = np.kron(np.eye(r), a) - np.kron(b.T, np.eye(p))
    rhs = c.reshape(-1, order="F")
    try:
        x = np.linalg.solve(k, rhs)
    except np.linalg.LinAlgError:
        return None, np.inf
    return x.reshape((p, r), order="F"), np.linalg.cond(k)


def swap_blocks(t, q, i, p, r):
    """Swap adjacent diagonal blocks of sizes ``p`` and ``r`` starting at ``i``.

    Direct swapping: solve the small Sylvester equation for the coupling,
    then apply the orthogonal factor of ``[-x; I]`` (Bai & Demmel).  ``t``
    and ``q`` are updated in place.
    """
    n = p + r
    sl = slice(i, i + n)
    blk = t[sl, sl].copy()
    bnorm = np.linalg.norm(blk)
    if p == 1 and r == 1:
        t11, t12, t22 = blk[0, 0], blk[0, 1], blk[1, 1]
        # Givens rotation that maps the eigenvector of t22 onto e_1
        cs, sn = t12, t22 - t11
        nrm = math.hypot(cs, sn)
        if nrm == 0.0:
            return
        g = np.array([[cs / nrm, -sn / nrm], [sn / nrm, cs / nrm]])
    else:
        a11 = blk[:p, :p]
        a22 = blk[p:, p:]
        a12 = blk[:p, p:]
        x, cond = _sylvester_small(a11, a22, a12)
        if x is None or not np.all(np.isfinite(x)) or cond > 1.0 / (100 * EPS):
            raise ReorderError(
                f"ill-conditioned swap of blocks at {i} (sizes {p},{r})", pair=(i, i + p))
        g, _ = householder_qr(np.vstack([-x, np.eye(r)]), full=True, check_rank=False)
    new = g.T @ blk @ g
    low = new[r:, :r]
    if np.linalg.norm(low) > max(10.0 * EPS * bnorm, np.finfo(float).tiny) * 10.0:
        raise ReorderError(
            f"swap of blocks at {i} (sizes {p},{r}) lost accuracy: "
            f"residual {np.linalg.norm(low):.2e}", pair=(i, i + p))
    t[sl, :] = g.T @ t[sl, :]
    t[:, sl] = t[:, sl] @ g
    q[:, sl] = q[:, sl] @ g
    t[i + r:i + n, i:i + r] = 0.0
    if r == 2:
        t[i + 2:i + n, i:i + 2] = 0.0
        _standardize_block(t, q, i)
    elif r == 1 and n > 1:
        t[i + 1:i + n, i] = 0.0
    if p == 2:
        _standardize_block(t, q, i + r)
    m = t.shape[0]
    t[np.tril_indices(m, -2)] = 0.0


def reorder_schur(s, selected, key=None):
    """Move the selected eigenvalues to the leading diagonal blocks.

    Parameters
    ----------
    s : RealSchurForm
    selected : callable or sequence of bool
        Predicate on complex eigenvalues (must be closed under conjugation),
        or one flag per diagonal position.
    key : callable, optional
        When given, the selected blocks are additionally sorted by
        ``key(eigenvalue)`` (ascending) in the leading part.

    Returns
    -------
    RealSchurForm with ``q`` composed with the reordering transform.
    """
    t = s.t.copy()
    q = s.q.copy()
    m = t.shape[0]
    vals = quasi_triangular_eigenvalues(t)
    if callable(selected):
        flags = np.array([bool(selected(v)) for v in vals])
    else:
        flags = np.asarray(selected, dtype=bool)
        if flags.shape != (m,):
            raise ValueError("selection mask has the wrong length")
    for st, sz in RealSchurForm(q, t).blocks:
        if sz == 2 and flags[st] != flags[st + 1]:
            raise ValueError(f"selection splits the conjugate pair at {st}")

    # Each block is tracked by an identity tag so that re-standardization
    # (which may split a 2x2 block whose eigenvalues turned real) is handled.
    starts = block_structure(t)
    sizes = [2 if (st + 1 < m and t[st + 1, st] != 0.0) else 1 for st in starts]
    sel = [bool(flags[st]) for st in starts]
    keys = [key(vals[st]) if key is not None else 0.0 for st in starts]
    wanted = [idx for idx, f in enumerate(sel) if f]
    if key is not None:
        wanted.sort(key=lambda idx: keys[idx])
    order = list(range(len(starts)))  # order[pos] = block tag at block-position pos
    dest = 0
    for tag in wanted:
        pos = order.index(tag)
        while pos > dest:
            prev = order[pos - 1]
            start = sum(sizes[order[x]] for x in range(pos - 1))
            swap_blocks(t, q, start, sizes[prev], sizes[tag])
            # re-standardization may split a nearly-real pair; refuse rather
            # than silently corrupt the bookkeeping
            for st, sz in ((start, sizes[tag]), (start + sizes[tag], sizes[prev])):
                if (sz == 2) != (st + 1 < m and t[st + 1, st] != 0.0):
                    raise ReorderError(f"block at {st} changed size during a swap",
                                       pair=(start, start + sizes[tag]))
            order[pos - 1], order[pos] = tag, prev
            pos -= 1
        dest += 1
    t[np.tril_indices(m, -2)] = 0.0
    return RealSchurForm(q, t, block_structure(t))


def eig_quasi_triangular(t, block_starts=None):
    """Eigenpairs of a quasi-upper-triangular matrix by back-substitution.

    Returns an :class:`EigenPairsSmall` with unit-norm complex eigenvectors.
    When a pivot ``t[i,i] - lambda`` vanishes (repeated eigenvalues), it is
    replaced by ``1e-13 * ||t||`` and the pair is flagged as clustered.
    """
    t = np.asarray(t, dtype=float)
    m = t.shape[0]
    if block_starts is None:
        block_starts = block_structure(t)
    vals = quasi_triangular_eigenvalues(t, block_starts)
    tnorm = np.linalg.norm(t)
    tiny = 1e-13 * tnorm if tnorm > 0 else 1e-300
    vecs = np.zeros((m, m), dtype=complex)
    clustered = np.zeros(m, dtype=bool)
    ends = block_starts[1:] + [m]
    sizes = {s: e - s for s, e in zip(block_starts, ends)}
    for bi, s in enumerate(block_starts):
        sz = sizes[s]
        for col in range(s, s + sz):
            lam = vals[col]
            y = np.zeros(m, dtype=complex)
            if sz == 1:
                y[s] = 1.0
            else:
                a, b_, c, d = t[s, s], t[s, s + 1], t[s + 1, s], t[s + 1, s + 1]
                # null vector of [[a-lam, b], [c, d-lam]]
                v1 = np.array([b_, lam - a])
                v2 = np.array([lam - d, c])
                y[s:s + 2] = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
            flag = False
            for pb in range(bi - 1, -1, -1):
                ps = block_starts[pb]
                psz = sizes[ps]
                rhs = -(t[ps:ps + psz, ps + psz:s + sz] @ y[ps + psz:s + sz])
                if psz == 1:
                    piv = t[ps, ps] - lam
                    if abs(piv) < tiny:
                        piv = tiny
                        flag = True
                    y[ps] = rhs[0] / piv
                else:
                    blk = t[ps:ps + 2, ps:ps + 2] - lam * np.eye(2)
                    det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
                    if abs(det) < tiny * tiny:
                        blk = blk + tiny * np.eye(2)
                        flag = True
                    y[ps:ps + 2] = np.linalg.solve(blk, rhs)
            nrm = np.linalg.norm(y)
            vecs[:, col] = y / nrm
            clustered[col] = flag
    return EigenPairsSmall(vals, vecs, clustered)


def upper_tri_inverse_apply(r, x):
    """Return ``x @ inv(r)`` for upper-triangular ``r`` by column back-substitution."""
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    j = r.shape[0]
    if r.shape != (j, j) or x.shape[1] != j:
        raise ValueError("dimension mismatch in upper_tri_inverse_apply")
    diag = np.abs(np.diag(r))
    rnorm = np.linalg.norm(r)
    if j and np.any(diag <= 1e-14 * rnorm):
        raise RankDeficiencyError("near-singular triangular factor")
    out = np.empty_like(x, order="F")
    for i in range(j):
        col = x[:, i].copy()
        if i:
            col -= out[:, :i] @ r[:i, i]
        out[:, i] = col / r[i, i]
    return out
