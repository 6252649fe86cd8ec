"""Krylov decompositions ``A U = U B + u b^T`` and their expansion.

Two variants share the storage and the restart plumbing:

* :class:`SketchedKrylovDecomposition` keeps ``(U u)`` sketch-orthonormal,
  i.e. ``(Omega U, Omega u)`` has orthonormal columns, and orthogonalizes
  with coefficients computed from sketches only (randomized Gram-Schmidt).
* :class:`OrthonormalKrylovDecomposition` keeps ``(U u)`` orthonormal in the
  Euclidean sense using classical Gram-Schmidt applied twice.

Storage is preallocated for ``m + 1`` basis vectors.  With ``j`` the current
order, ``U[:, :j]`` is the basis, ``U[:, j]`` the residual vector ``u``,
``H[:j, :j]`` the Rayleigh quotient ``B`` and ``H[j, :j]`` the coupling row.

Converged vectors can be moved into a :class:`LockedSet`.  The expansion then
applies the deflated operator ``(I - U_q S_q^T Omega) A`` and the coupling
``C = S_q^T Omega A U`` is carried along, so that the full relation reads
``A U = U B + u b^T + U_q C``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dense
from .sketch import SparseSignEmbedding

KAPPA_TOL = 1e-8
BREAKDOWN_TOL = 1e-12
REORTH_RATIO = 0.7


class HappyBreakdown(Exception):
    """The expansion found an invariant subspace; ``dec.b_row`` is zero."""

    def __init__(self, dec, msg="invariant subspace reached"):
        super().__init__(msg)
        self.dec = dec


@dataclass
class OpCounters:
    """Large-dimension work, counted in units of one length-n vector operation."""

    spmv: int = 0
    big_axpy: int = 0
    big_dot: int = 0
    sketch: int = 0
    restarts: int = 0
    whitenings: int = 0
    breakdowns: int = 0

    def as_dict(self):
        return dict(spmv_count=self.spmv, big_axpy_count=self.big_axpy,
                    big_dot_count=self.big_dot, sketch_count=self.sketch,
                    restarts=self.restarts, whitenings=self.whitenings,
                    breakdowns=self.breakdowns)


@dataclass
class LockedSet:
    """Converged Schur vectors ``U_q`` with sketch ``S_q`` and factor ``T_qq``."""

    u_locked: np.ndarray
    s_locked: np.ndarray | None
    t_locked: np.ndarray
    blocks: list = field(default_factory=list)  # sizes of the locked batches

    @classmethod
    def empty(cls, n, d=None):
        return cls(np.zeros((n, 0)), None if d is None else np.zeros((d, 0)), np.zeros((0, 0)))

    @property
    def q(self):
        return self.u_locked.shape[1]


def _orthonormal_sketch_error(s):
    g = s.T @ s
    g[np.diag_indices_from(g)] -= 1.0
    return float(np.linalg.norm(g))


class KrylovDecompositionBase:
    """Shared storage and the operations that do not depend on the inner product."""

    def __init__(self, n, m, d=None, counters=None, rng=None):
        self.n = int(n)
        self.m = int(m)
        self.U = np.zeros((self.n, self.m + 1), order="F")
        self.S = None if d is None else np.zeros((int(d), self.m + 1), order="F")
        self.H = np.zeros((self.m + 1, self.m))
        self.j = 0
        self.locked = LockedSet.empty(self.n, d)
        self.C = np.zeros((0, self.m))
        self.counters = counters if counters is not None else OpCounters()
        self.rng = rng if rng is not None else np.random.default_rng(0)

    # -- views ---------------------------------------------------------------
    @property
    def u_basis(self):
        return self.U[:, :self.j]

    @property
    def u_last(self):
        return self.U[:, self.j]

    @property
    def s_basis(self):
        return None if self.S is None else self.S[:, :self.j]

    @property
    def s_last(self):
        return None if self.S is None else self.S[:, self.j]

    @property
    def b(self):
        return self.H[:self.j, :self.j]

    @property
    def b_row(self):
        return self.H[self.j, :self.j]

    @property
    def coupling(self):
        return self.C[:, :self.j]

    @property
    def capacity(self):
        """Largest order the preallocated storage supports."""
        return self.m

    # -- inner-product dependent hooks ---------------------------------------
    def _measure(self, x):
        raise NotImplementedError

    def _project(self, w, jj):
        """Remove the components of ``w`` along locked and active vectors 0..jj-1.

        Returns ``(w, h, c, meas)`` with ``meas`` the representation of ``w``
        used for norms (the sketch, or ``w`` itself).
        """
        raise NotImplementedError

    def _set_column(self, i, vec, meas):
        self.U[:, i] = vec
        if self.S is not None:
            self.S[:, i] = meas

    # -- expansion -----------------------------------------------------------
    def set_start(self, u0):
        """Order-0 state with ``u = u0 / ||u0||`` in the working norm."""
        u0 = np.asarray(u0, dtype=float)
        if u0.shape != (self.n,):
            raise ValueError(f"start vector must have length {self.n}")
        self.j = 0
        self.H[:] = 0.0
        self.C = np.zeros((self.locked.q, self.m))
        if self.locked.q:
            u0, _, _, meas = self._project(u0.copy(), 0)
        else:
            meas = self._measure(u0)
        nrm = float(np.linalg.norm(meas))
        if not nrm > 1e-14:
            raise ValueError("start vector has (near) zero norm in the working inner product")
        self._set_column(0, u0 / nrm, meas / nrm)
        self.counters.big_axpy += 1
        self._reset_tracking()
        return self

    def _reset_tracking(self):
        pass

    def _fresh_direction(self, jj):
        """Random vector orthogonalized against the current basis, or None."""
        for _ in range(3):
            w = self.rng.standard_normal(self.n)
            w, _, _, meas = self._project(w, jj)
            w, _, _, meas = self._project(w, jj)
            nrm = float(np.linalg.norm(meas))
            if nrm > 1e-8 * np.sqrt(self.n):
                return w / nrm, meas / nrm
        return None

    def extend(self, a, target=None, on_breakdown="raise"):
        """Grow the decomposition to order ``target`` (default ``m``).

        ``on_breakdown`` is ``"raise"`` to stop with :class:`HappyBreakdown`
        when the new direction vanishes, or ``"continue"`` to carry on with a
        fresh random direction (the coupling entry is then exactly zero).
        HappyBreakdown is raised in either mode once no new direction exists.
        """
        target = self.m if target is None else int(target)
        if target > self.capacity:
            raise ValueError(f"target order {target} exceeds capacity {self.capacity}")
        while self.j < target:
            jj = self.j
            w = a @ self.U[:, jj]
            self.counters.spmv += 1
            w, h, c, meas = self._project(w, jj + 1)
            beta = float(np.linalg.norm(meas))
            scale = self._last_input_norm
            self.H[:jj + 1, jj] = h
            if self.locked.q:
                self.C[:, jj] = c
            if not beta > self.breakdown_tol * scale:
                self.H[jj + 1, jj] = 0.0
                self.counters.breakdowns += 1
                fresh = None
                if on_breakdown == "continue" and jj + 1 < min(self.n, self.m + 1):
                    fresh = self._fresh_direction(jj + 1)
                if fresh is None:
                    self._set_column(jj + 1, np.zeros(self.n), None if self.S is None
                                     else np.zeros(self.S.shape[0]))
                    self.j = jj + 1
                    raise HappyBreakdown(self)
                self._set_column(jj + 1, *fresh)
            else:
                self.H[jj + 1, jj] = beta
                self._set_column(jj + 1, w / beta, meas / beta)
            self.counters.big_axpy += 1
            self.j = jj + 1
            self._after_step()
        return self

    def _after_step(self):
        pass

    # -- Schur restart ---------------------------------------------------------
    def contract(self, q, keep, count_restart=True):
        """Truncate to the leading ``keep`` columns of the rotated basis ``U q``.

        ``q`` is orthogonal with ``q^T B q = t``; ``u`` and its sketch are kept.
        """
        j = self.j
        t = q.T @ self.H[:j, :j] @ q if not hasattr(q, "t") else q.t
        if hasattr(q, "q"):
            q = q.q
        if q.shape != (j, j) or not 0 <= keep <= j:
            raise ValueError("contract: inconsistent arguments")
        qk = q[:, :keep]
        brow = self.b_row @ qk
        self.U[:, :keep] = self.U[:, :j] @ qk
        self.counters.big_axpy += j * keep
        self.U[:, keep] = self.U[:, j]
        if self.S is not None:
            self.S[:, :keep] = self.S[:, :j] @ qk
            self.S[:, keep] = self.S[:, j]
        if self.locked.q:
            self.C[:, :keep] = self.C[:, :j] @ qk
            self.C[:, keep:] = 0.0
        self.H[:] = 0.0
        self.H[:keep, :keep] = t[:keep, :keep]
        self.H[keep, :keep] = brow
        self.j = keep
        if count_restart:
            self.counters.restarts += 1
        self._reset_tracking()
        return self

    def apply_similarity(self, q):
        """Rotate the basis by an orthogonal ``q``: ``U <- U q``, ``B <- q^T B q``."""
        j = self.j
        self.U[:, :j] = self.U[:, :j] @ q
        self.counters.big_axpy += j * j
        if self.S is not None:
            self.S[:, :j] = self.S[:, :j] @ q
        self.H[:j, :j] = q.T @ self.H[:j, :j] @ q
        self.H[j, :j] = self.H[j, :j] @ q
        if self.locked.q:
            self.C[:, :j] = self.C[:, :j] @ q

    # -- locking -------------------------------------------------------------
    def lock_prefix(self, nl):
        """Move the leading ``nl`` columns (Schur form assumed) into the locked set.

        The coupling entries ``b_row[:nl]`` are discarded; the caller is
        responsible for having checked that they are small.  Returns the
        discarded entries.
        """
        j = self.j
        if not 0 < nl <= j:
            raise ValueError("lock_prefix: nothing to lock")
        t = self.H[:j, :j]
        if np.any(t[nl:, :nl]):
            raise ValueError("lock_prefix: leading block is not invariant")
        dropped = self.H[j, :nl].copy()
        lk = self.locked
        q0 = lk.q
        t_new = np.zeros((q0 + nl, q0 + nl))
        t_new[:q0, :q0] = lk.t_locked
        t_new[:q0, q0:] = self.C[:, :nl]
        t_new[q0:, q0:] = t[:nl, :nl]
        c_new = np.zeros((q0 + nl, self.m))
        c_new[:q0, :j - nl] = self.C[:, nl:j]
        c_new[q0:, :j - nl] = t[:nl, nl:]
        lk.u_locked = np.hstack([lk.u_locked, self.U[:, :nl]])
        if self.S is not None:
            lk.s_locked = np.hstack([lk.s_locked, self.S[:, :nl]])
        lk.t_locked = t_new
        lk.blocks.append(nl)
        rest = j - nl
        self.U[:, :rest + 1] = self.U[:, nl:j + 1].copy()
        if self.S is not None:
            self.S[:, :rest + 1] = self.S[:, nl:j + 1].copy()
        h_new = np.zeros_like(self.H)
        h_new[:rest + 1, :rest] = self.H[nl:j + 1, nl:j]
        self.H = h_new
        self.C = c_new
        self.j = rest
        self._reset_tracking()
        return dropped

    # -- diagnostics -----------------------------------------------------------
    def residual_identity(self, a):
        """``||A U - U B - u b^T - U_q C||_F`` computed with explicit products."""
        j = self.j
        u = self.U[:, :j]
        au = np.column_stack([a @ u[:, i] for i in range(j)]) if j else np.zeros((self.n, 0))
        r = au - u @ self.b - np.outer(self.u_last, self.b_row)
        if self.locked.q:
            r -= self.locked.u_locked @ self.coupling
        return float(np.linalg.norm(r))

    def full_schur_basis(self):
        return np.hstack([self.locked.u_locked, self.u_basis])


class SketchedKrylovDecomposition(KrylovDecompositionBase):
    """Decomposition whose basis ``(U u)`` is orthonormal after sketching by ``omega``."""

    def __init__(self, omega: SparseSignEmbedding, m, counters=None, rng=None,
                 kappa_tol=KAPPA_TOL, breakdown_tol=BREAKDOWN_TOL, reorth_ratio=REORTH_RATIO):
        if m + 1 > omega.d:
            raise ValueError(f"sketch dimension {omega.d} cannot hold {m + 1} orthonormal sketches")
        super().__init__(omega.n, m, omega.d, counters, rng)
        self.omega = omega
        self.kappa_tol = kappa_tol
        self.breakdown_tol = breakdown_tol
        self.reorth_ratio = reorth_ratio
        self._gram_err2 = 0.0
        self._last_input_norm = 0.0

    def _measure(self, x):
        self.counters.sketch += 1
        return self.omega.apply(x)

    def _project(self, w, jj):
        z = self._measure(w)
        znorm = float(np.linalg.norm(z))
        self._last_input_norm = znorm
        lk = self.locked
        q = lk.q
        y = np.hstack([lk.s_locked, self.S[:, :jj]]) if q else self.S[:, :jj]
        coef = y.T @ z
        if float(np.linalg.norm(coef)) > self.reorth_ratio * znorm:
            # second pass in sketch space only; no extra n-dimensional work
            coef += y.T @ (z - y @ coef)
        if q:
            w -= lk.u_locked @ coef[:q]
        w -= self.U[:, :jj] @ coef[q:]
        self.counters.big_axpy += q + jj
        return w, coef[q:], coef[:q], self._measure(w)

    def _reset_tracking(self):
        s = self.S[:, :self.j + 1]
        self._gram_err2 = _orthonormal_sketch_error(s) ** 2

    def _after_step(self):
        j = self.j
        s = self.S[:, :j + 1]
        g = s[:, :j].T @ s[:, j]
        self._gram_err2 += 2.0 * float(g @ g) + (float(s[:, j] @ s[:, j]) - 1.0) ** 2
        if np.sqrt(self._gram_err2) > self.kappa_tol:
            self.reorthogonalize()

    @property
    def sketch_orthonormality_error(self):
        return _orthonormal_sketch_error(self.S[:, :self.j + 1])

    def whiten(self):
        """Make ``S`` orthonormal through ``S = QR``: ``U <- U R^-1``, ``B <- R B R^-1``."""
        j = self.j
        if j == 0:
            return self
        qf, r = dense.householder_qr(self.S[:, :j])
        self.U[:, :j] = dense.upper_tri_inverse_apply(r, self.U[:, :j])
        self.counters.big_axpy += j * (j + 1) // 2
        self.S[:, :j] = qf
        self.H[:j, :j] = dense.upper_tri_inverse_apply(r, r @ self.H[:j, :j])
        self.H[j, :j] = dense.upper_tri_inverse_apply(r, self.H[j:j + 1, :j])[0]
        if self.locked.q:
            self.C[:, :j] = dense.upper_tri_inverse_apply(r, self.C[:, :j])
        self.counters.whitenings += 1
        self._reset_tracking()
        return self

    def translate(self):
        """Replace ``u`` by ``(u - U g) / alpha`` with ``g = S^T s`` so ``(S s)`` is orthonormal.

        ``B <- B + g b^T`` and ``b <- alpha b`` keep the relation exact.
        """
        j = self.j
        s = self.S[:, :j]
        slast = self.S[:, j]
        g = s.T @ slast
        g += s.T @ (slast - s @ g)
        unew = self.U[:, j] - self.U[:, :j] @ g
        self.counters.big_axpy += j
        if self.locked.q:
            # the translated vector must stay sketch-orthogonal to the locked set
            gl = self.locked.s_locked.T @ self._measure(unew)
            unew -= self.locked.u_locked @ gl
            self.counters.big_axpy += self.locked.q
            if np.any(gl):
                self.C[:, :j] += np.outer(gl, self.H[j, :j])
        snew = self._measure(unew)
        alpha = float(np.linalg.norm(snew))
        if not alpha > 1e-12:
            raise np.linalg.LinAlgError("degenerate translation: u lies in span(U)")
        self.H[:j, :j] += np.outer(g, self.H[j, :j])
        self.H[j, :j] *= alpha
        self.U[:, j] = unew / alpha
        self.S[:, j] = snew / alpha
        self.counters.big_axpy += 1
        self._reset_tracking()
        return self

    def reorthogonalize(self):
        self.whiten()
        self.translate()
        return self


def init_decomposition(a, omega: SparseSignEmbedding, u0, m=None, **kwargs):
    """Order-0 sketched decomposition started from ``u0 / ||Omega u0||``."""
    m = omega.d - 1 if m is None else m
    dec = SketchedKrylovDecomposition(omega, m, **kwargs)
    return dec.set_start(u0)


def extend(dec, a, target=None, on_breakdown="raise"):
    return dec.extend(a, target, on_breakdown=on_breakdown)


def whiten(dec):
    return dec.whiten()


def translate(dec):
    return dec.translate()


def to_arnoldi(dec: SketchedKrylovDecomposition):
    """Equivalent randomized Arnoldi factorization ``A V = V H + beta v e_k^T``.

    Works on copies: whitening and translation make ``(S s)`` orthonormal,
    a Householder reflector sends the coupling row to ``beta e_k`` and a
    Hessenberg reduction that fixes ``e_k`` finishes the job.  Returns
    ``(v_basis, h, beta, v_last)``.
    """
    if dec.locked.q:
        raise ValueError("to_arnoldi needs a decomposition without locked vectors")
    k = dec.j
    work = SketchedKrylovDecomposition(dec.omega, max(k, 1), counters=OpCounters(),
                                       kappa_tol=dec.kappa_tol)
    work.U[:, :k + 1] = dec.U[:, :k + 1]
    work.S[:, :k + 1] = dec.S[:, :k + 1]
    work.H[:k + 1, :k] = dec.H[:k + 1, :k]
    work.j = k
    if k == 0:
        return np.zeros((dec.n, 0)), np.zeros((0, 0)), 0.0, work.U[:, 0].copy()
    work.reorthogonalize()
    # reflector P = J (I - tau v v^T) J maps b to beta e_k
    brev = work.H[k, :k][::-1].copy()
    v, tau, beta = dense._house(brev)
    p = np.eye(k) - tau * np.outer(v, v)
    p = p[::-1, ::-1]
    work.apply_similarity(p)
    # Hessenberg reduction with last row of the transform equal to e_k
    flip = np.eye(k)[::-1]
    z, _ = dense.hessenberg_reduce(flip @ work.H[:k, :k].T @ flip)
    q = flip @ z @ flip
    work.apply_similarity(q)
    h = work.H[:k, :k].copy()
    h[np.tril_indices(k, -2)] = 0.0
    brow = work.H[k, :k]
    beta = float(brow[-1])
    v_last = work.U[:, k].copy()
    if beta < 0:
        beta, v_last = -beta, -v_last
    return work.U[:, :k].copy(), h, beta, v_last
