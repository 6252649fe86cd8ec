"""Deterministic Krylov-Schur with classical Gram-Schmidt and reorthogonalization.

Same restart loop as the randomized solver, but the basis is orthonormal in
the Euclidean inner product and every new vector is orthogonalized by two
full classical Gram-Schmidt passes.  Serves as the accuracy and cost
reference.
"""

from __future__ import annotations

import numpy as np

from .krylov import BREAKDOWN_TOL, KrylovDecompositionBase, OpCounters
from .sparse_io import CsrMatrix


class OrthonormalKrylovDecomposition(KrylovDecompositionBase):
    """``A U = U B + u b^T`` with ``(U u)`` orthonormal."""

    def __init__(self, n, m, counters=None, rng=None, breakdown_tol=BREAKDOWN_TOL):
        if m + 1 > n:
            raise ValueError(f"Krylov dimension {m} too large for n = {n}")
        super().__init__(n, m, None, counters, rng)
        self.breakdown_tol = breakdown_tol
        self._last_input_norm = 0.0

    def _measure(self, x):
        return x

    def _project(self, w, jj):
        self._last_input_norm = float(np.linalg.norm(w))
        self.counters.big_dot += 1
        lk = self.locked
        q = lk.q
        y = np.hstack([lk.u_locked, self.U[:, :jj]]) if q else self.U[:, :jj]
        coef = np.zeros(q + jj)
        for _ in range(2):
            dc = y.T @ w
            w -= y @ dc
            coef += dc
            self.counters.big_dot += q + jj
            self.counters.big_axpy += q + jj
        self.counters.big_dot += 1  # norm of the result
        return w, coef[q:], coef[:q], w

    @property
    def orthonormality_error(self):
        u = self.U[:, :self.j + 1]
        g = u.T @ u
        g[np.diag_indices_from(g)] -= 1.0
        return float(np.linalg.norm(g))


def solve_deterministic(a: CsrMatrix, cfg, u0=None, callback=None):
    """Krylov-Schur with an l2-orthonormal basis; same contract as :func:`rks.solver.solve`."""
    from .solver import KrylovSchurDriver, start_vector

    n = a.shape[0]
    if u0 is None:
        u0 = start_vector(n, cfg.seed)
    counters = OpCounters()
    dec = OrthonormalKrylovDecomposition(n, cfg.m, counters=counters,
                                         rng=np.random.default_rng([cfg.seed, 2]),
                                         breakdown_tol=cfg.breakdown_tol)
    dec.set_start(u0)
    driver = KrylovSchurDriver(a, cfg, dec, method="ks", callback=callback)
    return driver.run()
