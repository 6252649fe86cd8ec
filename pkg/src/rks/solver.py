"""Randomized Krylov-Schur eigensolver.

The driver alternates expansion of a Krylov decomposition to order ``m`` with
a Schur contraction that keeps the ``k`` wanted Ritz values.  Residuals are
monitored from the coupling row alone, converged leading Schur vectors can be
locked, and the final Schur basis is returned together with the work
counters.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .krylov import (BREAKDOWN_TOL, KAPPA_TOL, HappyBreakdown, OpCounters,
                     SketchedKrylovDecomposition)
from .sketch import SparseSignEmbedding, build_embedding

NOMINAL_EPS = 1.0 / math.sqrt(2.0)
THETA_CUTOFF = 1e-14


class Selector(enum.Enum):
    LARGEST_MODULUS = "lm"
    SMALLEST_MODULUS = "sm"
    LARGEST_REAL = "lr"
    SMALLEST_REAL = "sr"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for sel in cls:
            if key in (sel.value, sel.name.lower()):
                return sel
        raise ValueError(f"unknown selector '{value}' (expected lm, sm, lr or sr)")

    def primary(self, v):
        v = complex(v)
        if self is Selector.LARGEST_MODULUS:
            return -abs(v)
        if self is Selector.SMALLEST_MODULUS:
            return abs(v)
        if self is Selector.LARGEST_REAL:
            return -v.real
        return v.real

    def sort_key(self, v, index=0):
        v = complex(v)
        return (self.primary(v), abs(v), v.real, 0 if v.imag >= 0 else 1, index)


class Deflation(enum.Enum):
    OFF = "off"
    LOCK = "lock"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown deflation mode '{value}' (expected off or lock)") from None


@dataclass
class SolverConfig:
    k: int
    m: int
    eta: float = 1e-10
    max_restarts: int = 300
    selector: Selector = Selector.LARGEST_MODULUS
    seed: int = 0
    deflation: Deflation = Deflation.OFF
    whiten_tol: float = KAPPA_TOL
    breakdown_tol: float = BREAKDOWN_TOL
    sketch_dim: int | None = None
    zeta: int = 8
    # run exactly this many restarts, ignoring convergence (cost comparisons)
    fixed_restarts: int | None = None
    exact_residuals: bool = True
    stagnation_window: int | None = 20
    # Ritz vectors kept beyond the wanted ones at each restart; None means (m - k) // 2
    extra_keep: int | None = None

    def __post_init__(self):
        self.selector = Selector.parse(self.selector)
        self.deflation = Deflation.parse(self.deflation)
        self.k, self.m = int(self.k), int(self.m)
        if not 0 < self.k < self.m:
            raise ValueError(f"need 0 < k < m, got k={self.k}, m={self.m}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be nonnegative")
        if self.sketch_dim is None:
            self.sketch_dim = 2 * self.m
        if self.extra_keep is None:
            self.extra_keep = (self.m - self.k) // 2
        if self.extra_keep < 0:
            raise ValueError("extra_keep must be nonnegative")
        if self.sketch_dim < self.m + 1:
            raise ValueError(f"sketch dimension {self.sketch_dim} must exceed m = {self.m}")

    @property
    def p(self):
        return self.m - self.k


@dataclass
class RitzPair:
    value: complex
    y: np.ndarray
    residual_estimate: float
    residual_exact: float | None = None


@dataclass
class SolverResult:
    values: np.ndarray
    schur_basis: np.ndarray
    t_small: np.ndarray
    residual_history: list
    counters: OpCounters
    converged: bool
    perturbation_bound: float
    pairs: list = field(default_factory=list)
    method: str = "rks"
    schur_sketch: np.ndarray | None = None
    n_locked: int = 0
    happy_breakdown: bool = False
    wall_time: float = 0.0
    omega: SparseSignEmbedding | None = None
    u_last: np.ndarray | None = None
    b_row: np.ndarray | None = None

    @property
    def residual_estimates(self):
        return np.array([p.residual_estimate for p in self.pairs])

    @property
    def residual_exact(self):
        return np.array([np.nan if p.residual_exact is None else p.residual_exact
                         for p in self.pairs])

    @property
    def restarts(self):
        return self.counters.restarts

    def ritz_vectors(self):
        """Complex Ritz vectors ``U y`` (columns, rank order)."""
        if not self.pairs:
            return np.zeros((self.schur_basis.shape[0], 0), dtype=complex)
        return self.schur_basis @ np.column_stack([p.y for p in self.pairs])


def start_vector(n, seed):
    """Deterministic Gaussian start vector shared by both methods."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), 1])
    return np.random.default_rng(ss).standard_normal(n)


def _partner(values, i, candidates):
    """Index among ``candidates`` holding the conjugate of ``values[i]``, or None."""
    v = values[i]
    if v.imag == 0:
        return None
    target = np.conj(v)
    cands = [p for p in candidates if p != i]
    if not cands:
        return None
    for p in cands:
        if values[p] == target:
            return p
    dist = [abs(values[p] - target) for p in cands]
    best = int(np.argmin(dist))
    if dist[best] <= 1e-12 * max(1.0, abs(v)):
        return cands[best]
    return None


def select_ritz(values, selector, k, max_keep=None):
    """Indices of the ``k`` selector-best values, closed under conjugation.

    Indices come back in rank order.  When the cut at ``k`` separates a
    conjugate pair, the pair is kept (``k + 1`` entries) unless that would
    exceed ``max_keep``, in which case it is dropped (``k - 1``).
    """
    values = np.asarray(values, dtype=complex)
    sel = Selector.parse(selector)
    k = min(int(k), values.size)
    if k <= 0:
        return np.array([], dtype=int)
    order = sorted(range(values.size), key=lambda i: sel.sort_key(values[i], i))
    chosen = order[:k]
    last = chosen[-1]
    if values[last].imag != 0 and _partner(values, last, chosen[:-1]) is None:
        p = _partner(values, last, order[k:])
        if p is not None:
            if max_keep is None or k + 1 <= max_keep:
                chosen = chosen + [p]
            else:
                chosen = chosen[:-1]
    return np.array(chosen, dtype=int)


def residual_estimates(t, b_row):
    """Ritz pairs of quasi-triangular ``t`` with estimates ``|b^T y| / |theta|``.

    For ``|theta|`` below ``1e-14 ||t||`` the absolute value ``|b^T y|`` is
    used instead (with a sketch-orthonormal basis ``||U y||`` is about 1).
    """
    t = np.asarray(t, dtype=float)
    b_row = np.asarray(b_row, dtype=float)
    if t.shape[0] == 0:
        return []
    eig = dense.eig_quasi_triangular(t)
    tnorm = np.linalg.norm(t)
    pairs = []
    for i, theta in enumerate(eig.values):
        y = eig.vectors[:, i]
        r = abs(b_row @ y)
        den = abs(theta)
        est = r / den if den > THETA_CUTOFF * tnorm and den > 0 else r
        pairs.append(RitzPair(complex(theta), y, float(est)))
    return pairs


def _block_sizes(t, upto):
    out = []
    i = 0
    while i < upto:
        sz = 2 if i + 1 < t.shape[0] and t[i + 1, i] != 0.0 else 1
        out.append((i, sz))
        i += sz
    return out


class KrylovSchurDriver:
    """Restart loop shared by the randomized and the deterministic solver.

    The decomposition passed in must already hold a start vector.  ``run``
    performs the full solve; :meth:`expand`, :meth:`restart_step` and
    :meth:`finalize` are exposed for tests that inspect intermediate states.
    """

    def __init__(self, a, cfg: SolverConfig, dec, method="rks", callback=None, omega=None):
        self.a = a
        self.cfg = cfg
        self.dec = dec
        self.method = method
        self.callback = callback
        self.omega = omega
        self.counters = dec.counters
        self.history = []
        self.perturbation_bound = 0.0
        self.safety = math.sqrt((1 + NOMINAL_EPS) / (1 - NOMINAL_EPS)) if dec.S is not None else 1.0
        self.breakdown = False
        self.lock_records = []  # (residual vector measure, dropped couplings, offset)
        self.expected_spmv = 0
        self.explicit_restarts = 0
        self._best = np.inf
        self._best_at = 0
        self._t0 = time.perf_counter()

    @property
    def n_locked(self):
        return self.dec.locked.q

    @property
    def m_active(self):
        return self.cfg.m - self.n_locked

    @property
    def k_active(self):
        return self.cfg.k - self.n_locked

    def _notify(self, event):
        if self.callback is not None:
            self.callback(event, self)

    def expand(self):
        before = self.dec.j
        try:
            self.dec.extend(self.a, self.m_active, on_breakdown="continue")
        except HappyBreakdown:
            self.breakdown = True
        self.expected_spmv += self.dec.j - before
        self._notify("expanded")

    def _reorder(self, schur, wanted):
        sel = self.cfg.selector
        mask = np.zeros(schur.t.shape[0], dtype=bool)
        mask[wanted] = True
        try:
            return dense.reorder_schur(schur, mask, key=sel.sort_key)
        except dense.ReorderError:
            # retry along a different swap path before giving up
            return dense.reorder_schur(schur, mask, key=None)

    def restart_step(self):
        """One Schur step: estimate, maybe finish, otherwise lock, contract and expand.

        Returns True when the solve is finished.
        """
        cfg, dec = self.cfg, self.dec
        j = dec.j
        kw = self.k_active
        if kw <= 0 or j == 0:
            self.finalize(None, 0)
            return True
        schur = dense.real_schur(dec.b)
        vals = schur.eigenvalues()
        wanted = select_ritz(vals, cfg.selector, kw)
        kk = len(wanted)
        kept = wanted
        if cfg.extra_keep:
            # a buffer of next-best Ritz vectors survives the restart too
            cap = self.m_active - 1
            more = select_ritz(vals, cfg.selector, min(kk + cfg.extra_keep, cap), max_keep=cap)
            if len(more) > kk:
                kept = more
        re = self._reorder(schur, kept)
        brow = dec.b_row @ re.q
        pairs = residual_estimates(re.t[:kk, :kk], brow[:kk])
        worst = max((p.residual_estimate for p in pairs), default=0.0)
        self.history.append(worst)
        restarts = self.counters.restarts
        if cfg.fixed_restarts is not None:
            done = restarts >= cfg.fixed_restarts
        else:
            done = worst <= cfg.eta or restarts >= cfg.max_restarts
        if self.breakdown or j < kk:
            done = True
        if done:
            self.finalize(re, kk)
            return True

        keep = len(kept) if len(kept) <= self.m_active - 1 else kw - 1
        if keep > 0 and keep < j and re.t[keep, keep - 1] != 0.0:
            keep -= 1
        nl = self._lockable(re.t, brow, kk) if cfg.deflation is Deflation.LOCK else 0
        nl = min(nl, keep)
        dec.contract(re, keep)
        self._notify("contracted")
        if nl:
            self._lock(nl)
            if self.k_active <= 0:
                # every wanted pair is locked; the active block is not needed
                self.finalize(None, 0)
                return True
        if self._stagnated(worst):
            self._explicit_restart()
        else:
            self.expand()
        return False

    def _lockable(self, t, brow, kk):
        nl = 0
        eta = self.cfg.eta
        for st, sz in _block_sizes(t, kk):
            if st + sz > kk:
                break
            theta = dense.quasi_triangular_eigenvalues(t[st:st + sz, st:st + sz])[0]
            thr = eta * min(1.0, abs(theta)) if abs(theta) > THETA_CUTOFF else eta
            if np.all(np.abs(brow[st:st + sz]) <= thr):
                nl = st + sz
            else:
                break
        return nl

    def _lock(self, nl):
        dec = self.dec
        meas = (dec.s_last if dec.S is not None else dec.u_last).copy()
        offset = dec.locked.q
        dropped = dec.lock_prefix(nl)
        self.lock_records.append((meas, dropped, offset))
        self.perturbation_bound += math.sqrt(nl) * self.safety * self.cfg.eta
        self._notify("locked")

    def _stagnated(self, worst):
        window = self.cfg.stagnation_window
        if window is None or self.cfg.fixed_restarts is not None:
            return False
        restarts = self.counters.restarts
        if worst < 0.99 * self._best:
            self._best, self._best_at = worst, restarts
            return False
        return restarts - self._best_at >= window

    def _explicit_restart(self):
        """Start over from the sum of the retained Schur vectors plus a random kick."""
        dec = self.dec
        base = dec.u_basis.sum(axis=1) if dec.j else np.zeros(dec.n)
        kick = dec.rng.standard_normal(dec.n)
        nb = np.linalg.norm(base)
        x0 = base / nb + 1e-2 * kick / np.linalg.norm(kick) if nb > 0 else kick
        dec.set_start(x0)
        self.explicit_restarts += 1
        self._best, self._best_at = np.inf, self.counters.restarts
        self.expand()

    def finalize(self, re, kk):
        dec, cfg = self.dec, self.cfg
        if re is not None and kk:
            dec.contract(re, kk, count_restart=False)
        q = dec.locked.q
        # without a reordered Schur form only the locked part is quasi-triangular
        ja = dec.j if re is not None else 0
        kt = q + ja
        t = np.zeros((kt, kt))
        t[:q, :q] = dec.locked.t_locked
        t[:q, q:] = dec.coupling[:, :ja]
        t[q:, q:] = dec.b[:ja, :ja]
        basis = dec.full_schur_basis()[:, :kt]
        active_b = dec.b_row[:ja]
        sketch = None
        if dec.S is not None:
            sketch = np.hstack([dec.locked.s_locked, dec.s_basis[:, :ja]])
        eig = dense.eig_quasi_triangular(t) if kt else None
        tnorm = np.linalg.norm(t)
        pairs = []
        last_meas = dec.s_last if dec.S is not None else dec.u_last
        for i in range(kt):
            theta = complex(eig.values[i])
            y = eig.vectors[:, i]
            if not self.lock_records:
                r = abs(active_b @ y[q:])
            else:
                vec = last_meas * (active_b @ y[q:])
                for meas, dropped, off in self.lock_records:
                    vec = vec + meas * (dropped @ y[off:off + dropped.size])
                r = float(np.linalg.norm(vec))
            den = abs(theta)
            est = r / den if den > THETA_CUTOFF * tnorm and den > 0 else r
            pairs.append(RitzPair(theta, y, float(est)))
        order = sorted(range(kt), key=lambda i: cfg.selector.sort_key(pairs[i].value, i))
        pairs = [pairs[i] for i in order]
        if cfg.exact_residuals and kt:
            for p in pairs:
                x = basis @ p.y
                ax = (self.a @ x.real) + 1j * (self.a @ x.imag)
                nax = np.linalg.norm(ax)
                p.residual_exact = float(np.linalg.norm(ax - p.value * x) / nax) if nax > 0 else 0.0
        if cfg.fixed_restarts is not None:
            converged = all(p.residual_estimate <= cfg.eta for p in pairs)
        else:
            converged = (kt >= cfg.k and all(p.residual_estimate <= cfg.eta for p in pairs))
        self.result = SolverResult(
            values=np.array([p.value for p in pairs], dtype=complex),
            schur_basis=basis,
            t_small=t,
            residual_history=list(self.history),
            counters=self.counters,
            converged=bool(converged),
            perturbation_bound=self.perturbation_bound,
            pairs=pairs,
            method=self.method,
            schur_sketch=sketch,
            n_locked=q,
            happy_breakdown=self.breakdown,
            wall_time=time.perf_counter() - self._t0,
            omega=self.omega,
            u_last=dec.u_last.copy(),
            b_row=np.concatenate([np.zeros(q), active_b]),
        )
        return self.result

    def run(self):
        self._t0 = time.perf_counter()
        self.expand()
        while not self.restart_step():
            pass
        return self.result


def make_embedding(n, cfg: SolverConfig):
    d = cfg.sketch_dim
    if d > n:
        raise ValueError(f"sketch dimension {d} exceeds the matrix dimension {n}")
    return build_embedding(d, n, min(cfg.zeta, d), seed=cfg.seed)


def solve(a, cfg: SolverConfig, omega: SparseSignEmbedding | None = None, u0=None, callback=None):
    """Randomized Krylov-Schur: the ``cfg.k`` selector-best eigenpairs of ``a``.

    Parameters
    ----------
    a : CsrMatrix or anything supporting ``a @ x``
    cfg : SolverConfig
    omega : SparseSignEmbedding, optional
        Defaults to a sparse-sign embedding of size ``cfg.sketch_dim`` seeded
        by ``cfg.seed``.
    u0 : array, optional
        Start vector; defaults to :func:`start_vector` of ``cfg.seed``.
    callback : callable, optional
        Called as ``callback(event, driver)`` after every expansion,
        contraction and locking.
    """
    n = a.shape[0]
    if cfg.m + 1 > n:
        raise ValueError(f"Krylov dimension m = {cfg.m} needs n > m, got n = {n}")
    if omega is None:
        omega = make_embedding(n, cfg)
    if omega.n != n:
        raise ValueError("embedding and matrix dimensions differ")
    if u0 is None:
        u0 = start_vector(n, cfg.seed)
    dec = SketchedKrylovDecomposition(omega, cfg.m, counters=OpCounters(),
                                      rng=np.random.default_rng([cfg.seed, 2]),
                                      kappa_tol=cfg.whiten_tol, breakdown_tol=cfg.breakdown_tol)
    dec.set_start(u0)
    driver = KrylovSchurDriver(a, cfg, dec, method="rks", callback=callback, omega=omega)
    return driver.run()
