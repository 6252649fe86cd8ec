import numpy as np
import pytest

from rks.solver import (Deflation, Selector, SolverConfig, make_embedding, residual_estimates,
                        select_ritz, solve, start_vector)
from rks.sparse_io import CsrMatrix, SyntheticSpec, make_synthetic

from helpers import outlier_matrix
from oracles import nearest_distance, qr_eigenvalues


# -- selection -------------------------------------------------------------------

def test_selector_parse():
    assert Selector.parse("LM") is Selector.LARGEST_MODULUS
    assert Selector.parse(Selector.SMALLEST_REAL) is Selector.SMALLEST_REAL
    with pytest.raises(ValueError):
        Selector.parse("xx")


@pytest.mark.parametrize("sel,expect", [
    ("lm", [4, 3]), ("sm", [0, 1]), ("lr", [3, 2]), ("sr", [4, 1]),
])
def test_select_ritz_real(sel, expect):
    vals = np.array([0.1, -0.5, 2.0, 3.0, -7.0])
    assert list(select_ritz(vals, sel, 2)) == expect


def test_select_ritz_keeps_conjugate_pairs():
    vals = np.array([5.0, 3 + 1j, 3 - 1j, 1.0])
    idx = select_ritz(vals, "lm", 2)
    assert sorted(idx) == [0, 1, 2]
    idx = select_ritz(vals, "lm", 2, max_keep=2)
    assert list(idx) == [0]


def test_select_ritz_tie_break_is_deterministic():
    vals = np.array([1.0, -1.0, 1j, -1j])
    perm = np.array([2, 0, 3, 1])
    ranked = vals[select_ritz(vals, "lm", 4)]
    np.testing.assert_array_equal(ranked, vals[perm][select_ritz(vals[perm], "lm", 4)])
    # positive imaginary part first within a pair
    idx = select_ritz(np.array([2j, -2j]), "lm", 1)
    assert list(idx) == [0, 1]


# -- residual estimates ---------------------------------------------------------------

def test_estimates_trivial():
    pairs = residual_estimates(np.array([[2.0]]), np.array([1e-12]))
    assert pairs[0].residual_estimate == pytest.approx(5e-13)
    t = np.triu(np.random.default_rng(0).standard_normal((4, 4))) + 3 * np.eye(4)
    assert all(p.residual_estimate == 0.0 for p in residual_estimates(t, np.zeros(4)))


def test_estimates_zero_eigenvalue_absolute():
    pairs = residual_estimates(np.array([[0.0, 1.0], [0.0, 2.0]]), np.array([1e-3, 0.0]))
    zero = [p for p in pairs if p.value == 0][0]
    assert zero.residual_estimate == pytest.approx(1e-3)


# -- configuration ---------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(k=0, m=5), dict(k=5, m=5), dict(k=2, m=5, eta=0.0),
                                dict(k=2, m=5, sketch_dim=5), dict(k=2, m=5, extra_keep=-1),
                                dict(k=2, m=5, max_restarts=-1), dict(k=2, m=5, selector="top")])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_config_defaults():
    cfg = SolverConfig(k=4, m=20)
    assert cfg.sketch_dim == 40 and cfg.extra_keep == 8 and cfg.eta == 1e-10


def test_embedding_larger_than_n_rejected():
    with pytest.raises(ValueError):
        make_embedding(30, SolverConfig(k=2, m=20))


def test_start_vector_reproducible():
    np.testing.assert_array_equal(start_vector(50, 3), start_vector(50, 3))
    assert np.any(start_vector(50, 3) != start_vector(50, 4))


# -- end to end ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_solve_against_dense_oracle(seed):
    a = outlier_matrix(180, 40 + seed)
    res = solve(a, SolverConfig(k=6, m=20, seed=seed))
    assert res.converged
    ref = qr_eigenvalues(a.toarray())
    assert nearest_distance(res.values, ref).max() < 1e-8 * np.abs(ref).max()
    # wanted pairs are the largest in modulus
    top = np.sort(np.abs(ref))[::-1][:len(res.values)]
    np.testing.assert_allclose(np.sort(np.abs(res.values))[::-1], top, rtol=1e-8)
    assert np.all(res.residual_estimates <= 1e-10)
    assert np.all(res.residual_exact < 1e-8)


def test_solve_is_deterministic():
    a = outlier_matrix(150, 7)
    r1 = solve(a, SolverConfig(k=4, m=14, seed=5))
    r2 = solve(a, SolverConfig(k=4, m=14, seed=5))
    np.testing.assert_array_equal(r1.values, r2.values)
    assert r1.counters == r2.counters


def test_solve_schur_output_is_consistent():
    a = outlier_matrix(200, 8)
    res = solve(a, SolverConfig(k=5, m=16, seed=1))
    u, t = res.schur_basis, res.t_small
    s = res.schur_sketch
    np.testing.assert_allclose(s.T @ s, np.eye(s.shape[1]), atol=1e-8)
    np.testing.assert_allclose(s, res.omega.toarray() @ u, atol=1e-10)
    r = a.toarray() @ u - u @ t - np.outer(res.u_last, res.b_row)
    assert np.linalg.norm(r) < 1e-10
    assert not np.any(np.tril(t, -2))


@pytest.mark.parametrize("which", ["sr", "lr"])
def test_real_part_selectors(which):
    a = make_synthetic(SyntheticSpec("exp", 400, 0.01, seed=1))
    res = solve(a, SolverConfig(k=3, m=16, eta=1e-9, selector=which))
    assert res.converged
    ref = np.linalg.eigvals(a.toarray())
    assert nearest_distance(res.values, ref).max() < 1e-8
    # a conjugate pair at the cut is kept whole, so 3 or 4 values come back
    order = np.sort(ref.real)
    cut = order[len(res.values) - 1] if which == "sr" else order[-len(res.values)]
    if which == "sr":
        assert np.all(res.values.real <= cut + 1e-8)
    else:
        assert np.all(res.values.real >= cut - 1e-8)


def test_happy_breakdown_returns_exact_eigenvalues():
    a = CsrMatrix.from_dense(np.diag(np.arange(1.0, 61.0)))
    u0 = np.zeros(60)
    u0[-4:] = 1.0
    res = solve(a, SolverConfig(k=2, m=10), u0=u0)
    # the invariant start is detected and the expansion continues with a fresh direction
    assert res.counters.breakdowns >= 1
    np.testing.assert_allclose(sorted(res.values.real)[-2:], [59, 60], atol=1e-10)
    assert res.converged


def test_fixed_restarts_mode():
    a = outlier_matrix(200, 9, bulk=1.8)
    res = solve(a, SolverConfig(k=4, m=12, fixed_restarts=3))
    assert res.restarts == 3
    assert len(res.residual_history) == 4


def test_restart_cap_reports_not_converged():
    a = make_synthetic(SyntheticSpec("harmonic", 500, 0.0))
    res = solve(a, SolverConfig(k=4, m=10, eta=1e-14, max_restarts=5, stagnation_window=None))
    assert not res.converged and res.restarts == 5


def test_callback_events():
    events = []
    a = outlier_matrix(200, 10)
    solve(a, SolverConfig(k=4, m=14, deflation="lock"), callback=lambda ev, drv: events.append(ev))
    assert events[0] == "expanded"
    assert "contracted" in events


def test_locking_run():
    a = outlier_matrix(250, 302, bulk=1.8)
    res = solve(a, SolverConfig(k=6, m=14, sketch_dim=56, seed=2, deflation=Deflation.LOCK))
    assert res.converged and res.n_locked >= 1
    q = res.n_locked
    u, t = res.schur_basis, res.t_small
    ad = a.toarray()
    assert np.linalg.norm(ad @ u[:, :q] - u[:, :q] @ t[:q, :q], 2) <= res.perturbation_bound
    ref = qr_eigenvalues(ad)
    assert nearest_distance(res.values, ref).max() < 1e-8 * np.abs(ref).max()


def test_all_wanted_locked_in_fixed_mode():
    # once every wanted pair is locked the unreduced active block must not leak into the output
    a = outlier_matrix(350, 308, bulk=1.8)
    cfg = SolverConfig(k=6, m=14, sketch_dim=56, seed=8, deflation="lock", fixed_restarts=8)
    res = solve(a, cfg)
    x = res.ritz_vectors()
    ad = a.toarray()
    for p, v in zip(res.pairs, x.T):
        true = np.linalg.norm(ad @ v - p.value * v) / (abs(p.value) * np.linalg.norm(v))
        assert true < 1e3 * max(p.residual_estimate, 1e-14)
    assert len(res.pairs) <= cfg.k + 1
