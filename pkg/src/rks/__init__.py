"""Randomized Krylov-Schur eigensolver for large sparse nonsymmetric matrices."""

from .baseline import OrthonormalKrylovDecomposition, solve_deterministic
from .dense import (EigenPairsSmall, RealSchurForm, eig_quasi_triangular, hessenberg_reduce,
                    householder_qr, real_schur, reorder_schur, upper_tri_inverse_apply)
from .krylov import (HappyBreakdown, LockedSet, OpCounters, SketchedKrylovDecomposition,
                     extend, init_decomposition, to_arnoldi, translate, whiten)
from .sketch import SparseSignEmbedding, apply, apply_block, build_embedding, sketch_norm
from .solver import (Deflation, RitzPair, Selector, SolverConfig, SolverResult,
                     residual_estimates, select_ritz, solve)
from .sparse_io import (CsrMatrix, SyntheticKind, SyntheticSpec, make_synthetic,
                        parse_matrix_market, read_matrix_market, spmv, write_matrix_market)

__version__ = "0.1.0"
