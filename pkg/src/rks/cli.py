"""Command-line front end: load or generate a matrix, run the solvers, write artifacts.

Exit status is 0 on success, 2 for usage errors, 1 for input or solver
failures and 3 when a solve stopped at the restart cap without converging
(artifacts are still written in that case).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys

import numpy as np

from .baseline import solve_deterministic
from .solver import Deflation, Selector, SolverConfig, solve
from .sparse_io import (MatrixMarketError, SyntheticKind, SyntheticSpec, make_synthetic,
                        read_matrix_market)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
SCHEMA_VERSION = 1

log = logging.getLogger("rks")


class UsageError(ValueError):
    """Arguments are individually valid but inconsistent with the matrix."""


def parse_synthetic(text):
    """``kind,n[,noise[,seed]]`` to a :class:`SyntheticSpec`."""
    parts = [p.strip() for p in text.split(",")]
    if not 2 <= len(parts) <= 4:
        raise argparse.ArgumentTypeError("expected kind,n[,noise[,seed]]")
    try:
        kind = SyntheticKind.parse(parts[0])
        n = int(parts[1])
        noise = float(parts[2]) if len(parts) > 2 else 0.01
        seed = int(parts[3]) if len(parts) > 3 else 0
        return SyntheticSpec(kind, n, noise, seed)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = argparse.ArgumentParser(
        prog="rks-bench",
        description="Randomized Krylov-Schur vs deterministic Krylov-Schur on a sparse matrix.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="Matrix Market file (coordinate real general/symmetric)")
    src.add_argument("--synthetic", type=parse_synthetic, metavar="KIND,N[,NOISE,SEED]",
                     help="tridiagonal test matrix: exp, log, harmonic or geometric")
    p.add_argument("--k", type=int, required=True, help="number of wanted eigenpairs")
    p.add_argument("--m", type=int, required=True, help="Krylov dimension (m > k)")
    p.add_argument("--eta", type=float, default=1e-10, help="residual tolerance (default 1e-10)")
    p.add_argument("--which", choices=["lm", "sm", "lr", "sr"], default="lm")
    p.add_argument("--method", choices=["rks", "ks", "both"], default="rks")
    p.add_argument("--sketch-dim", type=int, default=None, help="sketch size d (default 2m)")
    p.add_argument("--zeta", type=int, default=8, help="nonzeros per sketch column (default 8)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-restarts", type=int, default=300)
    p.add_argument("--fixed-restarts", type=int, default=None,
                   help="run exactly this many restarts regardless of convergence")
    p.add_argument("--extra-keep", type=int, default=None,
                   help="Ritz vectors kept beyond k at each restart (default (m-k)//2)")
    p.add_argument("--deflation", choices=["off", "lock"], default="off")
    p.add_argument("--out", default="rks-run", help="output path prefix")
    p.add_argument("--format", choices=["json", "csv"], default="json",
                   help="csv additionally writes <prefix>.eigenvalues.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args):
    if args.matrix is not None:
        a = read_matrix_market(args.matrix)
        source = {"type": "file", "path": os.path.abspath(args.matrix), "n": a.n, "nnz": a.nnz}
    else:
        spec = args.synthetic
        a = make_synthetic(spec)
        source = {"type": "synthetic", "kind": spec.kind.value, "n": spec.n,
                  "noise_scale": spec.noise_scale, "seed": spec.seed, "nnz": a.nnz}
    return a, source


def _config(args):
    return SolverConfig(
        k=args.k, m=args.m, eta=args.eta, max_restarts=args.max_restarts,
        selector=Selector.parse(args.which), seed=args.seed,
        deflation=Deflation.parse(args.deflation), sketch_dim=args.sketch_dim,
        zeta=args.zeta, fixed_restarts=args.fixed_restarts, extra_keep=args.extra_keep)


def _config_echo(cfg):
    return {"k": cfg.k, "m": cfg.m, "eta": cfg.eta, "which": cfg.selector.value,
            "sketch_dim": cfg.sketch_dim, "zeta": cfg.zeta, "seed": cfg.seed,
            "max_restarts": cfg.max_restarts, "fixed_restarts": cfg.fixed_restarts,
            "extra_keep": cfg.extra_keep, "deflation": cfg.deflation.value}


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


def method_record(res):
    return {
        "converged": res.converged,
        "restarts": res.counters.restarts,
        "wall_time_s": res.wall_time,
        "eigenvalues": [{"re": float(v.real), "im": float(v.imag)} for v in res.values],
        "residual_estimates": [float(p.residual_estimate) for p in res.pairs],
        "residual_exact": [_finite(p.residual_exact) for p in res.pairs],
        "counters": res.counters.as_dict(),
        "perturbation_bound": res.perturbation_bound,
        "n_locked": res.n_locked,
        "happy_breakdown": res.happy_breakdown,
    }


def match_eigenvalues(a, b, selector):
    """Greedy nearest-neighbour matching after sorting both sets by selector rank.

    Returns ``(pairs, distance)`` with the relative distance maximised over
    matched pairs.
    """
    sel = Selector.parse(selector)
    a = sorted(np.asarray(a, dtype=complex), key=sel.sort_key)
    free = sorted(np.asarray(b, dtype=complex), key=sel.sort_key)
    pairs = []
    dist = 0.0
    for v in a:
        if not free:
            break
        j = int(np.argmin([abs(v - w) for w in free]))
        w = free.pop(j)
        rel = abs(v - w) / max(abs(w), np.finfo(float).tiny)
        dist = max(dist, rel)
        pairs.append((v, w, rel))
    return pairs, float(dist)


def _write_history(path, results):
    names = list(results)
    rows = max(len(r.residual_history) for r in results.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart"] + [f"max_residual_{nm}" for nm in names])
        for i in range(rows):
            row = [i]
            for nm in names:
                h = results[nm].residual_history
                row.append(repr(float(h[i])) if i < len(h) else "")
            w.writerow(row)


def _write_eigen_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "index", "re", "im", "residual_estimate", "residual_exact"])
        for nm, res in results.items():
            for i, p in enumerate(res.pairs):
                w.writerow([nm, i, repr(p.value.real), repr(p.value.imag),
                            repr(p.residual_estimate),
                            "" if p.residual_exact is None else repr(p.residual_exact)])


def run(args):
    """Execute one parsed invocation; returns the exit status."""
    a, source = _load(args)
    cfg = _config(args)
    n = a.shape[0]
    if cfg.m >= n:
        raise UsageError(f"need k < m < n, got k={cfg.k}, m={cfg.m}, n={n}")
    if args.method in ("rks", "both") and cfg.sketch_dim > n:
        raise UsageError(f"sketch dimension {cfg.sketch_dim} exceeds n = {n}")
    runners = {"rks": solve, "ks": solve_deterministic}
    names = ["rks", "ks"] if args.method == "both" else [args.method]
    results = {}
    for nm in names:
        log.info("running %s on n=%d (k=%d, m=%d)", nm, n, cfg.k, cfg.m)
        results[nm] = runners[nm](a, cfg)
        log.info("%s: converged=%s restarts=%d", nm, results[nm].converged,
                 results[nm].counters.restarts)

    prefix = args.out
    out_dir = os.path.dirname(os.path.abspath(prefix))
    os.makedirs(out_dir, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "source": source, "config": _config_echo(cfg),
           "seed": cfg.seed, "methods": {nm: method_record(r) for nm, r in results.items()}}
    with open(prefix + ".result.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    _write_history(prefix + ".history.csv", results)
    if args.format == "csv":
        _write_eigen_csv(prefix + ".eigenvalues.csv", results)
    if len(results) == 2:
        rk, ks = results["rks"], results["ks"]
        pairs, dist = match_eigenvalues(rk.values, ks.values, cfg.selector)
        big = {nm: r.counters.big_axpy + r.counters.big_dot for nm, r in results.items()}
        cmp_doc = {
            "schema_version": SCHEMA_VERSION,
            "eigenvalue_set_distance": dist,
            "matched": [{"rks": [v.real, v.imag], "ks": [w.real, w.imag], "rel_diff": rel}
                        for v, w, rel in pairs],
            "counters": {nm: r.counters.as_dict() for nm, r in results.items()},
            "big_vector_ops": big,
            "big_vector_ratio": big["rks"] / big["ks"] if big["ks"] else None,
            "wall_time_s": {nm: r.wall_time for nm, r in results.items()},
        }
        with open(prefix + ".compare.json", "w") as fh:
            json.dump(cmp_doc, fh, indent=2)
    if cfg.fixed_restarts is None and not all(r.converged for r in results.values()):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


@contextlib.contextmanager
def _thread_cap():
    val = os.environ.get("RKS_THREADS")
    if not val:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=max(1, int(val))):
        yield


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        SolverConfig(k=args.k, m=args.m, eta=args.eta, sketch_dim=args.sketch_dim)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        with _thread_cap():
            return run(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (MatrixMarketError, OSError) as exc:
        print(f"rks-bench: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"rks-bench: solver failure: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
