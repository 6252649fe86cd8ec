"""CSR storage, Matrix Market exchange and the synthetic tridiagonal test family."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class MatrixMarketError(ValueError):
    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


@dataclass(frozen=True)
class CsrMatrix:
    """Square sparse matrix in compressed-sparse-row form (0-based)."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _mat: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rp = np.asarray(self.row_ptr, dtype=np.int64)
        ci = np.asarray(self.col_idx, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        n = int(self.n)
        if rp.shape != (n + 1,) or rp[0] != 0 or rp[-1] != ci.size or ci.size != vals.size:
            raise ValueError("inconsistent CSR arrays")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise ValueError("column index out of range")
        # strictly increasing columns within each row
        if ci.size > 1:
            inc = np.diff(ci) > 0
            row_starts = np.zeros(ci.size - 1, dtype=bool)
            starts = rp[1:-1]
            starts = starts[(starts > 0) & (starts < ci.size)]
            row_starts[starts - 1] = True
            if not np.all(inc | row_starts):
                raise ValueError("column indices must be strictly increasing within a row")
        for name, arr in (("row_ptr", rp), ("col_idx", ci), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "_mat", sp.csr_matrix((vals, ci, rp), shape=(n, n)))

    @classmethod
    def from_scipy(cls, mat):
        mat = sp.csr_matrix(mat, dtype=float)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix must be square, got {mat.shape}")
        mat.sum_duplicates()
        mat.sort_indices()
        return cls(mat.shape[0], mat.indptr, mat.indices, mat.data)

    @classmethod
    def from_dense(cls, a):
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=float)))

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x):
        return spmv(self, x)

    def __matmul__(self, x):
        return self._mat @ x

    def toarray(self):
        return self._mat.toarray()

    def to_scipy(self):
        return self._mat.copy()

    def norm1(self):
        """Maximum absolute column sum."""
        if self.nnz == 0:
            return 0.0
        return float(np.max(np.bincount(self.col_idx, weights=np.abs(self.values),
                                        minlength=self.n)))


def spmv(a: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (a.n,):
        raise ValueError(f"spmv: expected a vector of length {a.n}, got shape {x.shape}")
    return a._mat @ x


# ---------------------------------------------------------------------------
# Matrix Market

def _parse_header(line, lineno):
    parts = line.strip().split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("malformed MatrixMarket banner", lineno)
    obj, fmt, fld, sym = (p.lower() for p in parts[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported object/format '{obj} {fmt}'", lineno)
    if fld not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field '{fld}' (only real)", lineno)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{sym}'", lineno)
    return sym


def parse_matrix_market(stream) -> CsrMatrix:
    """Read a ``matrix coordinate real {general|symmetric}`` stream.

    Indices are 1-based in the file; duplicates are summed and symmetric
    storage is expanded.  Errors carry the offending line number.
    """
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream.decode() if isinstance(stream, bytes) else stream)
    lines = stream.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty stream", 1)
    sym = _parse_header(lines[0], 1)
    pos = 1
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("%")):
        pos += 1
    if pos >= len(lines):
        raise MatrixMarketError("missing size line", pos + 1)
    size = lines[pos].split()
    try:
        nrows, ncols, nnz = (int(s) for s in size)
    except ValueError:
        raise MatrixMarketError(f"bad size line '{lines[pos].strip()}'", pos + 1) from None
    if nrows != ncols:
        raise MatrixMarketError(f"matrix must be square, got {nrows}x{ncols}", pos + 1)
    if nrows < 1 or nnz < 0:
        raise MatrixMarketError("bad dimensions", pos + 1)
    body_start = pos + 1
    body = [(i, ln) for i, ln in enumerate(lines[body_start:], start=body_start + 1)
            if ln.strip() and not ln.lstrip().startswith("%")]
    entries = None
    try:
        arr = np.array(" ".join(ln for _, ln in body).split(), dtype=float)
        if arr.size == 3 * nnz and len(body) == nnz:
            entries = arr.reshape(nnz, 3)
    except ValueError:
        pass
    if entries is None:
        entries = _parse_entries_slow(body, nnz)
    rows = entries[:, 0]
    cols = entries[:, 1]
    if np.any(rows != np.round(rows)) or np.any(cols != np.round(cols)):
        bad = int(np.argmax((rows != np.round(rows)) | (cols != np.round(cols))))
        raise MatrixMarketError("non-integer index", body[bad][0])
    rows = rows.astype(np.int64) - 1
    cols = cols.astype(np.int64) - 1
    oob = (rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols)
    if np.any(oob):
        raise MatrixMarketError("index out of range", body[int(np.argmax(oob))][0])
    vals = entries[:, 2]
    if sym == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
    return CsrMatrix.from_scipy(mat)


def _parse_entries_slow(body, nnz):
    out = np.empty((nnz, 3))
    count = 0
    for lineno, ln in body:
        parts = ln.split()
        if count >= nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", lineno)
        if len(parts) != 3:
            raise MatrixMarketError(f"expected 'row col value', got '{ln.strip()}'", lineno)
        try:
            out[count] = [int(parts[0]), int(parts[1]), float(parts[2])]
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry '{ln.strip()}'", lineno) from None
        count += 1
    if count != nnz:
        last = body[-1][0] if body else None
        raise MatrixMarketError(f"expected {nnz} entries, found {count}", last)
    return out


def write_matrix_market(a: CsrMatrix, stream, comment=None):
    """Write ``a`` in coordinate real general form with round-trip precision."""
    coo = a._mat.tocoo()
    stream.write("%%MatrixMarket matrix coordinate real general\n")
    if comment:
        for ln in str(comment).splitlines():
            stream.write(f"% {ln}\n")
    stream.write(f"{a.n} {a.n} {coo.nnz}\n")
    for i, j, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path) -> CsrMatrix:
    with open(path) as fh:
        return parse_matrix_market(fh)


# ---------------------------------------------------------------------------
# Synthetic tridiagonal matrices

class SyntheticKind(enum.Enum):
    EXPONENTIAL = "exponential"
    LOGARITHMIC = "logarithmic"
    HARMONIC_ROOTS = "harmonic"
    GEOMETRIC_DECAY = "geometric"

    @classmethod
    def parse(cls, name):
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "exp": cls.EXPONENTIAL, "exponential": cls.EXPONENTIAL,
            "log": cls.LOGARITHMIC, "logarithmic": cls.LOGARITHMIC,
            "harmonic": cls.HARMONIC_ROOTS, "harmonic_roots": cls.HARMONIC_ROOTS,
            "harmonicroots": cls.HARMONIC_ROOTS,
            "geometric": cls.GEOMETRIC_DECAY, "geometric_decay": cls.GEOMETRIC_DECAY,
            "geometricdecay": cls.GEOMETRIC_DECAY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown synthetic kind '{name}'") from None


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind
    n: int
    noise_scale: float = 1.0 / 100.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind.parse(self.kind.value)
                           if isinstance(self.kind, SyntheticKind) else SyntheticKind.parse(self.kind))
        if self.n < 2:
            raise ValueError("synthetic matrices need n >= 2")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


def synthetic_diagonal(kind, n):
    """Diagonal entries on ``n`` equispaced points ``i`` from 2 to 10, endpoints included."""
    kind = SyntheticKind.parse(kind.value if isinstance(kind, SyntheticKind) else kind)
    i = np.linspace(2.0, 10.0, n)
    if kind is SyntheticKind.EXPONENTIAL:
        return np.exp(i / 10.0)
    if kind is SyntheticKind.LOGARITHMIC:
        return np.log(i + 1.0)
    if kind is SyntheticKind.HARMONIC_ROOTS:
        return 1.0 + 1.0 / i**2
    return 0.99**i


def make_synthetic(spec: SyntheticSpec) -> CsrMatrix:
    """Tridiagonal matrix with the chosen diagonal and N(0,1)*noise_scale off-diagonals.

    Sub- and super-diagonals are drawn independently, so the matrix is
    nonsymmetric whenever ``noise_scale > 0``.
    """
    n = spec.n
    diag = synthetic_diagonal(spec.kind, n)
    if spec.noise_scale == 0.0:
        return CsrMatrix.from_scipy(sp.diags(diag, format="csr"))
    rng = np.random.default_rng(spec.seed)
    sub = rng.standard_normal(n - 1) * spec.noise_scale
    sup = rng.standard_normal(n - 1) * spec.noise_scale
    mat = sp.diags([sub, diag, sup], offsets=[-1, 0, 1], format="csr")
    return CsrMatrix.from_scipy(mat)
