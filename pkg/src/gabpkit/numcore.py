"""Shared linear-algebra substrate: symmetric systems, norms, spectral
quantities, graph Laplacians, problem generators and Matrix Market I/O."""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

DENSE_ORACLE_MAX_N = 64


class DimensionError(ValueError):
    pass


class NormalizationError(ValueError):
    def __init__(self, index, value):
        super().__init__(f"non-positive diagonal entry A[{index},{index}] = {value}")
        self.index = index


class SpectralConvergenceError(RuntimeError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class MatrixMarketError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SymmetricSystem:
    """Square symmetric system A x = b.

    The off-diagonal part is kept in CSR form with both directions of every
    edge stored, sorted by column within each row. ``rev[e]`` is the position
    of the reverse edge of ``e``.
    """
    diag: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    b: np.ndarray
    rev: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.diag.shape[0]

    @cached_property
    def src(self):
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    @property
    def n_edges(self):
        """Number of directed edges (twice the undirected count)."""
        return self.indices.shape[0]

    def neighbors(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def offdiag(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_sparse(self):
        return (self.offdiag() + sp.diags(self.diag)).tocsr()

    def to_dense(self):
        return self.to_sparse().toarray()

    def with_b(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n,):
            raise DimensionError(f"b has shape {b.shape}, expected ({self.n},)")
        return SymmetricSystem(self.diag, self.indptr, self.indices, self.data, b.copy(), self.rev)

    def with_diag(self, diag):
        diag = np.asarray(diag, dtype=float)
        return SymmetricSystem(diag.copy(), self.indptr, self.indices, self.data, self.b, self.rev)


def make_system(A, b=None, sym_tol=1e-12):
    """Build a SymmetricSystem from a dense array or scipy sparse matrix.

    Zero off-diagonal entries are dropped and the upper triangle defines the
    off-diagonal values. Raises DimensionError for non-square input and
    ValueError when |A - A^T| exceeds sym_tol * max|A|.
    """
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=float)
    else:
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise DimensionError("A must be a 2-D matrix")
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"A is {A.shape[0]}x{A.shape[1]}, expected square")
    n = A.shape[0]
    M = sp.csr_matrix(A)
    asym = abs(M - M.T)
    if asym.nnz and asym.max() > sym_tol * abs(M).max():
        raise ValueError("A is not symmetric")
    diag = M.diagonal().astype(float)
    off = sp.triu(M, k=1)
    off = (off + off.T).tocsr()
    off.eliminate_zeros()
    off.sort_indices()
    indptr = off.indptr.astype(np.int64)
    indices = off.indices.astype(np.int64)
    src = np.repeat(np.arange(n), np.diff(indptr))
    # edges are stored sorted by (src, dst); sorting by (dst, src) instead
    # lists, at rank k, the reverse of the k-th stored edge
    rev = np.lexsort((src, indices))
    if b is None:
        b = np.zeros(n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != n:
        raise DimensionError(f"b has length {b.shape[0]}, expected {n}")
    return SymmetricSystem(diag, indptr, indices, off.data.astype(float), b.copy(), rev)


class DominanceClass(Enum):
    NONE = "none"
    WEAK = "weak"
    STRICT = "strict"
    IRREDUCIBLE = "irreducible"


def dominance_class(sys):
    """Classify diagonal dominance of A.

    Strict takes precedence over irreducible when both hold.
    """
    offsum = np.bincount(sys.src, weights=np.abs(sys.data), minlength=sys.n)
    d = np.abs(sys.diag)
    if np.all(d > offsum):
        return DominanceClass.STRICT
    if not np.all(d >= offsum):
        return DominanceClass.NONE
    if np.any(d > offsum):
        n_comp = csgraph.connected_components(sys.offdiag(), directed=False)[0]
        if n_comp == 1:
            return DominanceClass.IRREDUCIBLE
    return DominanceClass.WEAK


def spectral_radius(M, tol=1e-6, rng=None):
    """Largest eigenvalue magnitude of a square matrix.

    Small matrices use a dense eigensolver. Larger nonnegative matrices use
    power iteration (Perron root); other large matrices use ARPACK.
    """
    if sp.issparse(M):
        shape = M.shape
    else:
        M = np.asarray(M, dtype=float)
        shape = M.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {shape}")
    n = shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_ORACLE_MAX_N:
        dense = M.toarray() if sp.issparse(M) else M
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    nonneg = (M.data.min() >= 0) if sp.issparse(M) else (M.min() >= 0)
    if nonneg:
        try:
            return _perron_root(M, tol, rng)
        except SpectralConvergenceError:
            # bracket stalls on (nearly) reducible matrices
            if n <= 2000:
                dense = M.toarray() if sp.issparse(M) else M
                return float(np.max(np.abs(np.linalg.eigvals(dense))))
    try:
        vals = spla.eigs(sp.csr_matrix(M), k=1, which="LM", tol=tol,
                         return_eigenvectors=False, maxiter=10 * n)
    except spla.ArpackNoConvergence as err:
        est = float(np.max(np.abs(err.eigenvalues))) if len(err.eigenvalues) else np.nan
        raise SpectralConvergenceError("ARPACK did not converge", est) from err
    return float(np.abs(vals[0]))


def _perron_root(M, tol, rng):
    rng = np.random.default_rng(0) if rng is None else rng
    n = M.shape[0]
    v = rng.uniform(0.5, 1.5, n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(10 * n):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        # Collatz-Wielandt bounds bracket the Perron root for positive v
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(v > 0, w / v, np.nan)
        lo, hi = np.nanmin(ratios), np.nanmax(ratios)
        est = nw
        v = w / nw
        if hi - lo <= tol * max(hi, 1.0):
            return float(0.5 * (hi + lo))
    raise SpectralConvergenceError("power iteration hit its iteration cap", float(est))


def normalize_unit_diag(sys):
    """Return D^-1/2 A D^-1/2 with b scaled to D^-1/2 b."""
    bad = np.flatnonzero(~(sys.diag > 0))
    if bad.size:
        i = int(bad[0])
        raise NormalizationError(i, sys.diag[i])
    s = 1.0 / np.sqrt(sys.diag)
    data = sys.data * s[sys.src] * s[sys.indices]
    return SymmetricSystem(np.ones(sys.n), sys.indptr, sys.indices, data, sys.b * s, sys.rev)


def abs_offdiag(sys):
    """|R| for the unit-diagonal form J = I - R (assumes sys is normalized)."""
    return abs(sys.offdiag())


def residual(sys, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionError(f"x has shape {x.shape}, expected ({sys.n},)")
    off = np.bincount(sys.src, weights=sys.data * x[sys.indices], minlength=sys.n)
    return sys.diag * x + off - sys.b


def residual_per_equation(sys, x):
    """Euclidean norm of A x - b divided by the number of equations."""
    r = residual(sys, x)
    return float(np.sqrt(np.sum(r * r)) / sys.n)


@dataclass(frozen=True)
class WeightedGraph:
    """Directed weighted graph with optional node weights and priors.

    ``W`` is a sparse n x n matrix with W[i, j] = w_ij. Missing priors are
    NaN in ``y``.
    """
    W: sp.csr_matrix
    node_weights: np.ndarray = None
    y: np.ndarray = None

    def __post_init__(self):
        W = sp.csr_matrix(self.W, dtype=float)
        if W.shape[0] != W.shape[1]:
            raise DimensionError("weight matrix must be square")
        if W.nnz and (not np.all(np.isfinite(W.data)) or W.data.min() < 0):
            raise ValueError("edge weights must be finite and non-negative")
        if np.any(W.diagonal() != 0):
            raise ValueError("self-loop edges are not allowed")
        object.__setattr__(self, "W", W)

    @property
    def n(self):
        return self.W.shape[0]


def weighted_laplacian(g):
    """L[i,i] = sum_j w_ji, L[i,j] = -w_ij."""
    W = g.W
    deg = np.asarray(W.sum(axis=0)).ravel()
    return (sp.diags(deg) - W).tocsr()


def poisson2d(p):
    """Five-point discretization of the unit-square Poisson problem with f = -1.

    Returns a p^2 system with 4 on the diagonal, -1 couplings in natural
    row ordering and every rhs entry equal to h^2, h = 1/(p+1).
    """
    if p < 1:
        raise ValueError("p must be a positive integer")
    T = sp.diags([-np.ones(p - 1), -np.ones(p - 1)], [-1, 1], shape=(p, p))
    I = sp.identity(p)
    A = sp.kron(I, T) + sp.kron(T, I) + 4.0 * sp.identity(p * p)
    h = 1.0 / (p + 1)
    return make_system(A.tocsr(), np.full(p * p, h * h))


def read_matrix_market(path, b_path=None):
    """Read a symmetric matrix (and optionally a vector) from .mtx files."""
    A = _read_mtx(path)
    if A.shape[0] != A.shape[1]:
        raise MatrixMarketError(f"{path}: matrix is not square")
    b = None
    if b_path is not None:
        b = read_vector(b_path)
    try:
        return make_system(A, b)
    except ValueError as err:
        raise MatrixMarketError(f"{path}: {err}") from err


def read_vector(path):
    v = _read_mtx(path)
    v = v.toarray() if sp.issparse(v) else np.asarray(v)
    if v.ndim != 2 or 1 not in v.shape:
        raise MatrixMarketError(f"{path}: expected a single-column vector")
    return v.astype(float).ravel()


def _read_mtx(path):
    with open(path, "r") as fh:
        header = fh.readline().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError(f"{path}: malformed header")
    fmt, symmetry = header[2].lower(), header[4].lower()
    try:
        M = scipy.io.mmread(path)
    except (ValueError, OSError, IndexError) as err:
        raise MatrixMarketError(f"{path}: {err}") from err
    if fmt == "coordinate":
        M = sp.coo_matrix(M)
        keys = M.row.astype(np.int64) * M.shape[1] + M.col
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 1):
            k = int(uniq[np.argmax(counts > 1)])
            r, c = divmod(k, M.shape[1])
            if symmetry == "symmetric" and r != c:
                raise MatrixMarketError(
                    f"{path}: entry ({r + 1},{c + 1}) given on both sides of a symmetric matrix")
            raise MatrixMarketError(f"{path}: duplicate entry ({r + 1},{c + 1})")
        return M.tocsr()
    return np.asarray(M)


def write_matrix_market(sys, path, b_path=None):
    """Write A (symmetric coordinate format) and optionally b, 17 significant digits."""
    lower = sp.tril(sys.to_sparse()).tocoo()
    scipy.io.mmwrite(path, lower, symmetry="symmetric", precision=17)
    if b_path is not None:
        write_vector(sys.b, b_path)


def write_vector(v, path):
    scipy.io.mmwrite(path, np.asarray(v, dtype=float).reshape(-1, 1), precision=17)
