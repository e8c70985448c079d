"""Compressed-row matrices, Jacobi-PCG, and small dense solves."""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import InvalidArgument, SingularSystem, SolverFailure

DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = False

    @property
    def nnz(self):
        return self.data.size

    def matvec(self, x):
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, np.asarray(x, float))

    __matmul__ = matvec

    def diagonal(self):
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        d = np.zeros(self.n)
        on = rows == self.indices
        d[rows[on]] = self.data[on]
        return d

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def coo(self):
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def max_abs(self):
        return float(np.abs(self.data).max()) if self.nnz else 0.0

    def asymmetry(self):
        """max |A - A^T| over entries."""
        r, c, v = self.coo()
        diff = assemble((np.concatenate([r, c]), np.concatenate([c, r]),
                         np.concatenate([v, -v])), self.n)
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def submatrix(self, keep):
        """Rows and columns selected by the boolean mask ``keep`` (renumbered)."""
        keep = np.asarray(keep, bool)
        new = -np.ones(self.n, np.int64)
        new[keep] = np.arange(int(keep.sum()))
        r, c, v = self.coo()
        sel = keep[r] & keep[c]
        return assemble((new[r[sel]], new[c[sel]], v[sel]), int(keep.sum()), self.symmetric)

    def dump(self, path):
        """Coordinate text format, one ``row col value`` triple per line."""
        r, c, v = self.coo()
        with open(path, "w") as fh:
            for i, j, x in zip(r, c, v):
                fh.write(f"{int(i)} {int(j)} {float(x)!r}\n")


def assemble(triplets, n, symmetric=False):
    """Sum duplicate ``(row, col, value)`` triplets into compressed rows.

    ``triplets`` is either an iterable of tuples or a ``(rows, cols, vals)``
    triple of arrays. The result does not depend on the triplet order.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and \
            all(isinstance(a, np.ndarray) for a in triplets):
        rows, cols, vals = triplets
    else:
        trip = list(triplets)
        if trip:
            rows, cols, vals = (np.asarray(a) for a in zip(*trip))
        else:
            rows = cols = np.zeros(0, np.int64)
            vals = np.zeros(0)
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    vals = vals.astype(float)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise InvalidArgument(f"triplet index out of range for dimension {n}")
    indptr, indices, data = _kernels.coo_to_csr(rows, cols, vals, int(n))
    return SparseMatrix(int(n), indptr, indices, data, symmetric)


def solve_spd(A, b, tol=DEFAULT_TOL, maxiter=None, x0=None, return_info=False):
    """Jacobi-preconditioned CG; raises SolverFailure past ``20 n`` iterations."""
    b = np.asarray(b, float)
    if A.symmetric:
        scale = A.max_abs()
        if scale and A.asymmetry() > 1e-12 * scale:
            raise InvalidArgument("matrix flagged symmetric is not symmetric")
    d = A.diagonal()
    if np.any(d <= 0):
        raise InvalidArgument("matrix has a nonpositive diagonal entry; not SPD")
    maxiter = 20 * A.n if maxiter is None else maxiter
    x0 = np.zeros(A.n) if x0 is None else np.asarray(x0, float)
    x, it, res = _kernels.pcg(A.indptr, A.indices, A.data, 1.0 / d, b, x0, float(tol), int(maxiter))
    if not np.isfinite(res) or res > tol:
        raise SolverFailure(f"PCG stopped after {it} iterations at relative residual {res:.3e}",
                            residual=res, iterations=it)
    if return_info:
        return x, {"iterations": int(it), "residual": float(res)}
    return x


@dataclass
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    mode: str = "square"


def solve_dense(system):
    """Square mode: LU with partial pivoting. ``lstsq`` mode: minimum-norm
    least squares; the residual norm is available via ``lstsq_min_norm``."""
    A = np.asarray(system.matrix, float)
    b = np.asarray(system.rhs, float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise InvalidArgument("dense system has non-finite entries")
    if system.mode == "square":
        return _solve_square(A, b)
    if system.mode == "lstsq":
        return lstsq_min_norm(A, b)[0]
    raise InvalidArgument(f"unknown dense solve mode {system.mode!r}")


def _solve_square(A, b):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument("square mode needs a square matrix")
    norm = np.abs(A).max() if A.size else 0.0
    with warnings.catch_warnings():
        # singularity is detected and reported below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if norm == 0.0 or np.abs(np.diag(lu)).min() < 1e-12 * norm:
        with np.errstate(divide="ignore"):
            cond = np.linalg.cond(A)
        raise SingularSystem(f"singular dense system (condition {cond:.3e})", condition=cond)
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def lstsq_min_norm(A, b, rcond=1e-12):
    """Minimum-norm least squares through a column-pivoted orthogonal factorisation.

    Returns ``(x, residual_norm, rank)``.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    if A.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(b)), 0
    x, _, rank, _ = scipy.linalg.lstsq(A, b, cond=rcond, lapack_driver="gelsy", check_finite=False)
    res = float(np.linalg.norm(A @ x - b))
    return x, res, int(rank)


def condition_estimate(A, iters=200, tol=1e-8, seed=0):
    """Spectral condition number by power iteration (largest eigenvalue) and
    inverse iteration with PCG (smallest)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.n)
    v /= np.linalg.norm(v)
    lam_max = 0.0
    for _ in range(iters):
        w = A @ v
        lam = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(lam - lam_max) <= 1e-6 * abs(lam):
            lam_max = lam
            break
        lam_max = lam
    v = rng.standard_normal(A.n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = solve_spd(A, v, tol=tol, maxiter=100 * A.n)
        m = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(m - mu) <= 1e-6 * abs(m):
            mu = m
            break
        mu = m
    return lam_max * mu
