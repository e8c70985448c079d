"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``CUTFLUX_DISABLE_NUMBA`` is unset or ``0``. Both variants are
always importable as ``<name>_numpy`` / ``<name>_numba`` so they can be
benchmarked against each other.
"""
import os

import numpy as np

try:
    import numba
    from numba import njit
    _NUMBA_IMPORTED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _NUMBA_IMPORTED = False

USE_NUMBA = _NUMBA_IMPORTED and os.environ.get("CUTFLUX_DISABLE_NUMBA", "0") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _jit(func):
    if not _NUMBA_IMPORTED:
        return None
    return njit(cache=True, nogil=True)(func)


# --------------------------------------------------------------------------
# triplet reduction to compressed rows
# --------------------------------------------------------------------------

def _triplet_order(rows, cols, vals):
    # value is the last key so duplicates are summed in a permutation-free order
    return np.lexsort((vals, cols, rows))


def coo_to_csr_numpy(rows, cols, vals, n):
    order = _triplet_order(rows, cols, vals)
    r = rows[order]
    c = cols[order]
    v = vals[order]
    if r.size == 0:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0)
    new = np.empty(r.size, bool)
    new[0] = True
    new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(new)
    data = np.zeros(starts.size)
    seg = np.cumsum(new) - 1
    # sequential accumulation; np.add.at is unbuffered and in index order
    np.add.at(data, seg, v)
    indices = c[starts].astype(np.int64)
    counts = np.bincount(r[starts], minlength=n)
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, indices, data


def _coo_sorted_reduce(r, c, v, n):
    m = r.size
    indptr = np.zeros(n + 1, np.int64)
    indices = np.empty(m, np.int64)
    data = np.empty(m)
    k = -1
    for j in range(m):
        if j == 0 or r[j] != r[j - 1] or c[j] != c[j - 1]:
            k += 1
            indices[k] = c[j]
            data[k] = v[j]
            indptr[r[j] + 1] += 1
        else:
            data[k] += v[j]
    for i in range(n):
        indptr[i + 1] += indptr[i]
    return indptr, indices[:k + 1].copy(), data[:k + 1].copy()


_coo_sorted_reduce_nb = _jit(_coo_sorted_reduce)


def coo_to_csr_numba(rows, cols, vals, n):
    order = _triplet_order(rows, cols, vals)
    return _coo_sorted_reduce_nb(rows[order].astype(np.int64), cols[order].astype(np.int64),
                                 vals[order].astype(np.float64), n)


# --------------------------------------------------------------------------
# CSR matrix-vector product
# --------------------------------------------------------------------------

def csr_matvec_numpy(indptr, indices, data, x):
    n = indptr.size - 1
    prod = data * x[indices]
    out = np.zeros(n)
    nz = np.flatnonzero(np.diff(indptr) > 0)
    if nz.size:
        out[nz] = np.add.reduceat(prod, indptr[nz])
    return out


def _csr_matvec(indptr, indices, data, x):
    n = indptr.size - 1
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        out[i] = s
    return out


csr_matvec_numba = _jit(_csr_matvec)


# --------------------------------------------------------------------------
# Jacobi-preconditioned conjugate gradients
# --------------------------------------------------------------------------

def _pcg_loop(matvec, indptr, indices, data, dinv, b, x, tol, maxiter):
    r = b - matvec(indptr, indices, data, x)
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return x * 0.0, 0, 0.0
    z = dinv * r
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    rnorm = np.sqrt(np.dot(r, r))
    while rnorm > tol * bnorm and it < maxiter:
        q = matvec(indptr, indices, data, p)
        alpha = rz / np.dot(p, q)
        x = x + alpha * p
        r = r - alpha * q
        it += 1
        if it % 50 == 0:
            # replace the recursive residual to limit drift
            r = b - matvec(indptr, indices, data, x)
        z = dinv * r
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= tol * bnorm:
            # confirm on the true residual; restart from it if drift hid a miss
            r = b - matvec(indptr, indices, data, x)
            rnorm = np.sqrt(np.dot(r, r))
            if rnorm > tol * bnorm:
                z = dinv * r
                p = z.copy()
                rz = np.dot(r, z)
    r = b - matvec(indptr, indices, data, x)
    return x, it, np.sqrt(np.dot(r, r)) / bnorm


def pcg_numpy(indptr, indices, data, dinv, b, x0, tol, maxiter):
    return _pcg_loop(csr_matvec_numpy, indptr, indices, data, dinv, b, x0.copy(), tol, maxiter)


def _pcg_nb_body(indptr, indices, data, dinv, b, x, tol, maxiter):
    n = b.size
    r = b - _csr_matvec_nb(indptr, indices, data, x)
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    z = dinv * r
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    rnorm = np.sqrt(np.dot(r, r))
    while rnorm > tol * bnorm and it < maxiter:
        q = _csr_matvec_nb(indptr, indices, data, p)
        alpha = rz / np.dot(p, q)
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * q[i]
        it += 1
        if it % 50 == 0:
            r = b - _csr_matvec_nb(indptr, indices, data, x)
        for i in range(n):
            z[i] = dinv[i] * r[i]
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        for i in range(n):
            p[i] = z[i] + beta * p[i]
        rz = rz_new
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= tol * bnorm:
            r = b - _csr_matvec_nb(indptr, indices, data, x)
            rnorm = np.sqrt(np.dot(r, r))
            if rnorm > tol * bnorm:
                z = dinv * r
                p = z.copy()
                rz = np.dot(r, z)
    r = b - _csr_matvec_nb(indptr, indices, data, x)
    return x, it, np.sqrt(np.dot(r, r)) / bnorm


if _NUMBA_IMPORTED:
    _csr_matvec_nb = csr_matvec_numba
    _pcg_nb = _jit(_pcg_nb_body)
else:  # pragma: no cover
    _pcg_nb = None


def pcg_numba(indptr, indices, data, dinv, b, x0, tol, maxiter):
    return _pcg_nb(indptr, indices, data, dinv, b, x0.copy(), float(tol), int(maxiter))


# --------------------------------------------------------------------------
# P1 element geometry: barycentric gradients and areas
# --------------------------------------------------------------------------

def p1_gradients_numpy(xy):
    """xy: (T, 3, 2) vertex coordinates -> (grads (T, 3, 2), signed areas (T,))."""
    e1 = xy[:, 1] - xy[:, 0]
    e2 = xy[:, 2] - xy[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    grads = np.empty_like(xy)
    # gradient of lambda_j is rot90 of the opposite edge over 2*area
    for j in range(3):
        a = xy[:, (j + 1) % 3]
        b = xy[:, (j + 2) % 3]
        grads[:, j, 0] = (a[:, 1] - b[:, 1]) / det
        grads[:, j, 1] = (b[:, 0] - a[:, 0]) / det
    return grads, 0.5 * det


def _p1_gradients(xy):
    t = xy.shape[0]
    grads = np.empty((t, 3, 2))
    area = np.empty(t)
    for k in range(t):
        e1x = xy[k, 1, 0] - xy[k, 0, 0]
        e1y = xy[k, 1, 1] - xy[k, 0, 1]
        e2x = xy[k, 2, 0] - xy[k, 0, 0]
        e2y = xy[k, 2, 1] - xy[k, 0, 1]
        det = e1x * e2y - e1y * e2x
        for j in range(3):
            a = (j + 1) % 3
            b = (j + 2) % 3
            grads[k, j, 0] = (xy[k, a, 1] - xy[k, b, 1]) / det
            grads[k, j, 1] = (xy[k, b, 0] - xy[k, a, 0]) / det
        area[k] = 0.5 * det
    return grads, area


p1_gradients_numba = _jit(_p1_gradients)


if USE_NUMBA:
    coo_to_csr = coo_to_csr_numba
    csr_matvec = csr_matvec_numba
    pcg = pcg_numba
    p1_gradients = p1_gradients_numba
else:
    coo_to_csr = coo_to_csr_numpy
    csr_matvec = csr_matvec_numpy
    pcg = pcg_numpy
    p1_gradients = p1_gradients_numpy
