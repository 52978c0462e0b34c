# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pair-energy fold and preconditioned CG on a pair operator.

The operator is ``(A x)_a = diag_a x_a - sum_{pairs (a,b)} w x_b`` with each
unordered pair given once; it is expanded to a symmetric CSR adjacency with
int32 indices before iterating.
"""
from libc.math cimport sqrt

import numpy as np
from scipy.sparse import coo_matrix

cimport numpy as cnp

cnp.import_array()


def pair_energy(const int[::1] i, const int[::1] j, const double[::1] w, const double[::1] u):
    cdef Py_ssize_t k, n = w.shape[0]
    cdef double acc = 0.0, diff
    with nogil:
        for k in range(n):
            diff = u[i[k]] - u[j[k]]
            acc += w[k] * diff * diff
    return acc


cdef void _matvec(Py_ssize_t n, const int* indptr, const int* indices, const double* data,
                  const double* diag, const double* x, double* out) noexcept nogil:
    cdef Py_ssize_t row
    cdef int k
    cdef double acc
    for row in range(n):
        acc = diag[row] * x[row]
        for k in range(indptr[row], indptr[row + 1]):
            acc -= data[k] * x[indices[k]]
        out[row] = acc


cdef double _dot(Py_ssize_t n, const double* a, const double* b) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(n):
        acc += a[k] * b[k]
    return acc


def pcg(const int[::1] pi, const int[::1] pj, const double[::1] pw, const double[::1] diag,
        const double[::1] b, double[::1] x, const double[::1] inv_diag,
        double tol, long max_iter):
    """Jacobi-preconditioned CG, updating ``x`` in place.

    Returns ``(iterations, residual_norm)``.
    """
    cdef Py_ssize_t n = b.shape[0], k
    cdef double[::1] r = np.empty(n)
    cdef double[::1] s = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double bnorm, target, rnorm = 0.0, rho, rho_new, pq, alpha, beta
    cdef long it = 0
    if n == 0:
        return 0, 0.0
    adj = coo_matrix((np.concatenate([pw, pw]),
                      (np.concatenate([pi, pj]), np.concatenate([pj, pi]))), shape=(n, n)).tocsr()
    cdef const int[::1] indptr = np.ascontiguousarray(adj.indptr, dtype=np.intc)
    cdef const int[::1] indices = np.ascontiguousarray(adj.indices, dtype=np.intc)
    cdef const double[::1] data = np.ascontiguousarray(adj.data, dtype=np.float64)
    cdef const int* ip = &indptr[0]
    cdef const int* jp = &indices[0] if len(adj.data) else NULL
    cdef const double* wp = &data[0] if len(adj.data) else NULL

    with nogil:
        _matvec(n, ip, jp, wp, &diag[0], &x[0], &q[0])
        for k in range(n):
            r[k] = b[k] - q[k]
        bnorm = sqrt(_dot(n, &b[0], &b[0]))
        target = tol * bnorm
        rnorm = sqrt(_dot(n, &r[0], &r[0]))
        if rnorm > target:
            for k in range(n):
                s[k] = inv_diag[k] * r[k]
                p[k] = s[k]
            rho = _dot(n, &r[0], &s[0])
            while it < max_iter:
                _matvec(n, ip, jp, wp, &diag[0], &p[0], &q[0])
                pq = _dot(n, &p[0], &q[0])
                if pq <= 0.0:
                    break
                alpha = rho / pq
                for k in range(n):
                    x[k] += alpha * p[k]
                    r[k] -= alpha * q[k]
                it += 1
                rnorm = sqrt(_dot(n, &r[0], &r[0]))
                if rnorm <= target:
                    break
                for k in range(n):
                    s[k] = inv_diag[k] * r[k]
                rho_new = _dot(n, &r[0], &s[0])
                beta = rho_new / rho
                for k in range(n):
                    p[k] = s[k] + beta * p[k]
                rho = rho_new
    return it, rnorm
