"""Pure numpy/scipy versions of the hot kernels in ``_core.pyx``.

Signatures match the compiled module exactly; ``_backend`` picks one.
"""
import numpy as np
from scipy.sparse import coo_matrix, diags


def pair_energy(i, j, w, u):
    diff = u[i] - u[j]
    return float(np.dot(w, diff * diff))


def pair_operator_matrix(pi, pj, pw, diag):
    """CSR matrix of ``diag - W`` where ``W`` holds each pair in both orientations."""
    n = len(diag)
    off = coo_matrix((pw, (pi, pj)), shape=(n, n))
    return (diags(diag) - off - off.T).tocsr()


def pcg(pi, pj, pw, diag, b, x, inv_diag, tol, max_iter):
    """Jacobi-preconditioned conjugate gradients, updating ``x`` in place.

    Stops when ``||b - A x|| <= tol * ||b||``.  Returns ``(iterations,
    residual_norm)``; the residual is the recursively updated one.
    """
    if len(b) == 0:
        return 0, 0.0
    A = pair_operator_matrix(pi, pj, pw, diag)
    r = b - A @ x
    target = tol * np.sqrt(np.dot(b, b))
    rnorm = np.sqrt(np.dot(r, r))
    if rnorm <= target:
        return 0, rnorm
    s = inv_diag * r
    p = s.copy()
    rho = np.dot(r, s)
    it = 0
    while it < max_iter:
        q = A @ p
        pq = np.dot(p, q)
        if pq <= 0.0:
            break
        alpha = rho / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= target:
            break
        s = inv_diag * r
        rho_new = np.dot(r, s)
        p *= rho_new / rho
        p += s
        rho = rho_new
    return it, rnorm
