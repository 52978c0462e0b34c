"""Minimization of pinned quadratic forms with affine boundary data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _backend
from .errors import HomogenizationError, NoConvergence
from .lattice import energy as energy_of

ORACLE_LIMIT = 4096


@dataclass(eq=False)
class Minimizer:
    """Minimizing field and solver diagnostics.

    ``floating`` counts free sites in components with no pinned site; their
    values are the component mean of the affine datum (any constant is a
    minimizer there).  ``restart_energies`` holds the energy at every restart
    boundary of the iterative solve.
    """

    u: np.ndarray
    energy_value: float
    iterations: int
    relative_residual: float
    floating: int = 0
    restart_energies: list = field(default_factory=list)


def default_max_iter(n_free):
    return int(50 * np.sqrt(n_free)) + 1000


@dataclass(eq=False)
class PairOperator:
    """Free-block operator ``(A x)_a = diag_a x_a - sum w x_b`` over free pairs.

    Each unordered free-free pair ``(a, b)`` is stored once in reduced
    (free-site) numbering.  ``A`` is half the Hessian of the energy.
    """

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    diag: np.ndarray

    def __len__(self):
        return len(self.diag)

    def matvec(self, x):
        out = self.diag * x
        out -= np.bincount(self.i, weights=self.w * x[self.j], minlength=len(x))
        out -= np.bincount(self.j, weights=self.w * x[self.i], minlength=len(x))
        return out

    def toarray(self):
        M = np.diag(self.diag)
        np.subtract.at(M, (self.i, self.j), self.w)
        np.subtract.at(M, (self.j, self.i), self.w)
        return M


def _split(form, prob, z):
    """Affine datum, free index set, floating sites and the free-block system."""
    u = prob.affine(z)
    is_free = prob.free.copy()
    free = np.flatnonzero(is_free)
    floating = np.zeros(0, dtype=np.int_)
    if len(free):
        n = prob.n_sites
        graph = coo_matrix((np.ones(len(form)), (form.i, form.j)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        has_pin = np.zeros(labels.max() + 1, dtype=bool)
        has_pin[labels[prob.pinned]] = True
        float_mask = ~has_pin[labels[free]]
        floating = free[float_mask]
        for c in np.unique(labels[floating]):
            members = floating[labels[floating] == c]
            u[members] = u[members].mean()
        is_free[floating] = False
        free = free[~float_mask]

    m = len(free)
    pos = np.full(prob.n_sites, -1, dtype=np.int_)
    pos[free] = np.arange(m)
    fi, fj = is_free[form.i], is_free[form.j]
    diag = np.bincount(pos[form.i[fi]], weights=form.w[fi], minlength=m)
    diag += np.bincount(pos[form.j[fj]], weights=form.w[fj], minlength=m)
    both = fi & fj
    op = PairOperator(pos[form.i[both]], pos[form.j[both]], form.w[both], diag)
    # pinned partners move to the right-hand side
    ip, jp = fi & ~fj, fj & ~fi
    b = np.bincount(pos[form.i[ip]], weights=form.w[ip] * u[form.j[ip]], minlength=m)
    b += np.bincount(pos[form.j[jp]], weights=form.w[jp] * u[form.i[jp]], minlength=m)
    return u, free, floating, op, b


def minimize_quadratic(form, prob, z, tol=1e-10, max_iter=None, restart_every=500, impl=None):
    """Minimize ``form`` over fields equal to ``<z, x>`` on pinned sites.

    Solves the free-block stationarity system by Jacobi-preconditioned
    conjugate gradients started from the affine field.  The solve restarts
    every ``restart_every`` iterations from a freshly computed residual.
    Raises :class:`NoConvergence` (carrying the last iterate) when
    ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise HomogenizationError("config-invalid", "tol must be positive")
    u, free, floating, A, b = _split(form, prob, z)
    if len(free) == 0:
        return Minimizer(u, energy_of(form, u), 0, 0.0, len(floating))

    if max_iter is None:
        max_iter = default_max_iter(len(free))
    diag = A.diag
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.ascontiguousarray(u[free])
    bnorm = float(np.linalg.norm(b))
    restarts = []
    total = 0
    rel = 0.0
    while True:
        chunk = min(restart_every, max_iter - total)
        it, _ = _backend.pcg(A, b, x, inv_diag, tol, max(chunk, 0), impl=impl)
        total += it
        u[free] = x
        restarts.append(energy_of(form, u))
        true_res = float(np.linalg.norm(b - A.matvec(x)))
        rel = true_res / bnorm if bnorm > 0 else true_res
        if rel <= tol or (bnorm == 0 and true_res == 0):
            break
        if total >= max_iter or it == 0:
            best = Minimizer(u, restarts[-1], total, rel, len(floating), restarts)
            raise NoConvergence(best, f"relative residual {rel:.3e} after {total} iterations")
    return Minimizer(u, restarts[-1], total, rel, len(floating), restarts)


def dense_oracle_solve(form, prob, z):
    """Direct Cholesky solve of the free block; limited to small instances."""
    n_free = int(prob.free.sum())
    if n_free > ORACLE_LIMIT:
        raise HomogenizationError("oracle-too-large", f"{n_free} free sites > {ORACLE_LIMIT}")
    u, free, floating, A, b = _split(form, prob, z)
    if len(free):
        M = A.toarray()
        u[free] = scipy.linalg.solve(M, b, assume_a="pos")
        res = float(np.linalg.norm(M @ u[free] - b))
        bn = float(np.linalg.norm(b))
        rel = res / bn if bn > 0 else res
    else:
        rel = 0.0
    return Minimizer(u, energy_of(form, u), 0, rel, len(floating))
