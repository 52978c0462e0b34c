"""Lattice discretization of cell problems and assembly of pairwise forms.

Sites are cell centers of the grid ``h Z^d`` covering a region ``U`` (a cube
``Q_R`` or a union of boxes) plus an exterior margin.  Each site stands for
a cell of volume ``h^d``, so the double integral
``int_U int b(x, y) (u(x) - u(y))^2`` becomes a sum over site pairs with
weight ``b * h^(2d)`` per ordered pair.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix

from . import _backend
from .errors import HomogenizationError

EXTERIOR, COLLAR, FREE = 0, 1, 2
VARIANTS = ("truncated-ambient", "restricted-full", "restricted-truncated")
QUADRATURES = ("moment", "cell", "point")

_TOL = 1e-9


def _as_multiple(value, h, what):
    n = value / h
    if abs(n - round(n)) > _TOL * max(1.0, abs(n)):
        raise HomogenizationError("incommensurate", f"{what}={value:g} is not a multiple of h={h:g}")
    return int(round(n))


@dataclass(eq=False)
class LatticeProblem:
    """Sites, region membership and boundary masks for one cell problem.

    ``mask`` holds ``EXTERIOR`` (outside ``U``), ``COLLAR`` (inside ``U`` at
    distance ``< K`` from the boundary) or ``FREE``.  ``R`` is ``None`` for
    regions that are not a single cube.
    """

    d: int
    h: float
    K: float
    R: float | None
    shape: tuple
    origin: np.ndarray
    inside: np.ndarray
    boundary_distance: np.ndarray
    mask: np.ndarray
    boxes: tuple
    margin: float

    @property
    def n_sites(self):
        return int(np.prod(self.shape))

    @cached_property
    def grid_index(self):
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def coords(self):
        return self.origin + self.h * self.grid_index

    @property
    def free(self):
        return self.mask == FREE

    @property
    def pinned(self):
        return self.mask != FREE

    @property
    def volume(self):
        return float(self.inside.sum()) * self.h**self.d

    @property
    def box(self):
        lo = self.origin - 0.5 * self.h
        return lo, lo + self.h * np.asarray(self.shape)

    def counts(self):
        return {
            "exterior": int((self.mask == EXTERIOR).sum()),
            "collar": int((self.mask == COLLAR).sum()),
            "free": int((self.mask == FREE).sum()),
        }

    def affine(self, z):
        """Affine field ``<z, x>`` on all sites."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return self.coords @ z


def build_region_problem(boxes, h, K, margin=None):
    """Lattice problem on a union of axis-aligned boxes.

    Box corners must be commensurate with ``h`` so that cell faces line up
    with the region boundary.  Distances to the boundary are measured from a
    site to the nearest exterior site minus ``h/2``, which is exact on faces
    of boxes and makes the collar of a union contained in the collars of its
    parts.
    """
    boxes = tuple((np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float)))
                  for lo, hi in boxes)
    if not boxes:
        raise HomogenizationError("config-invalid", "region needs at least one box")
    d = len(boxes[0][0])
    if h <= 0:
        raise HomogenizationError("config-invalid", "h must be positive")
    nK = int(round(K / h))
    if nK < 1:
        raise HomogenizationError("config-invalid", "K must be at least h")
    K = nK * h
    nm = max(1, int(round((K if margin is None else margin) / h)))

    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    for blo, bhi in boxes:
        for v in np.concatenate([blo - lo, bhi - lo]):
            _as_multiple(float(v), h, "box corner offset")
        if np.any(bhi <= blo):
            raise HomogenizationError("config-invalid", "empty box in region")
    ncell = np.array([_as_multiple(float(v), h, "region extent") for v in hi - lo])
    shape = tuple(int(n) for n in ncell + 2 * nm)
    origin = lo - nm * h + 0.5 * h

    axes = [origin[k] + h * np.arange(shape[k]) for k in range(d)]
    inside = np.zeros(shape, dtype=bool)
    for blo, bhi in boxes:
        m = np.ones(shape, dtype=bool)
        for k in range(d):
            sh = [1] * d
            sh[k] = shape[k]
            m &= ((axes[k] > blo[k]) & (axes[k] < bhi[k])).reshape(sh)
        inside |= m
    dist = ndimage.distance_transform_edt(inside) * h - 0.5 * h
    dist = np.where(inside, dist, -1.0).ravel()
    inside = inside.ravel()

    mask = np.full(inside.shape, EXTERIOR, dtype=np.int8)
    collar = inside & (dist < K - _TOL * h)
    mask[collar] = COLLAR
    mask[inside & ~collar] = FREE
    return LatticeProblem(
        d=d, h=float(h), K=K, R=None, shape=shape, origin=origin, inside=inside,
        boundary_distance=dist, mask=mask, boxes=boxes, margin=nm * h,
    )


def build_problem(d, R, h, K, margin=None):
    """Cell problem on the centered cube ``Q_R = [-R/2, R/2]^d``.

    ``K`` is rounded to a multiple of ``h``; the exterior margin defaults to
    ``K`` which is the reach of the truncated ambient energy.
    """
    if R <= 0 or h <= 0:
        raise HomogenizationError("config-invalid", "R and h must be positive")
    _as_multiple(R, h, "R")
    Kr = round(K / h) * h
    if R <= 2 * Kr + _TOL * h:
        raise HomogenizationError("no-free-sites", f"R={R:g} <= 2K={2 * Kr:g}")
    half = np.full(d, R / 2.0)
    prob = build_region_problem([(-half, half)], h, K, margin)
    prob.R = float(R)
    return prob


@dataclass(eq=False)
class QuadraticForm:
    """Symmetric pairwise form ``E(u) = sum_k w_k (u[i_k] - u[j_k])^2``.

    Pairs are unordered (``i < j``), sorted, and carry the full weight of
    both orientations that the region integral counts.
    """

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    n_sites: int

    def __len__(self):
        return len(self.w)

    def energy(self, u):
        return energy(self, u)

    def subset(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return QuadraticForm(self.i[keep], self.j[keep], self.w[keep], self.n_sites)

    @cached_property
    def laplacian(self):
        """Graph Laplacian ``L`` with ``E(u) = u^T L u`` (CSR)."""
        n = self.n_sites
        rows = np.concatenate([self.i, self.j, self.i, self.j])
        cols = np.concatenate([self.j, self.i, self.i, self.j])
        vals = np.concatenate([-self.w, -self.w, self.w, self.w])
        L = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        L.sum_duplicates()
        return L

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write("# columns: site_i site_j weight\n")
            for a, b, c in zip(self.i, self.j, self.w):
                fh.write(f"{a} {b} {c:.17g}\n")


def energy(form, u):
    """``sum w_ij (u_i - u_j)^2``; raises ``field-incomplete`` on missing values."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or len(u) < form.n_sites:
        raise HomogenizationError("field-incomplete", "field shorter than the site set")
    if len(form) == 0:
        return 0.0
    used = np.concatenate([form.i, form.j])
    if not np.all(np.isfinite(u[used])):
        raise HomogenizationError("field-incomplete", "missing value at a referenced site")
    return _backend.pair_energy(form.i, form.j, form.w, u)


def half_offsets(radius, d):
    """Integer offsets with ``|k|_inf <= radius`` whose first nonzero entry is positive."""
    r = int(radius)
    grids = np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    nz = k != 0
    first = np.argmax(nz, axis=1)
    lead = k[np.arange(len(k)), first]
    return k[nz.any(axis=1) & (lead > 0)]


def _subcell_nodes(d, h, subdivisions):
    m = int(subdivisions)
    t = h * ((np.arange(m) + 0.5) / m - 0.5)
    grids = np.meshgrid(*([t] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def discrete_kernel(kernel, h, offsets, rule="moment", subdivisions=8):
    """Lattice weights ``a_h(k h)`` for integer offsets ``k``.

    ``point`` samples ``a`` at the site offset.  ``cell`` averages ``a`` over
    the offset cell.  ``moment`` averages ``a(eta) |eta|^2`` over the cell
    and divides by ``|k h|^2``: the lattice sum of ``a_h(xi) xi xi^T h^d``
    then reproduces the second-moment tensor up to sub-cell quadrature error,
    so constant-coefficient affine energies are resolved at any ``h``.
    Averages use ``subdivisions^d`` midpoint nodes per cell.
    """
    if rule not in QUADRATURES:
        raise HomogenizationError("config-invalid", f"unknown quadrature rule {rule!r}")
    xi = np.asarray(offsets, dtype=float).reshape(-1, kernel.d) * h
    if rule == "point":
        return kernel(xi)
    nodes = _subcell_nodes(kernel.d, h, subdivisions)
    out = np.empty(len(xi))
    chunk = max(1, 200_000 // len(nodes))
    for s in range(0, len(xi), chunk):
        eta = xi[s:s + chunk, None, :] + nodes[None, :, :]
        r2 = np.sum(eta * eta, axis=-1)
        a = kernel.radial(np.sqrt(r2))
        if rule == "cell":
            out[s:s + chunk] = a.mean(axis=1)
        else:
            num = (a * r2).mean(axis=1)
            den = np.sum(xi[s:s + chunk] ** 2, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[s:s + chunk] = np.where(den > 0, num / den, a.mean(axis=1))
    return out


def _reach(kernel, h, rule):
    extra = 0.0 if rule == "point" else 0.5 * h * np.sqrt(kernel.d)
    return int(np.floor((kernel.cutoff + extra) / h + _TOL))


def _shift_pairs(shape, k):
    """Flat index pairs ``(s, s + k)`` for all grid sites where both exist."""
    src, dst = [], []
    for n, kk in zip(shape, k):
        src.append(slice(max(0, -kk), n - max(0, kk)))
        dst.append(slice(max(0, kk), n - max(0, -kk)))
    flat = np.arange(int(np.prod(shape))).reshape(shape)
    return flat[tuple(src)].ravel(), flat[tuple(dst)].ravel()


def assemble_pairs(prob, offsets, weights, site_factor=None, ambient=False):
    """Assemble a form from per-offset base weights.

    Both endpoints must lie in ``U`` unless ``ambient`` is set, in which case
    pairs with one endpoint in ``U`` count once and pairs inside ``U`` count
    twice (ordered pairs with first point in ``U``).  Restricted pairs count
    twice.  ``site_factor`` multiplies each endpoint (``B(x) B(y)``).
    """
    inside = prob.inside
    scale = prob.h ** (2 * prob.d)
    I, J, W = [], [], []
    for k, a in zip(offsets, weights):
        if a == 0.0:
            continue
        s, t = _shift_pairs(prob.shape, k)
        if len(s) == 0:
            continue
        mult = inside[s].astype(float) + inside[t]
        if not ambient:
            mult = np.where(mult == 2.0, 2.0, 0.0)
        w = mult * (a * scale)
        if site_factor is not None:
            w = w * site_factor[s] * site_factor[t]
        keep = w > 0
        I.append(s[keep])
        J.append(t[keep])
        W.append(w[keep])
    if not I:
        empty = np.zeros(0, dtype=np.int_)
        return QuadraticForm(empty, empty.copy(), np.zeros(0), prob.n_sites)
    I, J, W = np.concatenate(I), np.concatenate(J), np.concatenate(W)
    order = np.lexsort((J, I))
    return QuadraticForm(I[order].astype(np.int_), J[order].astype(np.int_), W[order], prob.n_sites)


def assemble_form(prob, real, kernel, variant="truncated-ambient", quadrature="moment",
                  subdivisions=8, K=None):
    """Pairwise form of one cell-problem variant.

    ``truncated-ambient``: ``x`` in ``U``, ``y`` anywhere, ``|x - y| < K``.
    ``restricted-full``: ``x, y`` in ``U``, full kernel range.
    ``restricted-truncated``: ``x, y`` in ``U``, ``|x - y| < K``.
    ``K`` defaults to the problem's collar width.
    """
    if variant not in VARIANTS:
        raise HomogenizationError("config-invalid", f"unknown variant {variant!r}")
    if kernel.d != prob.d:
        raise HomogenizationError("config-invalid", "kernel and lattice dimensions differ")
    h = prob.h
    K = prob.K if K is None else K
    offsets = half_offsets(_reach(kernel, h, quadrature), prob.d)
    base = discrete_kernel(kernel, h, offsets, quadrature, subdivisions)
    if variant != "restricted-full":
        dist = np.linalg.norm(offsets, axis=1) * h
        base = np.where(dist < K - _TOL * h, base, 0.0)
    if variant == "truncated-ambient":
        used = offsets[base > 0]
        if len(used) and np.abs(used).max() * h > prob.margin + _TOL * h:
            raise HomogenizationError("margin-underflow", "exterior margin shorter than the interaction range")

    ambient = variant == "truncated-ambient"
    need = np.ones(prob.n_sites, dtype=bool) if ambient else prob.inside
    factor = np.zeros(prob.n_sites)
    if real is None:
        factor[need] = 1.0
    else:
        factor[need] = real.site_factor(prob.coords[need])
    return assemble_pairs(prob, offsets, base, factor, ambient=ambient)


def cross_boundary_pairs(form, prob):
    """Boolean mask of pairs joining a site of ``U`` to an exterior site."""
    return prob.inside[form.i] != prob.inside[form.j]


def range_form(prob, kernel=None, r_min=0.0, r_max=np.inf, real=None, closed_max=False):
    """Restricted form over pairs with ``r_min < |x - y| < r_max`` inside ``U``.

    With ``kernel`` the base weight is the point value ``a(x - y)``; without
    it pairs are unweighted.  ``closed_max`` includes ``|x - y| = r_max``.
    """
    h, d = prob.h, prob.d
    radius = int(np.ceil(min(r_max, float(np.max(prob.shape)) * h) / h))
    offsets = half_offsets(radius, d)
    dist = np.linalg.norm(offsets, axis=1) * h
    upper = dist <= r_max * (1 + _TOL) if closed_max else dist < r_max * (1 - _TOL)
    sel = (dist > r_min * (1 + _TOL)) & upper
    offsets = offsets[sel]
    base = np.ones(len(offsets)) if kernel is None else kernel(offsets * h)
    factor = None
    if real is not None:
        factor = np.zeros(prob.n_sites)
        factor[prob.inside] = real.site_factor(prob.coords[prob.inside])
    return assemble_pairs(prob, offsets, base, factor, ambient=False)
