"""Numerical checks of the functional inequalities behind the compactness and
cell-formula arguments: local averages, the multistep energy bound, the
Poincare inequalities and the long-range tail bound.

Fields live on regular grids of cell centers over a box ``D`` and are read as
piecewise constant on the cells.  Functionals integrate over ``x`` by the
midpoint rule and over ``xi`` on the lattice ``(h / step) Z^d``, so every
displacement ``step * xi`` is a lattice vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import eigsh

from .errors import HomogenizationError
from .lattice import _TOL, energy, half_offsets, range_form

REL_SLACK = 1e-12
DENSE_EIG_LIMIT = 2048


@dataclass(frozen=True)
class InequalityReport:
    """Both sides of a one-sided check ``lhs <= constant_used * rhs``."""

    lhs: float
    rhs: float
    constant_used: float
    pass_: bool
    witness: str

    @property
    def ratio(self):
        """``lhs / rhs`` (``0`` when both vanish, ``inf`` when only ``rhs`` does)."""
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs == 0 else np.inf


def _report(lhs, rhs, constant, witness):
    lhs, rhs, constant = float(lhs), float(rhs), float(constant)
    bound = constant * rhs
    ok = lhs <= bound + REL_SLACK * max(abs(bound), abs(lhs)) if np.isfinite(bound) else True
    return InequalityReport(lhs, rhs, constant, bool(ok), witness)


@dataclass(frozen=True, eq=False)
class GridField:
    """Values at cell centers ``origin + (idx + 1/2) h`` of the box ``[origin, origin + shape h]``."""

    values: np.ndarray
    h: float
    origin: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", tuple(float(o) for o in np.atleast_1d(self.origin)))
        if v.ndim != len(self.origin):
            raise HomogenizationError("config-invalid", "origin length must match the field dimension")
        if self.h <= 0:
            raise HomogenizationError("config-invalid", "grid step must be positive")

    @property
    def d(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def box(self):
        lo = np.array(self.origin)
        return lo, lo + np.array(self.shape) * self.h

    @property
    def volume(self):
        return float(np.prod(np.array(self.shape) * self.h))

    @cached_property
    def boundary_distance(self):
        """Distance from each cell center to the boundary of the box."""
        out = None
        for ax, n in enumerate(self.shape):
            c = (np.arange(n) + 0.5) * self.h
            dist = np.minimum(c, n * self.h - c)
            dist = dist.reshape([-1 if a == ax else 1 for a in range(self.d)])
            out = dist if out is None else np.minimum(out, dist)
        return np.broadcast_to(out, self.shape)

    def inner(self, sigma):
        """Mask of sites in ``D(sigma) = {dist(x, boundary) > sigma}``."""
        return self.boundary_distance > sigma * (1 + _TOL) + _TOL * self.h

    def with_values(self, values):
        return GridField(values, self.h, self.origin)


def grid_field(fn, box, h):
    """Sample ``fn`` (vectorised over an ``(n, d)`` array) at the cell centers of ``box``."""
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    shape = tuple(int(round(n)) for n in (hi - lo) / h)
    if any(abs(s * h - (b - a)) > 1e-9 * max(1.0, b - a) for s, a, b in zip(shape, lo, hi)):
        raise HomogenizationError("incommensurate", "box sides must be multiples of h")
    axes = [lo[k] + (np.arange(shape[k]) + 0.5) * h for k in range(len(lo))]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return GridField(np.asarray(fn(pts), dtype=float).reshape(shape), h, tuple(lo))


def _ball_offsets(radius_sites, d):
    """Integer offsets with Euclidean norm at most ``radius_sites``."""
    r = int(np.floor(radius_sites + _TOL))
    grids = np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    return k[np.linalg.norm(k, axis=1) <= radius_sites * (1 + _TOL) + _TOL]


def _shift(values, k):
    """View pairs ``(values[x], values[x + k])`` over sites where both exist."""
    src, dst = [], []
    for n, kk in zip(values.shape, k):
        src.append(slice(max(0, -kk), n - max(0, kk)))
        dst.append(slice(max(0, kk), n - max(0, -kk)))
    return tuple(src), tuple(dst)


@dataclass(frozen=True)
class Mollifier:
    """Symmetric bump ``phi(xi) = (1 - |xi|^2)^2`` on the unit ball, averaging radius ``delta``."""

    profile: str = "bump"
    delta: float = 1.0

    def __post_init__(self):
        if self.profile != "bump":
            raise HomogenizationError("config-invalid", f"unknown mollifier profile {self.profile!r}")
        if not self.delta > 0:
            raise HomogenizationError("config-invalid", "mollifier radius must be positive")

    @staticmethod
    def phi(xi):
        r2 = np.sum(np.atleast_2d(xi) ** 2, axis=-1)
        return np.where(r2 <= 1.0, (1.0 - r2) ** 2, 0.0)

    def stencil(self, h, d):
        """Integer offsets and weights normalised to unit sum."""
        k = _ball_offsets(self.delta / h, d)
        w = self.phi(k * (h / self.delta))
        k, w = k[w > 0], w[w > 0]
        return k, w / w.sum()

    @staticmethod
    def _radial_moment(power, d):
        sphere = 2.0 * np.pi ** (d / 2) / special.gamma(d / 2)
        val, _ = integrate.quad(lambda r: (1.0 - r * r) ** (2 * power) * r ** (d - 1), 0.0, 1.0,
                                epsabs=1e-14, epsrel=1e-13)
        return sphere * val

    def mass(self, d):
        """``int phi`` over the unit ball."""
        return self._radial_moment(1, d)

    def l2_constant(self, d):
        """``sup phi / int phi``: bounds ``|avg - u|^2`` by the normalised difference energy (Jensen)."""
        return 1.0 / self.mass(d)

    def sup_constant(self, d):
        """``||phi||_2 / int phi``: bounds ``|avg(x)|`` by ``delta^(-d/2) ||u||_2`` (Cauchy-Schwarz)."""
        return np.sqrt(self._radial_moment(2, d)) / self.mass(d)


def local_average(u, delta, mollifier=None):
    """Discrete local average ``sum_k u(x + k h) phi_k`` on the sites where the stencil fits.

    Returns a :class:`GridField` on the sub-box of such sites.  Requires
    ``delta >= h``.
    """
    mol = mollifier or Mollifier(delta=delta)
    if mol.delta != delta:
        mol = Mollifier(mol.profile, delta)
    if delta < u.h * (1 - _TOL):
        raise HomogenizationError("config-invalid", "averaging radius below the grid step")
    k, w = mol.stencil(u.h, u.d)
    m = int(np.abs(k).max())
    out_shape = tuple(max(n - 2 * m, 0) for n in u.shape)
    out = np.zeros(out_shape)
    if min(out_shape) > 0:
        for kk, ww in zip(k, w):
            sl = tuple(slice(m + a, n - m + a) for a, n in zip(kk, u.shape))
            out += ww * u.values[sl]
    origin = tuple(o + m * u.h for o in u.origin)
    return GridField(out, u.h, origin)


def difference_functional(u, step, sigma, r=1.0, xi_step=None):
    """``int_{D(sigma)} int_{|xi| <= r} ((u(x + step xi) - u(x)) / step)^2``.

    ``xi`` runs over ``xi_step Z^d`` (default ``h / step``) with weight
    ``xi_step^d``; ``step * xi_step`` must be a multiple of ``h``.  Raises
    ``stencil-overflow`` when displacements leave the box.
    """
    h, d = u.h, u.d
    xi_step = h / step if xi_step is None else xi_step
    jump = step * xi_step / h
    if abs(jump - round(jump)) > 1e-9 or round(jump) < 1:
        raise HomogenizationError("config-invalid", "step * xi_step must be a positive multiple of h")
    jump = int(round(jump))
    if step * r > sigma * (1 + _TOL) + _TOL * h:
        raise HomogenizationError("stencil-overflow", "displacements of length step*r leave the box")
    mask = u.inner(sigma)
    k = _ball_offsets(r / xi_step, d)
    k = k[np.any(k != 0, axis=1)]
    vals = u.values
    total = 0.0
    for kk in k:
        disp = kk * jump
        src, dst = _shift(vals, disp)
        diff = vals[dst] - vals[src]
        total += float(np.sum((diff * diff)[mask[src]]))
    return total * h ** d * xi_step ** d / step ** 2


def verify_local_average_bounds(u, delta, sigma, mollifier=None):
    """Check the two local-average estimates on ``D(sigma)``.

    Returns ``(l2_report, sup_report)``.  The first compares
    ``||avg - u||^2_{L2(D(sigma))}`` with ``C delta^2 F_delta^{sigma,1}(u)``, the
    second ``max |avg|`` over ``D(sigma)`` with ``C delta^(-d/2) ||u||_2``.
    Constants come from quadrature of the bump profile.
    """
    if not delta < sigma:
        raise HomogenizationError("config-invalid", "need delta < sigma")
    mol = Mollifier(delta=delta) if mollifier is None else Mollifier(mollifier.profile, delta)
    mask = u.inner(sigma)
    if not mask.any():
        raise HomogenizationError("config-invalid", "D(sigma) contains no sites")
    avg = local_average(u, delta, mol)
    m = int(round((avg.origin[0] - u.origin[0]) / u.h))
    sl = tuple(slice(m, n - m) for n in u.shape)
    sub = mask[sl]
    d, h = u.d, u.h

    # sum of weighted differences: exactly zero for constant fields
    k, w = mol.stencil(h, d)
    centre = u.values[sl]
    gap = np.zeros(avg.shape)
    for kk, ww in zip(k, w):
        gap += ww * (u.values[tuple(slice(m + a, n - m + a) for a, n in zip(kk, u.shape))] - centre)
    lhs1 = float(np.sum(gap[sub] ** 2)) * h ** d
    rhs1 = delta ** 2 * difference_functional(u, delta, sigma)
    rep1 = _report(lhs1, rhs1, mol.l2_constant(d), f"l2 gap on D({sigma:g}), delta={delta:g}")

    lhs2 = float(np.max(np.abs(avg.values[sub])))
    rhs2 = delta ** (-d / 2) * np.sqrt(float(np.sum(u.values ** 2)) * h ** d)
    rep2 = _report(lhs2, rhs2, mol.sup_constant(d), f"sup of average on D({sigma:g}), delta={delta:g}")
    return rep1, rep2


def verify_multistep(u, epsilon, j, k):
    """Check ``F_{j eps}^{(j+k) eps, 1}(u) <= F_eps^{k eps, 1}(u)``.

    Both sides use the ``xi`` lattice ``(h / eps) Z^d``, on which the
    telescoping argument holds exactly.  Raises ``stencil-overflow`` when
    ``k < 1`` or ``D((j + k) eps)`` has no sites.
    """
    j, k = int(j), int(k)
    if j < 1:
        raise HomogenizationError("config-invalid", "need j >= 1")
    if epsilon < u.h * (1 - _TOL):
        raise HomogenizationError("config-invalid", "epsilon below the grid step")
    if k < 1 or not u.inner((j + k) * epsilon).any():
        raise HomogenizationError("stencil-overflow", f"j={j}, k={k}, eps={epsilon:g} leaves no inner region")
    xi_step = u.h / epsilon
    lhs = difference_functional(u, j * epsilon, (j + k) * epsilon, xi_step=xi_step)
    rhs = difference_functional(u, epsilon, k * epsilon, xi_step=xi_step)
    return _report(lhs, rhs, 1.0, f"multistep j={j}, k={k}, eps={epsilon:g}")


def _pair_form(u, reach, mask):
    """Unordered pairs ``|x - y| <= reach`` with both ends in ``mask`` (flat indices)."""
    d = u.d
    flat = np.arange(u.values.size).reshape(u.shape)
    I, J = [], []
    for kk in half_offsets(int(np.floor(reach / u.h + _TOL)), d):
        if np.linalg.norm(kk) * u.h > reach * (1 + _TOL) + _TOL * u.h:
            continue
        src, dst = _shift(flat, kk)
        a, b = flat[src].ravel(), flat[dst].ravel()
        keep = mask.ravel()[a] & mask.ravel()[b]
        I.append(a[keep])
        J.append(b[keep])
    if not I:
        return np.zeros(0, dtype=np.int_), np.zeros(0, dtype=np.int_)
    return np.concatenate(I), np.concatenate(J)


def poincare_constant(u_or_shape, h=None, epsilon=1.0, r0=1.0, mask=None):
    """Best constant of the discrete Poincare-Wirtinger inequality on a box.

    ``C = h^d / lambda_2`` where ``lambda_2`` is the smallest nonzero
    eigenvalue of the pair Laplacian of the right-hand side.  Returns
    ``inf`` when the interaction graph on ``mask`` is disconnected.
    """
    u = u_or_shape if isinstance(u_or_shape, GridField) else GridField(np.zeros(u_or_shape), h, (0.0,) * len(u_or_shape))
    mask = np.ones(u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask.ravel())
    n = len(idx)
    if n < 2:
        return np.inf
    i, j = _pair_form(u, r0 * epsilon, mask)
    pos = np.full(u.values.size, -1)
    pos[idx] = np.arange(n)
    i, j = pos[i], pos[j]
    w = 2.0 * u.h ** u.d * (u.h / epsilon) ** u.d / epsilon ** 2
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-np.full(len(i), w), -np.full(len(i), w), np.full(2 * len(i), w)])
    L = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if n <= DENSE_EIG_LIMIT:
        ev = np.linalg.eigvalsh(L.toarray())[:2]
    else:
        ev = np.sort(eigsh(L, k=2, sigma=-1e-6 * w, which="LM", return_eigenvectors=False))
    lam = ev[1]
    if lam <= 1e-10 * w * (2 * r0 * epsilon / u.h + 1) ** u.d:
        return np.inf
    return u.h ** u.d / lam


def wirtinger_energy(u, epsilon, r0, mask=None):
    """``int_D int_{|xi| <= r0, x + eps xi in D} ((u(x + eps xi) - u(x)) / eps)^2``."""
    mask = np.ones(u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    i, j = _pair_form(u, r0 * epsilon, mask)
    v = u.values.ravel()
    diff = v[i] - v[j]
    return 2.0 * float(np.dot(diff, diff)) * u.h ** u.d * (u.h / epsilon) ** u.d / epsilon ** 2


def _overlap_measure(m, h, rho):
    """Measure of ``{(s, t) in [0, h]^2 : |m h + t - s| < rho}``."""

    def cdf(t):
        t = np.clip(t, -h, h)
        return np.where(t <= 0, (t + h) ** 2 / 2, h * h - (h - t) ** 2 / 2)

    lo = np.maximum(-h, -rho - m * h)
    hi = np.minimum(h, rho - m * h)
    return np.where(hi > lo, cdf(hi) - cdf(lo), 0.0)


def zero_boundary_energy(u, epsilon):
    """``eps^-3 int_R int_{|y - x| < 2 eps} (u(y) - u(x))^2`` for the zero extension (1-d).

    Exact for the piecewise-constant reading of the field.
    """
    h = u.h
    rho = 2.0 * epsilon
    reach = int(np.ceil(rho / h)) + 1
    v = np.concatenate([np.zeros(reach), u.values, np.zeros(reach)])
    total = 0.0
    for m in range(1, reach + 1):
        mu = float(_overlap_measure(m, h, rho))
        if mu > 0:
            diff = v[m:] - v[:-m]
            total += 2.0 * mu * float(np.dot(diff, diff))
    return total / epsilon ** 3


def verify_poincare(u, mode, epsilon, r0=1.0, constant=None, mask=None):
    """Poincare checks.

    ``wirtinger``: ``int (u - u_D)^2 <= C * wirtinger_energy``; ``C`` defaults
    to the best discrete constant from :func:`poincare_constant`.  ``mask``
    restricts to a sub-region (perforated domains).

    ``zero-boundary`` (1-d): ``int u^2 <= 2 |D| * zero_boundary_energy`` for
    fields vanishing within ``2 eps`` of the boundary; raises
    ``bad-boundary-data`` otherwise.
    """
    h, d = u.h, u.d
    if mode == "wirtinger":
        m = np.ones(u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        vals = u.values[m]
        lhs = float(np.sum((vals - vals.mean()) ** 2)) * h ** d if len(vals) else 0.0
        rhs = wirtinger_energy(u, epsilon, r0, m)
        C = poincare_constant(u, epsilon=epsilon, r0=r0, mask=m) if constant is None else constant
        return _report(lhs, rhs, C, f"wirtinger eps={epsilon:g}, r0={r0:g}, sites={int(m.sum())}")
    if mode == "zero-boundary":
        if d != 1:
            raise HomogenizationError("config-invalid", "zero-boundary mode is one-dimensional")
        collar = u.boundary_distance - h / 2 < 2 * epsilon * (1 - _TOL)
        if np.any(u.values[collar] != 0):
            raise HomogenizationError("bad-boundary-data", "field does not vanish on the 2*eps collar")
        lhs = float(np.sum(u.values ** 2)) * h
        rhs = zero_boundary_energy(u, epsilon)
        C = 2.0 * u.volume if constant is None else constant
        return _report(lhs, rhs, C, f"zero-boundary eps={epsilon:g}, |D|={u.volume:g}")
    raise HomogenizationError("config-invalid", f"unknown Poincare mode {mode!r}")


def verify_tail_bound(form_full, form_short, u, K, kappa=1.0, constant=None):
    """Check ``E_long(u) <= C K^-kappa E_short(u)``.

    ``form_full`` holds the kernel-weighted pairs with ``|x - y| > K``,
    ``form_short`` the unweighted pairs with ``|x - y| < 1``.  Without a
    ``constant`` the achieved one, ``E_long K^kappa / E_short``, is reported.
    """
    lhs = energy(form_full, u)
    rhs = float(K) ** (-kappa) * energy(form_short, u)
    if constant is None:
        constant = lhs / rhs if rhs > 0 else 0.0
    return _report(lhs, rhs, constant, f"tail K={K:g}, kappa={kappa:g}, pairs={len(form_full)}")


@dataclass(frozen=True)
class TailScan:
    K: tuple
    ratios: tuple
    slope: float
    threshold: float
    reports: tuple
    pass_: bool


def tail_bound_scan(prob, kernel, u, K_schedule, real=None):
    """Tail ratios ``E_long / E_short`` over ``K_schedule`` and their log-log slope.

    Every ``K`` is checked against one common constant (the largest achieved
    ``C``); the scan passes when the fitted slope is at most ``-kappa + 1/2``.
    The kernel's cutoff should reach the box diameter so no tail is lost.
    """
    kappa = kernel.kappa
    short = range_form(prob, None, r_max=1.0)
    e_short = energy(short, u)
    fulls = [range_form(prob, kernel, r_min=K, real=real) for K in K_schedule]
    ratios = [energy(f, u) / e_short if e_short > 0 else 0.0 for f in fulls]
    C = max([r * K ** kappa for r, K in zip(ratios, K_schedule)] + [0.0])
    reports = tuple(verify_tail_bound(f, short, u, K, kappa, C) for f, K in zip(fulls, K_schedule))
    pos = [(np.log(K), np.log(r)) for K, r in zip(K_schedule, ratios) if r > 0]
    if len(pos) >= 2:
        x, y = np.array(pos).T
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = -np.inf
    threshold = -kappa + 0.5
    ok = slope <= threshold and all(r.pass_ for r in reports)
    return TailScan(tuple(float(K) for K in K_schedule), tuple(ratios), slope, threshold, reports, ok)
