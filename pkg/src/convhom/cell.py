"""Cell minima, the truncated densities gamma_K and the homogenized tensor.

``cell_minimum`` solves one Dirichlet problem on ``Q_R`` with affine data
on the collar of width ``K``.  Averaging over seeds and growing ``R`` gives
``gamma_K(z)``; the largest ``K`` on a schedule approximates ``gamma(z)``
and polarization fills in ``A_hom``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import HomogenizationError
from .kernel import EffectiveTensor
from .lattice import (
    assemble_form,
    build_problem,
    build_region_problem,
    cross_boundary_pairs,
    energy,
)
from .random_env import cube_box, sample_environment
from .solver import minimize_quadratic


@dataclass
class CellEstimate:
    z: tuple
    K: float
    R: float
    seed: int | None
    variant: str
    value: float
    affine_bound: float
    iterations: int = 0
    residual: float = 0.0


def margin_box(d, R, K):
    return cube_box(d, R / 2.0 + K)


def cell_minima(real, kernel, d, R, h, K, zs, variant="truncated-ambient",
                quadrature="moment", tol=1e-10, max_iter=None):
    """Cell minima divided by ``R^d`` for several directions on one instance."""
    prob = build_problem(d, R, h, K)
    form = assemble_form(prob, real, kernel, variant, quadrature)
    vol = float(R) ** d
    seed = None if real is None else real.seed
    out = []
    for z in zs:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        res = minimize_quadratic(form, prob, z, tol=tol, max_iter=max_iter)
        bound = energy(form, prob.affine(z)) / vol
        out.append(CellEstimate(
            z=tuple(float(v) for v in z), K=prob.K, R=float(R), seed=seed, variant=variant,
            value=res.energy_value / vol, affine_bound=bound,
            iterations=res.iterations, residual=res.relative_residual,
        ))
    return out


def cell_minimum(real, kernel, d, R, h, K, z, variant="truncated-ambient", **kw):
    """Minimum of the cell problem per unit volume.

    ``real`` must cover the margin box ``Q_{R+2K}`` for the ambient variant;
    ``None`` means the constant coefficient ``B = 1``.
    """
    return cell_minima(real, kernel, d, R, h, K, [z], variant, **kw)[0]


def sample_for_cell(env_spec, seed, d, R, h, K):
    """Realization on the margin box of ``Q_R``."""
    return sample_environment(env_spec, seed, margin_box(d, R, round(K / h) * h), h=h)


@dataclass
class SandwichReport:
    gap_minima: float
    gap_direct: float
    bound: float
    pass_: bool
    m_ambient: float
    m_restricted: float


def sandwich_check(real, kernel, d, R, h, K, z, quadrature="moment", tol=1e-10):
    """Compare ambient and restricted truncated minima.

    The difference of the two minima equals the affine interaction across
    the boundary of ``Q_R``; it is computed both ways.  ``bound`` is the
    gap per unit boundary size ``R^(d-1)``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    prob = build_problem(d, R, h, K)
    amb = assemble_form(prob, real, kernel, "truncated-ambient", quadrature)
    bar = assemble_form(prob, real, kernel, "restricted-truncated", quadrature)
    m_amb = minimize_quadratic(amb, prob, z, tol=tol).energy_value
    m_bar = minimize_quadratic(bar, prob, z, tol=tol).energy_value
    cross = amb.subset(cross_boundary_pairs(amb, prob))
    direct = energy(cross, prob.affine(z))
    gap = m_amb - m_bar
    scale = max(abs(direct), 1e-300)
    agree = abs(gap - direct) <= 1e-10 * scale or (direct == 0.0 and abs(gap) <= 1e-12 * max(m_amb, 1.0))
    return SandwichReport(
        gap_minima=gap, gap_direct=direct, bound=direct / float(R) ** (d - 1),
        pass_=bool(direct >= 0.0 and agree), m_ambient=m_amb, m_restricted=m_bar,
    )


def sandwich_scan(env_spec, kernel, d, h, K, z, R_schedule, seed=0, quadrature="moment"):
    """Gap per ``R^(d-1)`` along an R-schedule.

    ``bounded`` requires consecutive values to differ by less than 50%.
    """
    rows = []
    for R in R_schedule:
        real = sample_for_cell(env_spec, seed, d, R, h, K)
        rep = sandwich_check(real, kernel, d, R, h, K, z, quadrature)
        rows.append((float(R), rep))
    ratios = [rep.bound for _, rep in rows]
    steps = [abs(b - a) / a for a, b in zip(ratios, ratios[1:]) if a > 0]
    bounded = all(s < 0.5 for s in steps) and all(rep.pass_ for _, rep in rows)
    return {"rows": rows, "ratios": ratios, "relative_steps": steps, "bounded": bool(bounded)}


@dataclass
class RStat:
    R: float
    mean: float
    variance: float
    count: int
    values: list = field(default_factory=list)

    @property
    def ci(self):
        """Half-width ``2 s / sqrt(n)`` of the confidence interval."""
        if self.count < 2:
            return 0.0
        return 2.0 * np.sqrt(self.variance) / np.sqrt(self.count)


def summarize(R, values):
    v = np.asarray(values, dtype=float)
    var = float(v.var(ddof=1)) if len(v) > 1 else 0.0
    return RStat(float(R), float(v.mean()), var, len(v), [float(x) for x in v])


@dataclass
class GammaKEstimate:
    z: tuple
    K: float
    per_R: list

    @property
    def point(self):
        return self.per_R[-1].mean

    @property
    def ci(self):
        return self.per_R[-1].ci


def estimate_gamma_K(env_spec, kernel, d, h, K, z, R_schedule, seeds,
                     variant="truncated-ambient", quadrature="moment", tol=1e-10):
    """Seed statistics of the cell value for each ``R``.

    The largest-``R`` mean is the estimate of ``gamma_K(z)`` with confidence
    half-width ``2 s / sqrt(n)``.
    """
    Rs = [float(R) for R in R_schedule]
    if any(b <= a for a, b in zip(Rs, Rs[1:])):
        raise HomogenizationError("config-invalid", "R_schedule must be increasing")
    per_R = []
    for R in Rs:
        vals = []
        for seed in seeds:
            real = sample_for_cell(env_spec, seed, d, R, h, K)
            est = cell_minimum(real, kernel, d, R, h, K, z, variant, quadrature=quadrature, tol=tol)
            vals.append(est.value)
        per_R.append(summarize(R, vals))
    return GammaKEstimate(tuple(float(v) for v in np.atleast_1d(z)), round(K / h) * h, per_R)


def polarization_directions(d):
    """Basis vectors followed by ``e_i + e_j`` for ``i < j``."""
    eye = np.eye(d)
    dirs = [tuple(eye[i]) for i in range(d)]
    dirs += [tuple(eye[i] + eye[j]) for i, j in itertools.combinations(range(d), 2)]
    return dirs


def tensor_from_gamma(gamma, d):
    """Polarization: ``A_ii = g(e_i)``, ``A_ij = (g(e_i+e_j) - g(e_i) - g(e_j)) / 2``."""
    eye = np.eye(d)
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] = gamma[tuple(eye[i])]
    for i, j in itertools.combinations(range(d), 2):
        A[i, j] = A[j, i] = 0.5 * (gamma[tuple(eye[i] + eye[j])] - A[i, i] - A[j, j])
    return EffectiveTensor(A)


def monotonicity_violations(points, cis, rel_slack=1e-9):
    """Indices ``k`` where ``points[k+1]`` drops below ``points[k]`` beyond noise."""
    bad = []
    for k in range(len(points) - 1):
        noise = 2.0 * max(cis[k], cis[k + 1]) + rel_slack * abs(points[k])
        if points[k + 1] < points[k] - noise:
            bad.append(k)
    return bad


@dataclass
class TensorEstimate:
    gamma: dict
    gamma_ci: dict
    truncation_band: dict
    gamma_K: dict
    A_hom: EffectiveTensor
    schedules: dict
    warnings: list = field(default_factory=list)


def assemble_tensor_estimate(d, K_schedule, estimates, schedules):
    """Combine per-``(z, K)`` estimates into a :class:`TensorEstimate`.

    ``estimates`` maps ``(z, K)`` to :class:`GammaKEstimate`.
    """
    dirs = polarization_directions(d)
    Ks = [round(float(K), 12) for K in K_schedule]
    gamma, ci, band, by_K, warnings = {}, {}, {}, {}, []
    for z in dirs:
        pts = [estimates[(z, K)].point for K in Ks]
        cis = [estimates[(z, K)].ci for K in Ks]
        by_K[z] = list(zip(Ks, pts, cis))
        gamma[z] = pts[-1]
        ci[z] = cis[-1]
        band[z] = abs(pts[-1] - pts[-2]) if len(pts) > 1 else 0.0
        if monotonicity_violations(pts, cis):
            warnings.append(f"monotonicity-violated: z={z}")
    return TensorEstimate(gamma, ci, band, by_K, tensor_from_gamma(gamma, d), schedules, warnings)


def estimate_gamma_and_tensor(env_spec, kernel, d, h, K_schedule, R_schedule, seeds,
                              quadrature="moment", tol=1e-10):
    """``gamma`` on the polarization directions and the resulting ``A_hom``."""
    Ks = [float(K) for K in K_schedule]
    if any(b <= a for a, b in zip(Ks, Ks[1:])):
        raise HomogenizationError("config-invalid", "K_schedule must be increasing")
    dirs = polarization_directions(d)
    values = {}
    for K in Ks:
        for R in R_schedule:
            for seed in seeds:
                real = sample_for_cell(env_spec, seed, d, R, h, K)
                for est in cell_minima(real, kernel, d, R, h, K, dirs, quadrature=quadrature, tol=tol):
                    values.setdefault((est.z, round(K, 12), float(R)), []).append(est.value)
    estimates = {}
    for z in dirs:
        for K in Ks:
            per_R = [summarize(R, values[(z, round(K, 12), float(R))]) for R in R_schedule]
            estimates[(z, round(K, 12))] = GammaKEstimate(z, K, per_R)
    schedules = {"K": Ks, "R": [float(R) for R in R_schedule], "seeds": len(seeds)}
    return assemble_tensor_estimate(d, Ks, estimates, schedules)


def boxes_overlap(box_a, box_b):
    lo = np.maximum(np.asarray(box_a[0], float), np.asarray(box_b[0], float))
    hi = np.minimum(np.asarray(box_a[1], float), np.asarray(box_b[1], float))
    return bool(np.all(lo < hi))


@dataclass
class SubadditivityReport:
    phi_a: float
    phi_b: float
    phi_union: float
    slack: float
    pass_: bool


def region_minimum(real, kernel, boxes, h, K, z, quadrature="moment", tol=1e-10):
    """Truncated ambient minimum on a union of boxes (not normalized)."""
    prob = build_region_problem(boxes, h, K)
    form = assemble_form(prob, real, kernel, "truncated-ambient", quadrature)
    return minimize_quadratic(form, prob, z, tol=tol).energy_value


def subadditivity_check(real, kernel, d, h, K, z, box_A, box_B, quadrature="moment", tol=1e-10):
    """Check ``Phi(A u B) <= Phi(A) + Phi(B)`` up to solver tolerance."""
    if boxes_overlap(box_A, box_B):
        raise HomogenizationError("boxes-overlap", f"{box_A} and {box_B} share interior")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    pa = region_minimum(real, kernel, [box_A], h, K, z, quadrature, tol)
    pb = region_minimum(real, kernel, [box_B], h, K, z, quadrature, tol)
    pu = region_minimum(real, kernel, [box_A, box_B], h, K, z, quadrature, tol)
    slack = 2.0 * tol * (pa + pb)
    return SubadditivityReport(pa, pb, pu, slack, bool(pu <= pa + pb + slack))


def union_box(boxes, pad):
    lo = np.min([np.asarray(b[0], float) for b in boxes], axis=0) - pad
    hi = np.max([np.asarray(b[1], float) for b in boxes], axis=0) + pad
    return lo, hi


def random_box_pair(rng, d, max_side=6, max_gap=2):
    """Two disjoint integer boxes: B is placed beside A along a random axis."""
    side_a = rng.integers(2, max_side + 1, size=d)
    side_b = rng.integers(2, max_side + 1, size=d)
    lo_a = np.zeros(d, dtype=int)
    axis = int(rng.integers(d))
    gap = int(rng.integers(0, max_gap + 1))
    lo_b = np.zeros(d, dtype=int)
    for k in range(d):
        if k == axis:
            lo_b[k] = side_a[k] + gap
        else:
            lo_b[k] = int(rng.integers(-side_b[k] + 1, side_a[k]))
    return (lo_a, lo_a + side_a), (lo_b, lo_b + side_b)
