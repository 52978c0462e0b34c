"""Campaign runner: executes a validated config and persists the results.

Each experiment is split into independent tasks.  Tasks run in a worker
pool; their records are collected in task order (never completion order),
so ``results.csv`` depends only on the config and the code version.
Wall-times go to ``run.log``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .cell import (
    GammaKEstimate,
    assemble_tensor_estimate,
    cell_minima,
    monotonicity_violations,
    polarization_directions,
    random_box_pair,
    sample_for_cell,
    sandwich_scan,
    subadditivity_check,
    summarize,
    union_box,
)
from .config import load_config
from .errors import HomogenizationError
from .inequalities import (
    GridField,
    poincare_constant,
    tail_bound_scan,
    verify_local_average_bounds,
    verify_multistep,
    verify_poincare,
)
from .kernel import EffectiveTensor, analytic_tensor
from .lattice import assemble_form, build_problem, build_region_problem, energy
from .random_env import EnvironmentSpec, cube_box, sample_environment, verify_perforation_geometry
from .solver import dense_oracle_solve, minimize_quadratic

log = logging.getLogger(__name__)

CODE_VERSION = f"{__version__}+{BACKEND}"
COLUMNS = ("kind", "z", "K", "R", "epsilon", "seed", "variant", "value", "aux",
           "iterations", "relative_residual", "config_hash", "code_version")
PLOT_KINDS = ("gamma_vs_R", "gamma_vs_K", "variance_vs_R", "eps_convergence")


@dataclass(frozen=True)
class ResultRecord:
    """One row of ``results.csv``; unused coordinates are ``None``."""

    kind: str
    z: tuple | None = None
    K: float | None = None
    R: float | None = None
    epsilon: float | None = None
    seed: int | None = None
    variant: str | None = None
    value: float | None = None
    aux: float | None = None
    iterations: int | None = None
    relative_residual: float | None = None


def fmt_float(x):
    """17 significant digits; non-finite values as ``nan``/``inf``/``-inf``."""
    x = float(x)
    if math.isfinite(x):
        return format(x, ".17g")
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ";".join(fmt_float(c) for c in v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def to_json(obj, indent=0):
    """Minimal JSON writer that renders every float with 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{to_json(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + to_json(v, indent + 1) for v in seq) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def zkey(z):
    return ";".join(fmt_float(v) for v in z)


# ---------------------------------------------------------------- tasks


def _directions(cfg):
    return polarization_directions(cfg.grid.d) if cfg.directions == "polarization" else list(cfg.directions)


def _cell_task(cfg, K, R, seed, env=None, kind="cell"):
    env = env or cfg.environment
    d, h = cfg.grid.d, cfg.grid.h
    real = sample_for_cell(env, seed, d, R, h, K)
    out = []
    ests = cell_minima(real, cfg.kernel, d, R, h, K, _directions(cfg), cfg.variant,
                       cfg.quadrature, cfg.tol, cfg.max_iter)
    for e in ests:
        out.append(ResultRecord(kind, e.z, e.K, e.R, None, seed, cfg.variant, e.value, e.affine_bound,
                                e.iterations, e.residual))
    if env.kind == "perforation" and kind == "cell":
        rep = verify_perforation_geometry(real, h=h)
        ok = rep.connected_ok and rep.min_gap_ok
        out.append(ResultRecord("geometry", None, float(K), float(R), None, seed, None,
                                float(ok), float(rep.components)))
    return out


def _homogeneity_task(cfg, i):
    p = cfg.probes["homogeneity"]
    d, h = cfg.grid.d, cfg.grid.h
    seed = p["seed"] + i
    K = cfg.grid.K_schedule[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    z = rng.standard_normal(d)
    real = sample_for_cell(cfg.environment, seed, d, p["R"], h, K)
    v1, v2 = cell_minima(real, cfg.kernel, d, p["R"], h, K, [z, 2 * z], cfg.variant,
                         cfg.quadrature, cfg.tol, cfg.max_iter)
    rel = abs(v2.value - 4 * v1.value) / v2.value if v2.value > 0 else abs(v2.value - 4 * v1.value)
    return [ResultRecord("homogeneity", v1.z, v1.K, v1.R, None, seed, cfg.variant, rel, v1.value,
                         v2.iterations, v2.residual)]


def _oracle_task(cfg, R, seed):
    p = cfg.probes["oracle"]
    d, h, K = cfg.grid.d, cfg.grid.h, p["K"]
    try:
        prob = build_problem(d, R, h, K)
    except HomogenizationError as exc:
        if exc.code == "no-free-sites":
            return []
        raise
    if int(prob.free.sum()) > p["max_free"]:
        return []
    real = sample_for_cell(cfg.environment, seed, d, R, h, K)
    form = assemble_form(prob, real, cfg.kernel, cfg.variant, cfg.quadrature)
    out = []
    for z in polarization_directions(d):
        cg = minimize_quadratic(form, prob, np.array(z), tol=cfg.tol, max_iter=cfg.max_iter)
        dense = dense_oracle_solve(form, prob, np.array(z))
        ref = dense.energy_value
        rel = abs(cg.energy_value - ref) / ref if ref > 0 else abs(cg.energy_value)
        out.append(ResultRecord("oracle", tuple(z), prob.K, float(R), None, seed, cfg.variant, rel, ref,
                                cg.iterations, cg.relative_residual))
    return out


def _subadditivity_task(cfg, i):
    p = cfg.probes["subadditivity"]
    d, h, K = cfg.grid.d, cfg.grid.h, p["K"]
    rng = np.random.default_rng(np.random.SeedSequence([p["seed"], i]))
    box_a, box_b = random_box_pair(rng, d, p["max_side"], p["max_gap"])
    z = rng.standard_normal(d)
    seed = p["seed"] + i
    real = sample_environment(cfg.environment, seed, union_box([box_a, box_b], K + h), h=h)
    rep = subadditivity_check(real, cfg.kernel, d, h, K, z, box_a, box_b, cfg.quadrature, cfg.tol)
    return [ResultRecord("subadditivity", tuple(float(v) for v in z), float(K), None, None, seed,
                         "truncated-ambient", rep.phi_union, rep.phi_a + rep.phi_b + rep.slack)]


def _sandwich_task(cfg):
    p = cfg.probes["sandwich"]
    d = cfg.grid.d
    z = tuple([1.0] + [0.0] * (d - 1))
    scan = sandwich_scan(cfg.environment, cfg.kernel, d, cfg.grid.h, p["K"], z, p["R_schedule"],
                         seed=p["seed"], quadrature=cfg.quadrature)
    return [ResultRecord("sandwich", z, p["K"], R, None, p["seed"], "truncated-ambient", rep.bound,
                         rep.gap_minima) for R, rep in scan["rows"]]


def tail_kernel(kernel, R, d):
    """Copy of ``kernel`` whose cutoff reaches across the whole cube ``Q_R``."""
    return replace(kernel, cutoff=max(kernel.cutoff, float(R) * math.sqrt(d) * 1.0001))


def _tail_task(cfg, i, params, env=None):
    d, h = cfg.grid.d, cfg.grid.h
    R = params["R"]
    seed = params.get("seed", 3000) + i
    env = env or cfg.environment
    prob = build_region_problem([cube_box(d, R / 2.0)], h, h)
    real = sample_environment(env, seed, prob.box, h=h)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    u = rng.uniform(-1.0, 1.0, prob.n_sites)
    scan = tail_bound_scan(prob, tail_kernel(cfg.kernel, R, d), u, params["K_schedule"], real=real)
    return [ResultRecord("tail", None, K, R, None, seed, None, ratio, scan.slope)
            for K, ratio in zip(scan.K, scan.ratios)]


def _limit_task(cfg, eps):
    d, h = cfg.grid.d, cfg.grid.h
    gl = cfg.gamma_limit
    z = np.array(gl["z"])
    lo, hi = (np.array(b) for b in cfg.grid.domain)
    hb = h / eps
    prob = build_region_problem([(lo / eps, hi / eps)], hb, gl["collar"])
    emin = min(cfg.grid.epsilon_schedule)
    big = (np.minimum(lo / eps, lo / emin) - hb, np.maximum(hi / eps, hi / emin) + hb)
    real = sample_environment(cfg.environment, gl["seed"], big, h=h / emin)
    form = assemble_form(prob, real, cfg.kernel, "restricted-full", cfg.quadrature)
    res = minimize_quadratic(form, prob, z, tol=cfg.tol, max_iter=cfg.max_iter)
    value = eps ** d * res.energy_value
    return [ResultRecord("gamma-limit", tuple(float(v) for v in z), prob.K * eps, None, eps, gl["seed"],
                         "restricted-full", value, None, res.iterations, res.relative_residual)]


# inequality-suite fields ------------------------------------------------

FIELD_STYLES = ("noise", "fourier", "steps", "hats")


def random_field(rng, n, style):
    """Seeded bounded test field with ``n`` samples on ``(0, 1)``."""
    x = (np.arange(n) + 0.5) / n
    if style == "noise":
        return rng.uniform(-1.0, 1.0, n)
    if style == "fourier":
        modes = rng.integers(1, 24, size=6)
        amp = rng.standard_normal(6) / modes
        phase = rng.uniform(0, 2 * np.pi, 6)
        return np.sum(amp[:, None] * np.sin(2 * np.pi * modes[:, None] * x[None, :] + phase[:, None]), axis=0)
    if style == "steps":
        cuts = np.sort(rng.uniform(0, 1, rng.integers(1, 8)))
        levels = rng.uniform(-1.0, 1.0, len(cuts) + 1)
        return levels[np.searchsorted(cuts, x)]
    centers = rng.uniform(0, 1, 4)
    widths = rng.uniform(0.02, 0.3, 4)
    heights = rng.uniform(-1.0, 1.0, 4)
    return np.sum(heights[:, None] * np.maximum(0.0, 1 - np.abs(x[None, :] - centers[:, None]) / widths[:, None]),
                  axis=0)


def _field(params, i, base_seed, length=None, zero_collar=None):
    length = params.get("length", 1.0) if length is None else length
    h = params["h"]
    n = int(round(length / h))
    rng = np.random.default_rng(np.random.SeedSequence([base_seed, i]))
    vals = random_field(rng, n, FIELD_STYLES[i % len(FIELD_STYLES)])
    u = GridField(vals, h, (0.0,))
    if zero_collar is not None:
        vals = np.where(u.boundary_distance - h / 2 < zero_collar * (1 - 1e-9), 0.0, vals)
        u = u.with_values(vals)
    return u


def _inequality_task(cfg, check, i):
    p = cfg.inequalities[check]
    base = cfg.seeds[0]
    if check == "local-average":
        u = _field(p, i, base)
        r1, r2 = verify_local_average_bounds(u, p["delta"], p["sigma"])
        return [ResultRecord("local-average-l2", None, None, None, p["delta"], i, None, r1.lhs,
                             r1.constant_used * r1.rhs),
                ResultRecord("local-average-sup", None, None, None, p["delta"], i, None, r2.lhs,
                             r2.constant_used * r2.rhs)]
    if check == "multistep":
        u = _field(p, i, base)
        r = verify_multistep(u, p["epsilon"], p["j"], p["k"])
        return [ResultRecord("multistep", None, None, None, p["epsilon"], i, None, r.lhs, r.rhs)]
    if check == "poincare-zero-boundary":
        out = []
        for L in p["lengths"]:
            u = _field(p, i, base, length=L, zero_collar=2 * p["epsilon"])
            r = verify_poincare(u, "zero-boundary", p["epsilon"])
            out.append(ResultRecord("poincare-zero-boundary", None, None, L, p["epsilon"], i, None, r.lhs,
                                    r.constant_used * r.rhs))
        return out
    if check == "poincare-wirtinger":
        out = []
        u = _field(p, i, base)
        for eps in p["epsilon_schedule"]:
            C = poincare_constant(u, epsilon=eps, r0=p["r0"])
            r = verify_poincare(u, "wirtinger", eps, p["r0"], constant=C)
            out.append(ResultRecord("poincare-wirtinger", None, None, None, eps, i, None, r.lhs,
                                    r.constant_used * r.rhs))
        return out
    if check == "tail":
        return _tail_task(cfg, i, {**p, "seed": base})
    raise HomogenizationError("config-invalid", f"inequalities.{check}: unknown check")


_TASKS = {
    "cell": _cell_task,
    "homogeneity": _homogeneity_task,
    "oracle": _oracle_task,
    "subadditivity": _subadditivity_task,
    "sandwich": _sandwich_task,
    "tail": _tail_task,
    "limit": _limit_task,
    "inequality": _inequality_task,
}


def _run_task(args):
    cfg, name, params = args
    t0 = time.perf_counter()
    records = _TASKS[name](cfg, *params)
    return records, time.perf_counter() - t0


def plan_tasks(cfg):
    """Ordered task list ``(name, params)`` for a config."""
    tasks = []
    if cfg.experiment == "cell-campaign":
        for K in cfg.grid.K_schedule:
            for R in cfg.grid.R_schedule:
                for seed in cfg.seeds:
                    tasks.append(("cell", (K, R, seed)))
        pr = cfg.probes
        if "perforation-ordering" in pr:
            full = EnvironmentSpec("constant")
            tasks.append(("cell", (cfg.grid.K_schedule[-1], cfg.grid.R_schedule[-1], 0, full, "cell-full")))
        if "homogeneity" in pr:
            tasks += [("homogeneity", (i,)) for i in range(pr["homogeneity"]["instances"])]
        if "oracle" in pr:
            tasks += [("oracle", (R, s)) for R in pr["oracle"]["R_schedule"] for s in range(pr["oracle"]["seeds"])]
        if "subadditivity" in pr:
            tasks += [("subadditivity", (i,)) for i in range(pr["subadditivity"]["pairs"])]
        if "sandwich" in pr:
            tasks.append(("sandwich", ()))
        if "tail" in pr:
            tasks += [("tail", (i, pr["tail"])) for i in range(pr["tail"]["fields"])]
    elif cfg.experiment == "gamma-limit":
        for eps in cfg.grid.epsilon_schedule:
            if cfg.grid.h > eps * cfg.kernel.r0 * (1 + 1e-12):
                raise HomogenizationError(
                    "epsilon-underresolved", f"h={cfg.grid.h:g} exceeds eps*r0={eps * cfg.kernel.r0:g}")
            tasks.append(("limit", (eps,)))
    else:
        for check, p in cfg.inequalities.items():
            tasks += [("inequality", (check, i)) for i in range(p["fields"])]
    return tasks


def execute(cfg, workers=1):
    """Run all tasks; returns ``(records, per-task wall-times, task list)``."""
    tasks = plan_tasks(cfg)
    args = [(cfg, name, params) for name, params in tasks]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, args))
    else:
        results = [_run_task(a) for a in args]
    records = [r for recs, _ in results for r in recs]
    return records, [t for _, t in results], tasks


# ---------------------------------------------------------------- summaries


def _group(records, kind):
    out = {}
    for r in records:
        if r.kind == kind:
            out.setdefault((r.z, r.K, r.R), []).append(r.value)
    return out


def solve_homogenized_reference(A, D, z):
    """``<A z, z> |D|``: the homogenized Dirichlet minimum for affine data on a box."""
    A = A if isinstance(A, EffectiveTensor) else EffectiveTensor(np.asarray(A, dtype=float))
    if not (A.is_symmetric() and A.is_psd()):
        raise HomogenizationError("invalid-tensor", "tensor must be symmetric positive semidefinite")
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in D)
    if lo.shape != (A.d,) or hi.shape != (A.d,) or np.any(hi <= lo):
        raise HomogenizationError("config-invalid", "domain must be a nonempty box of the tensor's dimension")
    return float(A.quadratic(np.atleast_1d(np.asarray(z, dtype=float))) * np.prod(hi - lo))


def _campaign_summary(cfg, records):
    d = cfg.grid.d
    Ks, Rs = cfg.grid.K_schedule, cfg.grid.R_schedule
    cells = _group(records, "cell")
    dirs = [tuple(float(v) for v in z) for z in _directions(cfg)]
    estimates = {}
    for z in dirs:
        for K in Ks:
            Kr = round(K / cfg.grid.h) * cfg.grid.h
            per_R = [summarize(R, cells[(z, Kr, R)]) for R in Rs]
            estimates[(z, round(K, 12))] = GammaKEstimate(z, K, per_R)
    summary = {
        "gamma_K": {
            zkey(z): [{"K": K, "R": st.R, "mean": st.mean, "variance": st.variance, "ci": st.ci,
                       "count": st.count} for K in Ks for st in estimates[(z, round(K, 12))].per_R]
            for z in dirs
        },
        "gamma": {zkey(z): {"value": estimates[(z, round(Ks[-1], 12))].point,
                            "ci": estimates[(z, round(Ks[-1], 12))].ci,
                            "truncation_band": abs(estimates[(z, round(Ks[-1], 12))].point
                                                   - estimates[(z, round(Ks[-2], 12))].point) if len(Ks) > 1 else 0.0}
                  for z in dirs},
    }
    if cfg.directions == "polarization":
        est = assemble_tensor_estimate(d, Ks, estimates, {"K": list(Ks), "R": list(Rs), "seeds": len(cfg.seeds)})
        summary["A_hom"] = est.A_hom.entries.tolist()
        summary["warnings"] = est.warnings

    probes = {}
    pr = cfg.probes
    if "monotonicity" in pr:
        per = {}
        for z in dirs:
            pts = [estimates[(z, round(K, 12))].point for K in Ks]
            cis = [estimates[(z, round(K, 12))].ci for K in Ks]
            per[zkey(z)] = {"K": list(Ks), "gamma_K": pts, "ci": cis,
                            "violations": monotonicity_violations(pts, cis)}
        probes["monotonicity"] = {"pass": all(not v["violations"] for v in per.values()), "per_direction": per}
    if "variance-decay" in pr:
        per = {}
        ok = len(Rs) >= 2 and len(cfg.seeds) >= 2
        for z in dirs:
            for K in Ks:
                var = [st.variance for st in estimates[(z, round(K, 12))].per_R]
                dec = var[-1] < var[0]
                ok = ok and dec
                per[f"{zkey(z)}|K={fmt_float(K)}"] = {"R": list(Rs), "variance": var,
                                                      "strictly_decreasing": all(b < a for a, b in zip(var, var[1:]))}
        probes["variance-decay"] = {"pass": bool(ok), "per_series": per}
    if "perforation-ordering" in pr:
        z = dirs[0]
        Kr = round(Ks[-1] / cfg.grid.h) * cfg.grid.h
        full = _group(records, "cell-full")[(z, Kr, Rs[-1])]
        g_full = float(np.mean(full))
        g_perf = estimates[(z, round(Ks[-1], 12))].point
        geo = [r for r in records if r.kind == "geometry"]
        geo_ok = all(r.value == 1.0 for r in geo)
        probes["perforation-ordering"] = {
            "pass": bool(g_perf <= g_full and g_perf > 0 and geo_ok),
            "gamma_perforated": g_perf, "gamma_full": g_full, "geometry_ok": geo_ok,
            "realizations_checked": len(geo),
        }
    if "homogeneity" in pr:
        errs = [r.value for r in records if r.kind == "homogeneity"]
        probes["homogeneity"] = {"pass": bool(max(errs) <= 1e-9), "instances": len(errs), "max_rel_error": max(errs)}
    if "oracle" in pr:
        errs = [r.value for r in records if r.kind == "oracle"]
        probes["oracle"] = {"pass": bool(errs) and bool(max(errs) <= 1e-8), "instances": len(errs),
                            "max_rel_diff": max(errs) if errs else None}
    if "subadditivity" in pr:
        rows = [r for r in records if r.kind == "subadditivity"]
        fails = sum(r.value > r.aux for r in rows)
        probes["subadditivity"] = {"pass": fails == 0, "pairs": len(rows), "failures": int(fails),
                                   "max_excess": max(r.value - r.aux for r in rows)}
    if "sandwich" in pr:
        rows = [r for r in records if r.kind == "sandwich"]
        bounds = [r.value for r in rows]
        steps = [abs(b - a) / a for a, b in zip(bounds, bounds[1:]) if a > 0]
        agree = all(abs(r.aux - r.value * r.R ** (d - 1)) <= 1e-10 * max(abs(r.aux), 1e-300) + 1e-300
                    for r in rows)
        probes["sandwich"] = {"pass": bool(agree and all(b >= 0 for b in bounds) and all(s < 0.5 for s in steps)),
                              "R": [r.R for r in rows], "gap_per_boundary": bounds, "relative_steps": steps,
                              "minima_match_direct": bool(agree)}
    if "tail" in pr:
        probes["tail"] = _tail_summary(records, cfg.kernel.kappa)
    summary["probes"] = probes
    return summary


def _tail_summary(records, kappa):
    rows = [r for r in records if r.kind == "tail"]
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r.seed, []).append(r)
    slopes = [group[0].aux for group in by_seed.values()]
    threshold = -kappa + 0.5
    return {"pass": bool(slopes) and all(s <= threshold for s in slopes), "threshold": threshold,
            "slopes": slopes, "max_slope": max(slopes) if slopes else None,
            "K": [r.K for r in next(iter(by_seed.values()))] if by_seed else []}


def _limit_summary(cfg, records):
    rows = [r for r in records if r.kind == "gamma-limit"]
    gl = cfg.gamma_limit
    ref = gl["reference"]
    reference = None
    if ref == "analytic":
        if cfg.environment.kind != "constant":
            raise HomogenizationError("config-invalid", "gamma_limit.reference: analytic needs a constant environment")
        reference = solve_homogenized_reference(analytic_tensor(cfg.kernel), cfg.grid.domain, gl["z"])
    elif isinstance(ref, list):
        reference = solve_homogenized_reference(np.array(ref, dtype=float), cfg.grid.domain, gl["z"])
    table = []
    for r in rows:
        gap = None if reference is None else abs(r.value - reference)
        table.append({"epsilon": r.epsilon, "minimum": r.value, "reference": reference, "gap": gap})
    summary = {"z": gl["z"], "reference": reference, "table": table}
    if reference is not None:
        gaps = [t["gap"] for t in table]
        rel = gaps[-1] / abs(reference) if reference != 0 else gaps[-1]
        summary["probes"] = {"eps-convergence": {
            "pass": bool(all(b <= a * (1 + 1e-12) for a, b in zip(gaps, gaps[1:])) and rel < 0.10),
            "gaps": gaps, "final_relative_gap": rel}}
    return summary


def _inequality_summary(cfg, records):
    probes = {}
    kinds = {
        "local-average": ("local-average-l2", "local-average-sup"),
        "multistep": ("multistep",),
        "poincare-zero-boundary": ("poincare-zero-boundary",),
        "poincare-wirtinger": ("poincare-wirtinger",),
    }
    for check in cfg.inequalities:
        if check == "tail":
            probes["tail"] = _tail_summary(records, cfg.kernel.kappa)
            continue
        for kind in kinds[check]:
            rows = [r for r in records if r.kind == kind]
            ratios = [r.value / r.aux if r.aux > 0 else (0.0 if r.value == 0 else math.inf) for r in rows]
            ok = all(r.value <= r.aux + 1e-12 * max(abs(r.aux), abs(r.value)) for r in rows)
            probes[kind] = {"pass": bool(ok), "fields": len(rows), "max_lhs_over_bound": max(ratios)}
    if "poincare-wirtinger" in cfg.inequalities:
        p = cfg.inequalities["poincare-wirtinger"]
        n = int(round(p["length"] / p["h"]))
        probes["poincare-wirtinger"]["constants"] = {
            fmt_float(eps): poincare_constant((n,), p["h"], epsilon=eps, r0=p["r0"]) for eps in p["epsilon_schedule"]}
    return {"probes": probes}


def summarize_run(cfg, records):
    if cfg.experiment == "cell-campaign":
        body = _campaign_summary(cfg, records)
    elif cfg.experiment == "gamma-limit":
        body = _limit_summary(cfg, records)
    else:
        body = _inequality_summary(cfg, records)
    head = {"name": cfg.name, "experiment": cfg.experiment, "config_hash": cfg.config_hash,
            "code_version": CODE_VERSION, "seeds": list(cfg.seeds)}
    body.setdefault("probes", {})
    head.update(body)
    head["all_probes_pass"] = all(p["pass"] for p in body["probes"].values())
    return head


# ---------------------------------------------------------------- files


def write_results(path, records, cfg):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([_cell(getattr(r, c)) for c in COLUMNS[:-2]] + [cfg.config_hash, CODE_VERSION])


def read_results(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_loaded(cfg, workers=1):
    """Execute ``cfg`` and write its files; returns ``(exit_status, summary)``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records, times, tasks = execute(cfg, workers)
    summary = summarize_run(cfg, records)
    if "csv" in cfg.formats:
        write_results(out / "results.csv", records, cfg)
    if "json" in cfg.formats:
        (out / "summary.json").write_text(to_json(summary) + "\n")
    with open(out / "run.log", "w") as fh:
        fh.write(f"# name={cfg.name} config_hash={cfg.config_hash} code_version={CODE_VERSION} workers={workers}\n")
        for (name, params), t in zip(tasks, times):
            shown = ",".join(_cell(p) if not hasattr(p, "kind") else p.kind for p in params
                             if not isinstance(p, dict))
            fh.write(f"task={name} params={shown} wall_s={t:.6f}\n")
        iters = [r.iterations for r in records if r.iterations is not None]
        fh.write(f"solves={len(iters)} total_iterations={sum(iters)}\n")
        fh.write(f"total_wall_s={time.perf_counter() - t0:.6f}\n")
    return (0 if summary["all_probes_pass"] else 1), summary


def run_config(path, workers=1, output_dir=None, seed_override=None):
    """Load, run and persist a config file.  Returns the exit status."""
    cfg = load_config(path, seed_override=seed_override, output_dir=output_dir)
    status, _ = run_loaded(cfg, workers)
    return status


def run_epsilon_sequence(cfg, workers=1):
    """Convergence table of a ``gamma-limit`` config: one row per epsilon."""
    if cfg.experiment != "gamma-limit":
        raise HomogenizationError("config-invalid", "experiment must be gamma-limit")
    records, _, _ = execute(cfg, workers)
    return _limit_summary(cfg, records)["table"]


# ---------------------------------------------------------------- plots


def _num(row, key):
    v = row[key]
    return float(v) if v != "" else None


def emit_plot_data(results_path, kind, out_path=None):
    """Write a plain-text table for ``kind`` next to the results file."""
    if kind not in PLOT_KINDS:
        raise HomogenizationError("config-invalid", f"plot kind must be one of {PLOT_KINDS}")
    rows = read_results(results_path)
    out_path = Path(out_path) if out_path else Path(results_path).with_name(f"{kind}.dat")
    if kind == "eps_convergence":
        data = [r for r in rows if r["kind"] == "gamma-limit"]
        summary_path = Path(results_path).with_name("summary.json")
        ref = None
        if summary_path.exists():
            ref = json.loads(summary_path.read_text()).get("reference")
        if not data or ref is None:
            raise HomogenizationError("insufficient-data", "need gamma-limit rows and a reference minimum")
        table = sorted(((_num(r, "epsilon"), _num(r, "value"), abs(_num(r, "value") - ref)) for r in data),
                       reverse=True)
        header = "# epsilon [length]  min_F_eps [energy]  |min - reference| [energy]"
    else:
        cells = [r for r in rows if r["kind"] == "cell"]
        if not cells:
            raise HomogenizationError("insufficient-data", "no cell rows in results")
        z0 = cells[0]["z"]
        cells = [r for r in cells if r["z"] == z0]
        Ks = sorted({_num(r, "K") for r in cells})
        Rs = sorted({_num(r, "R") for r in cells})
        groups = {}
        for r in cells:
            groups.setdefault((_num(r, "K"), _num(r, "R")), []).append(_num(r, "value"))
        if kind == "gamma_vs_K":
            series = [(K, groups[(K, Rs[-1])]) for K in Ks]
            header = f"# z={z0} R={fmt_float(Rs[-1])}\n# K [length]  gamma_K [energy/volume]  ci_halfwidth"
        else:
            series = [(R, groups[(Ks[-1], R)]) for R in Rs]
            header = (f"# z={z0} K={fmt_float(Ks[-1])}\n# R [length]  "
                      + ("mean_value [energy/volume]  ci_halfwidth" if kind == "gamma_vs_R"
                         else "sample_variance [(energy/volume)^2]  seeds"))
        table = []
        for x, vals in series:
            st = summarize(x, vals)
            if kind == "variance_vs_R":
                if st.count < 2:
                    raise HomogenizationError("insufficient-data", "variance needs at least two seeds")
                table.append((x, st.variance, st.count))
            else:
                table.append((x, st.mean, st.ci))
    with open(out_path, "w") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write("  ".join(_cell(v) for v in row) + "\n")
    return out_path
