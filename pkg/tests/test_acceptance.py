"""Acceptance criteria, one test per criterion, run on the shipped presets.

Each test records a one-line verdict that is printed in the terminal summary.
"""
import hashlib
import time
from importlib import resources

import numpy as np
import pytest

from convhom.config import load_config
from convhom.harness import run_loaded

VERDICTS = {}
PRESETS = sorted(p.name[:-5] for p in resources.files("convhom.presets").iterdir() if p.name.endswith(".toml"))
_RUNS = {}


def preset_path(name):
    return resources.files("convhom.presets") / f"{name}.toml"


def run_preset(name, tmp_root, workers=1):
    """Run a preset once per session; returns ``(status, summary, seconds, out_dir)``."""
    if name not in _RUNS:
        out = tmp_root / name
        cfg = load_config(preset_path(name), output_dir=str(out))
        t0 = time.perf_counter()
        status, summary = run_loaded(cfg, workers=workers)
        _RUNS[name] = (status, summary, time.perf_counter() - t0, out)
    return _RUNS[name]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("presets")
    return lambda name: run_preset(name, root)


def verdict(n, ok, detail):
    VERDICTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, VERDICTS[n]


def test_criterion_01_constant_d1(runs):
    status, s, secs, _ = runs("acc01_constant_d1")
    g = s["gamma"]["1"]["value"]
    err = abs(g - 2 / 3) / (2 / 3)
    verdict(1, status == 0 and err < 0.03 and secs < 60,
            f"gamma(e1)={g:.6f}, rel err {err:.2%} (< 3%), {secs:.1f}s (< 60s)")


def test_criterion_02_constant_d2(runs):
    status, s, secs, _ = runs("acc02_constant_d2")
    A = np.array(s["A_hom"])
    ref = np.pi / 4
    diag_err = float(np.max(np.abs(np.diag(A) - ref)) / ref)
    off = abs(A[0, 1]) / A[0, 0]
    verdict(2, status == 0 and diag_err < 0.05 and off <= 0.02 and secs < 600,
            f"A_hom diag rel err {diag_err:.2%} (< 5%), |A12|/A11={off:.1e} (<= 0.02), {secs:.1f}s (< 600s)")


def test_criterion_03_homogeneity(runs):
    _, s, _, _ = runs("acc03_homogeneity")
    p = s["probes"]["homogeneity"]
    verdict(3, p["pass"] and p["instances"] == 20 and p["max_rel_error"] <= 1e-9,
            f"{p['instances']} instances, max |v(2z)-4v(z)|/v(2z) = {p['max_rel_error']:.1e} (<= 1e-9)")


def test_criterion_04_oracle_equivalence(runs):
    parts = [runs(n)[1]["probes"]["oracle"] for n in ("acc04_oracle_d1", "acc04_oracle_d2")]
    count = sum(p["instances"] for p in parts)
    worst = max(p["max_rel_diff"] for p in parts)
    verdict(4, all(p["pass"] for p in parts) and worst <= 1e-8,
            f"{count} instances (d=1 and d=2), max rel |E_cg-E_dense| = {worst:.1e} (<= 1e-8)")


def test_criterion_05_monotonicity(runs):
    _, s, _, _ = runs("acc05_monotonicity")
    p = s["probes"]["monotonicity"]["per_direction"]["1"]
    ok = s["probes"]["monotonicity"]["pass"] and p["K"] == [2, 4, 8] and len(s["seeds"]) == 16
    shown = ", ".join(f"{g:.4f}+-{c:.3f}" for g, c in zip(p["gamma_K"], p["ci"]))
    verdict(5, ok, f"gamma_K at K=2,4,8: {shown}; violations {p['violations']}")


def test_criterion_06_subadditivity(runs):
    _, s, _, _ = runs("acc06_subadditivity")
    p = s["probes"]["subadditivity"]
    verdict(6, p["pass"] and p["pairs"] == 50 and p["failures"] == 0,
            f"{p['pairs']} box pairs, {p['failures']} failures, max excess {p['max_excess']:.3g}")


def test_criterion_07_sandwich_and_tail(runs):
    _, s, _, _ = runs("acc07_sandwich_tail")
    sw, tail = s["probes"]["sandwich"], s["probes"]["tail"]
    ok = sw["pass"] and sw["R"] == [16, 32, 64] and tail["pass"] and tail["K"] == [2, 4, 8]
    steps = ", ".join(f"{x:.2f}" for x in sw["relative_steps"])
    verdict(7, ok, f"gap/R^(d-1) steps {steps} (< 0.5); tail max slope {tail['max_slope']:.2f} "
                   f"(<= {tail['threshold']})")


def test_criterion_08_poincare_zero_boundary(runs):
    _, s, _, _ = runs("acc08_poincare")
    p = s["probes"]["poincare-zero-boundary"]
    verdict(8, p["pass"] and p["fields"] >= 100,
            f"{p['fields']} fields (100 per length, |D|=1 and 2), max lhs/(2|D| rhs) = {p['max_lhs_over_bound']:.3g}")


def test_criterion_09_variance_decay(runs):
    _, s, _, _ = runs("acc09_variance")
    series = s["probes"]["variance-decay"]["per_series"]
    (key, p), = series.items()
    ok = s["probes"]["variance-decay"]["pass"] and p["R"][0] == 16 and p["R"][-1] == 64 and len(s["seeds"]) == 16
    shown = " > ".join(f"{v:.4f}" for v in p["variance"])
    verdict(9, ok and p["variance"][-1] < p["variance"][0], f"sample variance over R=16,32,64: {shown}")


def test_criterion_10_perforation_ordering(runs):
    _, s, _, _ = runs("acc10_perforation")
    p = s["probes"]["perforation-ordering"]
    verdict(10, p["pass"] and p["geometry_ok"] and 0 < p["gamma_perforated"] <= p["gamma_full"],
            f"gamma_perf={p['gamma_perforated']:.4f} <= gamma_full={p['gamma_full']:.4f}, "
            f"{p['realizations_checked']} connected realizations")


def test_criterion_11_gamma_limit(runs):
    _, s, _, _ = runs("acc11_gamma_limit")
    p = s["probes"]["eps-convergence"]
    gaps = p["gaps"]
    ok = p["pass"] and all(b <= a for a, b in zip(gaps, gaps[1:])) and p["final_relative_gap"] < 0.10
    verdict(11, ok, "gaps " + ", ".join(f"{g:.4f}" for g in gaps)
            + f" at eps=1/4,1/8,1/16; final relative gap {p['final_relative_gap']:.2%} (< 10%)")


def test_criterion_12_determinism(runs, tmp_path):
    mismatched = []
    for name in PRESETS:
        _, _, _, out = runs(name)
        cfg = load_config(preset_path(name), output_dir=str(tmp_path / name))
        run_loaded(cfg, workers=2)
        for fname in ("results.csv", "summary.json"):
            a = hashlib.sha256((out / fname).read_bytes()).hexdigest()
            b = hashlib.sha256((tmp_path / name / fname).read_bytes()).hexdigest()
            if a != b:
                mismatched.append(f"{name}/{fname}")
    verdict(12, not mismatched, f"{len(PRESETS)} presets rerun with 2 workers; "
            + ("results.csv and summary.json byte-identical" if not mismatched else f"differ: {mismatched}"))
