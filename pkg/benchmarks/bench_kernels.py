"""Compare the compiled and numpy backends on a 2-d checkerboard cell problem.

Usage: python benchmarks/bench_kernels.py [R] [repeats]
"""
import sys
import time

import numpy as np

from convhom import _fallback
from convhom._backend import BACKEND, pair_energy
from convhom.cell import sample_for_cell
from convhom.kernel import Kernel
from convhom.lattice import assemble_form, build_problem
from convhom.random_env import EnvironmentSpec
from convhom.solver import minimize_quadratic

try:
    from convhom import _core
except ImportError:
    _core = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(R=64, repeats=3):
    d, h, K = 2, 0.25, 4.0
    spec = EnvironmentSpec("checkerboard-product", lambda1=1.0, lambda2=4.0)
    kernel = Kernel("ball-indicator", d=d)
    real = sample_for_cell(spec, 0, d, R, h, K)
    prob = build_problem(d, R, h, K)
    form = assemble_form(prob, real, kernel)
    z = np.array([1.0, 0.0])
    u = np.random.default_rng(0).standard_normal(prob.n_sites)
    print(f"sites={prob.n_sites} free={int(prob.free.sum())} pairs={len(form)} default={BACKEND}")

    impls = [("python", _fallback)] + ([("cython", _core)] if _core else [])
    rows = {}
    for name, impl in impls:
        t_e, e = best_of(lambda: pair_energy(form.i, form.j, form.w, u, impl=impl), repeats)
        t_s, res = best_of(lambda: minimize_quadratic(form, prob, z, impl=impl), repeats)
        rows[name] = (t_e, t_s, e, res)
        print(f"{name:7s} energy {t_e * 1e3:8.2f} ms   solve {t_s:7.3f} s   "
              f"iters {res.iterations}   value {res.energy_value / R**d:.12f}")
    if len(rows) == 2:
        (pe, ps, ee, rp), (ce, cs, ec, rc) = rows["python"], rows["cython"]
        print(f"speedup energy x{pe / ce:.2f}  solve x{ps / cs:.2f}  "
              f"|dE|/E {abs(ee - ec) / abs(ee):.2e}  "
              f"|dmin|/min {abs(rp.energy_value - rc.energy_value) / rp.energy_value:.2e}")


if __name__ == "__main__":
    args = [float(a) for a in sys.argv[1:]]
    main(int(args[0]) if args else 64, int(args[1]) if len(args) > 1 else 3)
