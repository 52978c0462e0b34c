import os
import subprocess
import sys

import numpy as np
import pytest

from convhom import _backend, _fallback
from convhom.kernel import Kernel
from convhom.lattice import assemble_form, build_problem, energy
from convhom.random_env import EnvironmentSpec, cube_box, sample_environment
from convhom.solver import minimize_quadratic

compiled = pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled kernels not built")


@pytest.fixture(scope="module")
def instance():
    spec = EnvironmentSpec("checkerboard-product", lambda1=1.0, lambda2=4.0)
    prob = build_problem(2, 16, 0.5, 1.5)
    real = sample_environment(spec, 2, cube_box(2, 9.5))
    return prob, assemble_form(prob, real, Kernel("truncated-power", d=2, cutoff=1.5))


def test_fallback_energy_matches_direct_sum(instance):
    prob, form = instance
    u = np.random.default_rng(0).normal(size=prob.n_sites)
    direct = float(np.sum(form.w * (u[form.i] - u[form.j]) ** 2))
    assert _fallback.pair_energy(form.i, form.j, form.w, u) == pytest.approx(direct, rel=1e-12)


@compiled
def test_energy_parity(instance):
    prob, form = instance
    u = np.random.default_rng(1).normal(size=prob.n_sites)
    a = _backend.pair_energy(form.i, form.j, form.w, u, impl="python")
    b = _backend.pair_energy(form.i, form.j, form.w, u, impl="cython")
    assert b == pytest.approx(a, rel=1e-12)


@compiled
def test_solve_parity(instance):
    prob, form = instance
    a = minimize_quadratic(form, prob, [1.0, 0.3], impl="python")
    b = minimize_quadratic(form, prob, [1.0, 0.3], impl="cython")
    assert b.energy_value == pytest.approx(a.energy_value, rel=1e-12)
    np.testing.assert_allclose(a.u, b.u, rtol=1e-9, atol=1e-10)


def test_env_var_forces_fallback():
    env = dict(os.environ, CONVHOM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from convhom import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_energy_dispatch_uses_backend(instance):
    prob, form = instance
    u = prob.affine([1.0, 0.0])
    assert energy(form, u) == pytest.approx(_fallback.pair_energy(form.i, form.j, form.w, u), rel=1e-12)
