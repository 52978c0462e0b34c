import numpy as np
import pytest
from hypothesis import given, strategies as st

from convhom.errors import HomogenizationError
from convhom.kernel import (
    EffectiveTensor,
    Kernel,
    analytic_tensor,
    eval_kernel,
    verify_kernel_assumptions,
)


def test_ball_inside_and_outside_support():
    k = Kernel("ball-indicator", d=2, r0=1.0)
    assert eval_kernel(k, [0.5, 0.0]) == 1.0
    assert eval_kernel(k, [2.0, 0.0]) == 0.0


def test_truncated_power_direct_formula():
    k = Kernel("truncated-power", d=1, kappa=1.0, decay_C=1.0)
    assert eval_kernel(k, 1.0) == pytest.approx(2.0**-4, rel=0, abs=1e-15)


def test_zero_beyond_cutoff():
    k = Kernel("gaussian-truncated", d=1, r0=1.0, cutoff=3.0)
    assert eval_kernel(k, 3.0) > 0
    assert eval_kernel(k, 3.0001) == 0.0


@pytest.mark.parametrize("family", ["ball-indicator", "truncated-power", "gaussian-truncated"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_kernel_even_and_nonnegative(family, d, rng):
    k = Kernel(family, d=d)
    xi = rng.uniform(-2 * k.cutoff, 2 * k.cutoff, size=(500, d))
    a = k(xi)
    assert np.all(a >= 0)
    assert np.array_equal(a, k(-xi))


@pytest.mark.parametrize("d", [1, 2])
def test_assumptions_ball_with_matching_constant(d):
    k = Kernel("ball-indicator", d=d, r0=1.0, kappa=1.0, decay_C=2.0 ** (d + 3))
    rep = verify_kernel_assumptions(k, 2048)
    assert rep.decay_ok and rep.lower_ok and rep.even_ok
    # sup of (1+r)^(d+3) on the unit ball is attained at r -> 1
    assert 0.999 <= rep.worst_ratio <= 1.0


@pytest.mark.parametrize("d", [1, 2])
def test_assumptions_ball_with_unit_constant_fails_decay(d):
    k = Kernel("ball-indicator", d=d, r0=1.0, kappa=1.0, decay_C=1.0)
    rep = verify_kernel_assumptions(k, 2048)
    assert not rep.decay_ok
    assert rep.worst_ratio == pytest.approx(2.0 ** (d + 3), rel=1e-3)
    assert rep.even_ok and rep.lower_ok


def test_truncated_power_meets_its_own_bound():
    k = Kernel("truncated-power", d=2, kappa=1.5, decay_C=3.0, c=3.0 * 2.0**-5.5)
    rep = verify_kernel_assumptions(k, 1024)
    assert rep.decay_ok and rep.even_ok and rep.lower_ok


def test_assumptions_need_a_sample():
    with pytest.raises(HomogenizationError, match="config-invalid"):
        verify_kernel_assumptions(Kernel("ball-indicator"), 0)


def test_analytic_tensor_d1_ball():
    A = analytic_tensor(Kernel("ball-indicator", d=1), 4096)
    assert A.entries[0, 0] == pytest.approx(2.0 / 3.0, rel=1e-6)


def test_analytic_tensor_d2_ball():
    # polar quadrature oracle: int_disc xi_1^2 = int_0^1 r^3 dr int cos^2 = pi/4
    A = analytic_tensor(Kernel("ball-indicator", d=2), 1024)
    assert A.entries[0, 0] == pytest.approx(np.pi / 4, rel=2e-3)
    assert A.entries[1, 1] == pytest.approx(A.entries[0, 0], rel=1e-12)
    assert abs(A.entries[0, 1]) < 1e-12
    assert A.is_symmetric() and A.is_psd()


def test_analytic_tensor_zero_kernel():
    A = analytic_tensor(Kernel("ball-indicator", d=2, c=0.0), 64)
    assert np.all(A.entries == 0.0)


def test_analytic_tensor_underresolved():
    with pytest.raises(HomogenizationError, match="quadrature-underresolved"):
        analytic_tensor(Kernel("truncated-power", d=1, r0=0.1, cutoff=10.0), 64)


@given(st.floats(0.1, 10.0), st.sampled_from(["ball-indicator", "truncated-power", "gaussian-truncated"]))
def test_analytic_tensor_linear_in_amplitude(factor, family):
    k = Kernel(family, d=1)
    A1 = analytic_tensor(k, 256).entries
    A2 = analytic_tensor(k.scaled(factor), 256).entries
    np.testing.assert_allclose(A2, factor * A1, rtol=1e-12)


def test_analytic_tensor_second_order_for_ball():
    k = Kernel("ball-indicator", d=1)
    a = [analytic_tensor(k, n).entries[0, 0] for n in (64, 128, 256)]
    assert abs(a[0] - a[1]) <= 4 * abs(a[1] - a[2]) * (1 + 1e-6)


@pytest.mark.parametrize("family", ["truncated-power", "gaussian-truncated"])
def test_analytic_tensor_differences_shrink(family):
    k = Kernel(family, d=1)
    a = [analytic_tensor(k, n).entries[0, 0] for n in (32, 64, 128)]
    assert abs(a[1] - a[2]) < abs(a[0] - a[1])


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_effective_tensor_quadratic_form(z):
    A = EffectiveTensor([[2.0, 0.5], [0.5, 1.0]])
    z = np.array(z)
    assert A.quadratic(z) == pytest.approx(z @ A.entries @ z, abs=1e-12)
    assert A.quadratic(z) >= 0


def test_effective_tensor_rejects_nonsquare():
    with pytest.raises(HomogenizationError, match="invalid-tensor"):
        EffectiveTensor(np.zeros((2, 3)))


@pytest.mark.parametrize("kw", [dict(family="disk"), dict(family="ball-indicator", r0=0.0),
                                dict(family="ball-indicator", c=-1.0),
                                dict(family="ball-indicator", cutoff=np.inf)])
def test_invalid_kernels(kw):
    with pytest.raises(HomogenizationError, match="config-invalid"):
        Kernel(**kw)
