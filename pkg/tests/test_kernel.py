import math

import numpy as np
import pytest

from sio import kernel as kernels
from sio.errors import EvaluationError, InvalidArgumentError, UnknownKernelError
from sio.metric import AnisotropyProfile, sphere_quadrature


@pytest.mark.parametrize("name", kernels.BUILTIN_KERNELS)
def test_builtins_are_homogeneous(name):
    k = kernels.builtin(name)
    assert kernels.check_homogeneity(k, 500, seed=3) <= kernels.HOMOGENEITY_TOL


@pytest.mark.parametrize("name", kernels.BUILTIN_KERNELS)
def test_builtins_have_mean_zero(name):
    k = kernels.builtin(name)
    q = sphere_quadrature(k.n, 64 if k.n == 2 else 32)
    for x in (np.zeros(k.n), np.full(k.n, 1.3)):
        mean, total = kernels.check_cancellation(k, x, q)
        assert mean <= kernels.CANCELLATION_TOL
        assert math.isfinite(total) and total > 0


def test_cz2_absolute_integral():
    k = kernels.builtin("CZ2")
    _, total = kernels.check_cancellation(k, np.zeros(2), sphere_quadrature(2, 64))
    assert total == pytest.approx(4.0 / math.sqrt(math.pi), rel=1e-2)


def test_var_cz2_scales_with_x():
    k = kernels.builtin("VAR-CZ2")
    xi = np.array([[1.0, 0.0]])
    assert k(np.array([0.0, 0.0]), xi)[0] == pytest.approx(2.0 / math.sqrt(math.pi))
    assert k(np.array([math.pi / 2, 0.0]), xi)[0] == pytest.approx(3.0 / math.sqrt(math.pi))


def test_validate_cz2_passes():
    rep = kernels.validate(kernels.builtin("CZ2"), max_order=2, sample_count=16)
    assert rep.passed
    assert rep.max_order_checked == 2
    assert all(math.isfinite(v) for v in rep.derivative_sup_estimates.values())


def test_validate_var_cz2_passes():
    rep = kernels.validate(kernels.builtin("VAR-CZ2"), max_order=2, sample_count=16)
    assert rep.passed
    assert rep.derivative_stability <= kernels.DERIVATIVE_STABILITY_TOL


def test_constant_over_rho_fails_cancellation(iso2):
    c = 2.5
    k = kernels.constant_over_rho(iso2, c)
    mean, _ = kernels.check_cancellation(k, np.zeros(2), sphere_quadrature(2, 64))
    assert mean == pytest.approx(kernels.expected_constant_mean(iso2, c), rel=1e-12)
    rep = kernels.validate(k, max_order=1, sample_count=16)
    assert not rep.passed
    assert rep.homogeneity_max_residual <= kernels.HOMOGENEITY_TOL


def test_non_homogeneous_example_fails_homogeneity(iso2):
    k = kernels.non_homogeneous_example(iso2)
    assert kernels.check_homogeneity(k, 200) > kernels.HOMOGENEITY_TOL


def test_first_derivative_of_cz2():
    # d/dxi_1 of (xi_1^2 - xi_2^2) / |xi|^4 at (1, 0) is -2 / sqrt(pi)
    k = kernels.builtin("CZ2")
    sups = kernels.check_derivative_bounds(k, 1, sample_count=4)
    assert sups[(1, 0)] >= 2.0 / math.sqrt(math.pi) * (1 - 1e-3)


def test_unknown_kernel():
    with pytest.raises(UnknownKernelError) as err:
        kernels.builtin("NOPE")
    assert "NOPE" in str(err.value)


def test_evaluation_errors_are_wrapped(iso2):
    def bad(x, xi):
        raise ValueError("boom")

    with pytest.raises(EvaluationError):
        kernels.from_callable("bad", iso2, bad)(np.zeros(2), np.ones((3, 2)))

    k = kernels.from_callable("inf", iso2, lambda x, xi: np.full(len(xi), np.inf))
    with pytest.raises(EvaluationError) as err:
        k(np.zeros(2), np.ones((2, 2)))
    assert err.value.sample is not None


def test_derivative_order_limits(iso2):
    k = kernels.from_callable("smooth2", iso2, lambda x, xi: xi[:, 0], smoothness_order=2)
    with pytest.raises(InvalidArgumentError):
        kernels.check_derivative_bounds(k, 3)


def test_homogeneity_needs_enough_samples():
    with pytest.raises(InvalidArgumentError):
        kernels.check_homogeneity(kernels.builtin("CZ2"), 10)


def test_mix12_on_the_sphere_is_half_sin_2theta():
    k = kernels.builtin("MIX12")
    theta = np.linspace(0.0, 2 * math.pi, 17)
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    np.testing.assert_allclose(k(np.zeros(2), pts), 0.5 * np.sin(2 * theta), atol=1e-12)
    assert k.profile == AnisotropyProfile((1.0, 2.0))
