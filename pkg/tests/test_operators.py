import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

from sio import operators
from sio.errors import InvalidArgumentError, InvalidIndexError, UnderResolvedError
from sio.gridfn import Grid, lp_norm, sample
from sio.harmonics import HarmonicBasis, hsm_kernel
from sio.kernel import builtin
from sio.metric import Ellipsoid, dilate, rho
from sio.operators import TruncationPolicy


def gaussian(x):
    return np.exp(-(x ** 2).sum(axis=1))


@pytest.fixture(scope="module")
def grid65():
    return Grid((-4.0, -4.0), (4.0, 4.0), (65, 65))


def test_policy_validation():
    with pytest.raises(InvalidArgumentError):
        TruncationPolicy(0.0)
    with pytest.raises(InvalidArgumentError):
        TruncationPolicy(math.nan)


def test_resolution_and_inradius_checks(grid33):
    f = sample(gaussian, grid33)
    k = builtin("CZ2")
    with pytest.raises(UnderResolvedError):
        operators.truncated_transform(k, f, TruncationPolicy(0.4))
    with pytest.raises(InvalidArgumentError):
        operators.truncated_transform(k, f, TruncationPolicy(4.0))
    with pytest.raises(InvalidArgumentError):
        operators.truncated_transform(builtin("RIESZ3"), f, TruncationPolicy(1.0))


def test_cz2_matches_polar_closed_form(grid65):
    # f = (x1^2 - x2^2) e^(-|x|^2): K_eps f(0) = sqrt(pi) e^(-eps^2) / 2
    f = sample(lambda x: (x[:, 0] ** 2 - x[:, 1] ** 2) * gaussian(x), grid65)
    eps = 1.0
    got = operators.truncated_transform(builtin("CZ2"), f, TruncationPolicy(eps)).output.at((0.0, 0.0))
    assert got == pytest.approx(0.5 * math.sqrt(math.pi) * math.exp(-eps ** 2), rel=1e-2)


def test_constant_input_cancels_at_the_center(grid33):
    one = sample(lambda x: np.ones(len(x)), grid33)
    for name in ("CZ2", "MIX12"):
        out = operators.truncated_transform(builtin(name), one, TruncationPolicy(0.5)).output
        assert abs(out.at((0.0, 0.0))) <= 1e-12


def test_linearity_and_mask(grid33):
    k = builtin("CZ2")
    pol = TruncationPolicy(0.5)
    f = sample(gaussian, grid33)
    g = sample(lambda x: np.sin(x[:, 0]) * gaussian(x), grid33)
    both = operators.truncated_transform(k, f + g * 2.0, pol)
    sep = operators.truncated_transform(k, f, pol).output.values + \
        2.0 * operators.truncated_transform(k, g, pol).output.values
    np.testing.assert_allclose(both.output.values, sep, atol=1e-13)

    d = both.diagnostics
    assert d.evaluated_points + d.skipped_points == grid33.size
    assert d.straddling_cells > 0
    assert not both.mask[0, 0] and both.mask[16, 16]
    assert np.all(both.output.values[~both.mask] == 0.0)
    single = operators.truncated_transform(k, f, pol).diagnostics
    assert single.truncation_error_estimate == pytest.approx(math.exp(-16.0), rel=1e-12)


def test_outer_box_shrinks_the_evaluation_set(grid33):
    f = sample(gaussian, grid33)
    k = builtin("CZ2")
    full = operators.truncated_transform(k, f, TruncationPolicy(0.5))
    inner = operators.truncated_transform(k, f, TruncationPolicy(0.5, ((-2.0, -2.0), (2.0, 2.0))))
    assert inner.diagnostics.evaluated_points < full.diagnostics.evaluated_points
    assert np.all(full.mask[inner.mask])


def test_variable_kernel_factorizes(grid33):
    pol = TruncationPolicy(0.5)
    f = sample(gaussian, grid33)
    var = operators.truncated_transform(builtin("VAR-CZ2"), f, pol)
    const = operators.truncated_transform(builtin("CZ2"), f, pol)
    factor = 2.0 + np.sin(grid33.points_array()[:, 0]).reshape(grid33.shape)
    np.testing.assert_allclose(var.output.values, factor * const.output.values, atol=1e-12)


def test_commutator_with_constant_is_zero(small_grid):
    f = sample(gaussian, small_grid)
    a = sample(lambda x: np.full(len(x), 2.0), small_grid)
    out = operators.commutator(a, builtin("CZ2"), f, TruncationPolicy(0.5))
    assert np.all(out.output.values == 0.0)


def test_commutator_forms_agree(small_grid):
    f = sample(gaussian, small_grid)
    a = sample(lambda x: np.sin(x[:, 0]), small_grid)
    pol = TruncationPolicy(0.5)
    for name in ("CZ2", "VAR-CZ2"):
        k = builtin(name)
        diff = operators.commutator(a, k, f, pol).output.values
        op = operators.commutator_operator_form(a, k, f, pol).output.values
        assert np.max(np.abs(diff - op)) <= 1e-10 * max(np.max(np.abs(op)), 1.0)


def test_commutator_is_linear_in_a(small_grid):
    f = sample(gaussian, small_grid)
    a = sample(lambda x: np.clip(x[:, 0], -1.0, 1.0), small_grid)
    pol = TruncationPolicy(0.5)
    k = builtin("CZ2")
    lhs = operators.commutator(a * -3.0, k, f, pol).output.values
    rhs = -3.0 * operators.commutator(a, k, f, pol).output.values
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_constant_transform(grid33, iso2):
    basis = HarmonicBasis(2, 2)
    f = sample(gaussian, grid33)
    pol = TruncationPolicy(1.0)
    piece = operators.constant_transform(basis, 1, 2, iso2, f, pol).output.values
    direct = operators.truncated_transform(builtin("CZ2"), f, pol).output.values
    np.testing.assert_allclose(piece, direct, atol=1e-12 * np.max(np.abs(direct)))
    with pytest.raises(InvalidIndexError):
        operators.constant_transform(basis, 1, 0, iso2, f, pol)


@pytest.mark.parametrize("name", ["CZ2", "VAR-CZ2"])
def test_series_reproduces_direct_transform(grid33, name):
    k = builtin(name)
    f = sample(lambda x: gaussian(x - 0.3) * (1.0 + x[:, 0]), grid33)
    pol = TruncationPolicy(1.0)
    direct = operators.truncated_transform(k, f, pol).output.values
    series = operators.series_transform(k, f, pol, 8)
    assert series.diagnostics.terms == 1
    assert np.max(np.abs(series.output.values - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_series_of_mix12(grid33):
    k = builtin("MIX12")
    f = sample(gaussian, grid33)
    pol = TruncationPolicy(1.0)
    direct = operators.truncated_transform(k, f, pol).output.values
    series = operators.series_transform(k, f, pol, 4).output.values
    assert np.linalg.norm(series - direct) <= 1e-8 * np.linalg.norm(direct)


def test_series_needs_degree_two(grid33):
    with pytest.raises(InvalidArgumentError):
        operators.series_transform(builtin("CZ2"), sample(gaussian, grid33), TruncationPolicy(1.0), 1)


def test_epsilon_refinement(grid33):
    ref = operators.epsilon_refinement(builtin("CZ2"), sample(gaussian, grid33), [0.5, 1.0, 2.0])
    assert ref.epsilons == [2.0, 1.0, 0.5]
    assert len(ref.deltas) == 2 and len(ref.results) == 3
    assert all(d > 0 for d in ref.deltas)
    d0 = ref.results[0].output - ref.results[1].output
    assert ref.deltas[0] <= lp_norm(d0, 2.0) + 1e-15


def test_hormander_pointwise_is_nested_and_dilation_invariant(aniso2):
    basis = HarmonicBasis(2, 4)
    e = Ellipsoid((0.2, -0.1), 1.0, aniso2)
    small = operators.hormander_pointwise(basis, 1, 2, aniso2, e, 1000, seed=5)
    large = operators.hormander_pointwise(basis, 1, 2, aniso2, e, 2000, seed=5)
    assert math.isfinite(small) and large >= small
    for r in (0.5, 2.0):
        scaled = operators.hormander_pointwise(basis, 1, 2, aniso2, Ellipsoid(e.center, r, aniso2), 1000, seed=5)
        assert scaled == pytest.approx(small, rel=1e-9)


def test_hormander_pointwise_arguments(iso2, aniso2):
    basis = HarmonicBasis(2, 2)
    with pytest.raises(InvalidArgumentError):
        operators.hormander_pointwise(basis, 1, 1, iso2, Ellipsoid((0.0, 0.0), 1.0, iso2), 10)
    with pytest.raises(InvalidArgumentError):
        operators.hormander_pointwise(basis, 1, 1, iso2, Ellipsoid((0.0, 0.0), 1.0, aniso2), 1000)


def test_hormander_integral(iso2):
    basis = HarmonicBasis(2, 2)
    a = operators.hormander_integral(basis, 1, 1, iso2, np.array([1.0, 0.0]), 64.0)
    b = operators.hormander_integral(basis, 1, 1, iso2, np.array([2.0, 0.0]), 128.0)
    assert a.value > 0 and math.isfinite(a.value)
    assert a.value == pytest.approx(b.value, rel=1e-10)
    assert a.r_min == pytest.approx(4.0) and a.tail_estimate >= 0.0
    c = operators.hormander_integral(basis, 1, 1, iso2, np.array([1.0, 0.0]), 128.0)
    assert c.value == pytest.approx(a.value, rel=1e-2)
    with pytest.raises(InvalidArgumentError):
        operators.hormander_integral(basis, 1, 1, iso2, np.array([1.0, 0.0]), 6.0)
    with pytest.raises(InvalidArgumentError):
        operators.hormander_integral(basis, 1, 1, iso2, np.zeros(2), 64.0)


def test_constant_kernel_fft_matches_direct_sum(grid33):
    f = sample(lambda x: gaussian(x - 0.4) * (1.0 + x[:, 1]), grid33)
    pol = TruncationPolicy(0.75)
    for name in ("CZ2", "MIX12"):
        k = builtin(name)
        fast = operators.truncated_transform(k, f, pol).output.values
        direct = operators.truncated_transform(dataclasses.replace(k, x_dependent=True), f, pol).output.values
        np.testing.assert_allclose(fast, direct, atol=1e-12 * np.max(np.abs(direct)))


def test_hormander_integral_uses_the_anisotropic_polar_measure(aniso2):
    # reference in polar form y = (r cos t, r^2 sin t), dy = r^2 (cos^2 t + 2 sin^2 t) dr dt
    basis = HarmonicBasis(2, 2)
    x = np.array([0.05, 0.01])
    got = operators.hormander_integral(basis, 1, 2, aniso2, x, 8.0)
    H = hsm_kernel(basis, 1, 2, aniso2)
    t = 2.0 * np.pi * np.arange(4096) / 4096
    c, s = np.cos(t), np.sin(t)
    density = c ** 2 + 2.0 * s ** 2

    def shell(r):
        y = np.column_stack([r * c, r ** 2 * s])
        vals = np.abs(H(x, y - x) - H(x, y))
        return r ** 2 * np.dot(density, vals) * (2.0 * np.pi / 4096)

    want, _ = quad(shell, got.r_min, 8.0, limit=200, epsrel=1e-9)
    assert got.partial == pytest.approx(want, rel=5e-3)


def test_hormander_integral_anisotropic_dilation(aniso2):
    basis = HarmonicBasis(2, 3)
    x = np.array([0.3, -0.2])
    a = operators.hormander_integral(basis, 2, 3, aniso2, x, 20.0 * rho(x, aniso2))
    b = operators.hormander_integral(basis, 2, 3, aniso2, dilate(2.0, x, aniso2), 40.0 * rho(x, aniso2))
    assert a.value == pytest.approx(b.value, rel=1e-9)
    assert b.r_min == pytest.approx(2.0 * a.r_min)


def test_hormander_pointwise_in_three_dimensions(aniso3):
    basis = HarmonicBasis(3, 2)
    e = Ellipsoid((0.1, 0.0, -0.2), 1.0, aniso3)
    value = operators.hormander_pointwise(basis, 1, 2, aniso3, e, 1000, seed=2)
    scaled = operators.hormander_pointwise(basis, 1, 2, aniso3, Ellipsoid(e.center, 3.0, aniso3), 1000, seed=2)
    assert math.isfinite(value) and value > 0.0
    assert scaled == pytest.approx(value, rel=1e-9)
