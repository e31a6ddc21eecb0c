import math

import numpy as np
import pytest

from sio import harmonics
from sio.errors import InvalidArgumentError, InvalidIndexError, SingularPointError, UnsupportedDimensionError
from sio.kernel import builtin
from sio.metric import AnisotropyProfile, sphere_quadrature
from sio.numdiff import finite_difference


@pytest.mark.parametrize("m", range(0, 25))
def test_basis_dimensions(m):
    assert harmonics.basis_dim(2, m) == (1 if m == 0 else 2)
    assert harmonics.basis_dim(3, m) == 2 * m + 1


def test_basis_dimension_errors():
    with pytest.raises(InvalidIndexError):
        harmonics.basis_dim(2, -1)
    with pytest.raises(UnsupportedDimensionError):
        harmonics.basis_dim(4, 2)


def test_basis_index_order():
    b = harmonics.HarmonicBasis(2, 2)
    assert b.index == ((1, 0), (1, 1), (2, 1), (1, 2), (2, 2))
    assert b.column(2, 2) == 4
    with pytest.raises(InvalidIndexError):
        b.column(3, 1)
    with pytest.raises(InvalidIndexError):
        b.check_index(1, 3)


@pytest.mark.parametrize("n,degree,res", [(2, 16, 68), (3, 8, 20)])
def test_gram_matrix_is_identity(n, degree, res):
    basis = harmonics.HarmonicBasis(n, degree)
    G = harmonics.gram_matrix(basis, sphere_quadrature(n, res))
    assert np.max(np.abs(G - np.eye(basis.size))) <= 1e-8


def test_closed_form_values():
    b2 = harmonics.HarmonicBasis(2, 3)
    assert harmonics.eval_harmonic(b2, 1, 0, np.array([0.0, 1.0])) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert harmonics.eval_harmonic(b2, 2, 3, np.array([0.0, 1.0])) == pytest.approx(-1 / math.sqrt(math.pi))
    b3 = harmonics.HarmonicBasis(3, 1)
    assert harmonics.eval_harmonic(b3, 1, 1, np.array([0.0, 0.0, -1.0])) == pytest.approx(
        -math.sqrt(3 / (4 * math.pi)))


def test_eval_requires_unit_sphere():
    with pytest.raises(InvalidArgumentError):
        harmonics.eval_harmonic(harmonics.HarmonicBasis(2, 2), 1, 1, np.array([2.0, 0.0]))


def test_expand_recovers_a_combination():
    basis = harmonics.HarmonicBasis(2, 6)
    q = sphere_quadrature(2, 64)
    coeffs = harmonics.expand(lambda p: 3.0 * np.cos(2 * np.arctan2(p[:, 1], p[:, 0])) / math.sqrt(math.pi)
                              - 0.5 * np.sin(5 * np.arctan2(p[:, 1], p[:, 0])) / math.sqrt(math.pi), basis, q)
    assert coeffs.coefficient(1, 2) == pytest.approx(3.0, abs=1e-12)
    assert coeffs.coefficient(2, 5) == pytest.approx(-0.5, abs=1e-12)
    others = [v for (s, m), v in zip(basis.index, coeffs.values[0]) if (s, m) not in ((1, 2), (2, 5))]
    assert max(abs(v) for v in others) <= 1e-12
    pts = q.nodes[::5]
    np.testing.assert_allclose(harmonics.reconstruct(coeffs, pts, 2),
                               3.0 * np.cos(2 * np.arctan2(pts[:, 1], pts[:, 0])) / math.sqrt(math.pi), atol=1e-12)


def test_expand_kernel_of_var_cz2():
    basis = harmonics.HarmonicBasis(2, 4)
    xs = np.array([[0.0, 0.0], [1.0, 2.0]])
    coeffs = harmonics.expand_kernel(builtin("VAR-CZ2"), basis, sphere_quadrature(2, 64), xs)
    np.testing.assert_allclose(coeffs.coefficient(1, 2), 2.0 + np.sin(xs[:, 0]), atol=1e-12)
    assert coeffs.values.shape == (2, basis.size)


def test_coefficients_csv():
    basis = harmonics.HarmonicBasis(2, 2)
    coeffs = harmonics.expand_kernel(builtin("CZ2"), basis, sphere_quadrature(2, 32))
    lines = harmonics.coefficients_to_csv(coeffs).splitlines()
    assert lines[0] == "m,s,b_sm"
    assert len(lines) == 1 + basis.size
    assert lines[4].startswith("2,1,")
    assert float(lines[4].split(",")[2]) == pytest.approx(1.0)


def test_decay_fit_on_smooth_function():
    basis = harmonics.HarmonicBasis(2, 20)
    fit = harmonics.decay_fit(harmonics.expand(lambda p: np.exp(p[:, 0]), basis, sphere_quadrature(2, 128)))
    assert not fit.degenerate
    assert fit.passed and fit.slope <= -2.0


def test_decay_fit_degenerate_and_short_tables():
    q = sphere_quadrature(2, 128)
    fit = harmonics.decay_fit(harmonics.expand(lambda p: np.ones(len(p)), harmonics.HarmonicBasis(2, 16), q))
    assert fit.degenerate and not fit.passed and math.isnan(fit.slope)
    with pytest.raises(InvalidArgumentError):
        harmonics.decay_fit(harmonics.expand(lambda p: p[:, 0], harmonics.HarmonicBasis(2, 8), q))


def test_derivative_growth_in_the_plane():
    basis = harmonics.HarmonicBasis(2, 12)
    q = sphere_quadrature(2, 128)
    e0, sups0 = harmonics.derivative_growth(basis, 0, q)
    e1, _ = harmonics.derivative_growth(basis, 1, q)
    assert abs(e0) <= 0.05
    assert sups0[1] == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
    assert e1 == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("exponents", [(1.0, 1.0), (1.0, 2.0)])
@pytest.mark.parametrize("s,m", [(1, 1), (2, 2), (1, 3)])
def test_hsm_gradient_matches_finite_differences(exponents, s, m):
    profile = AnisotropyProfile(exponents)
    basis = harmonics.HarmonicBasis(2, 3)
    H = harmonics.hsm_kernel(basis, s, m, profile)
    pts = np.array([[0.6, -0.4], [1.5, 1.2], [-0.3, 0.9], [-2.0, -0.1]])
    fd = np.column_stack([finite_difference(lambda p: H(np.zeros(2), p), pts, e) for e in ((1, 0), (0, 1))])
    np.testing.assert_allclose(harmonics.hsm_gradient(basis, s, m, profile, pts), fd, rtol=1e-6, atol=1e-8)


def test_hsm_kernel_is_homogeneous_and_matches_cz2(aniso2, iso2):
    basis = harmonics.HarmonicBasis(2, 2)
    H = harmonics.hsm_kernel(basis, 1, 2, iso2)
    xi = np.array([[0.3, 0.7], [-2.0, 1.0]])
    np.testing.assert_allclose(H(np.zeros(2), xi), builtin("CZ2")(np.zeros(2), xi), rtol=1e-12)
    Ha = harmonics.hsm_kernel(basis, 2, 1, aniso2)
    mu = 1.7
    scaled = xi * mu ** aniso2.alpha[None, :]
    np.testing.assert_allclose(Ha(np.zeros(2), scaled), mu ** -3.0 * Ha(np.zeros(2), xi), rtol=1e-10)


def test_hsm_singular_at_origin(iso2):
    basis = harmonics.HarmonicBasis(2, 2)
    with pytest.raises(SingularPointError):
        harmonics.hsm_kernel(basis, 1, 1, iso2)(np.zeros(2), np.zeros((1, 2)))
    with pytest.raises(SingularPointError):
        harmonics.hsm_gradient(basis, 1, 1, iso2, np.zeros(2))


def test_gradient_bound_ratio_is_bounded_in_m(aniso2):
    basis = harmonics.HarmonicBasis(2, 8)
    pts = np.random.default_rng(0).standard_normal((200, 2))
    ratios = [float(np.max(harmonics.gradient_bound_ratio(basis, 1, m, aniso2, pts))) for m in (1, 2, 4, 8)]
    assert max(ratios) / min(ratios) <= 10.0


@pytest.mark.parametrize("s,m", [(1, 1), (3, 2), (5, 2)])
def test_hsm_gradient_in_three_dimensions(aniso3, s, m):
    basis = harmonics.HarmonicBasis(3, 2)
    H = harmonics.hsm_kernel(basis, s, m, aniso3)
    pts = np.array([[0.6, -0.4, 0.3], [1.1, 0.2, -0.9], [-0.3, 0.8, 0.5]])
    grad = harmonics.hsm_gradient(basis, s, m, aniso3, pts)
    fd = np.column_stack([finite_difference(lambda p: H(np.zeros(3), p), pts, e)
                          for e in ((1, 0, 0), (0, 1, 0), (0, 0, 1))])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)
    # d_i H(mu o x) = mu^-(alpha + alpha_i) d_i H(x)
    mu = 1.6
    scaled = harmonics.hsm_gradient(basis, s, m, aniso3, pts * mu ** aniso3.alpha[None, :])
    np.testing.assert_allclose(scaled, grad * mu ** -(aniso3.homogeneous_dimension + aniso3.alpha[None, :]),
                               rtol=1e-10)
