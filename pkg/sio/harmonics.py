"""
Real orthonormal spherical harmonics on the unit sphere for n = 2 and n = 3.

Indexing is (s, m): m is the degree and s runs over 1..g_m.
  n = 2:  Y_{1,0} = 1/sqrt(2 pi);  Y_{1,m} = cos(m t)/sqrt(pi),  Y_{2,m} = sin(m t)/sqrt(pi)
  n = 3:  s = 1 is the zonal function, s = 2k / 2k+1 carry cos(k phi) / sin(k phi),
          built from associated Legendre functions (Condon-Shortley phase, as scipy).

The kernels H_sm(xi) = Y_sm(xi_bar) rho(xi)^(-alpha) use the component-wise projection
xi_bar_i = xi_i / rho(xi)^alpha_i, which is the one that lands on the unit sphere when the
exponents differ.
"""
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import gammaln, lpmv

from core.logger import logger
from core.state import traced
from sio.errors import InvalidArgumentError, InvalidIndexError, SingularPointError, UnsupportedDimensionError
from sio.kernel import VariableKernel
from sio.metric import SPHERE_DIMENSIONS, AnisotropyProfile, SphereQuadrature, normalize, rho
from sio.numdiff import finite_difference, multiindices

ON_SPHERE_TOL = 1e-10
NEGLIGIBLE = 1e-14
DEFAULT_MAX_DEGREE = 16


def _check_dimension(n: int):
    if n not in SPHERE_DIMENSIONS:
        raise UnsupportedDimensionError(f"harmonic bases are implemented for n in {SPHERE_DIMENSIONS}, got {n}")


@traced("harmonics.basis_dim")
def basis_dim(n: int, m: int) -> int:
    """Dimension g_m of the degree-m spherical harmonics on the sphere in R^n."""
    _check_dimension(n)
    if m < 0:
        raise InvalidIndexError(f"degree must be >= 0, got {m}")
    if m == 0:
        return 1
    if m == 1:
        return n
    return math.comb(m + n - 1, n - 1) - math.comb(m + n - 3, n - 1)


def dimension_growth_constant(n: int, max_degree: int) -> float:
    """Empirical C(n) in g_m <= C(n) m^(n-2) over 2 <= m <= max_degree."""
    return max(basis_dim(n, m) / m ** (n - 2) for m in range(2, max_degree + 1))


@dataclass(frozen=True)
class HarmonicBasis:
    n: int
    max_degree: int
    # (s, m) pairs in column order of evaluate_all
    index: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        _check_dimension(self.n)
        if self.max_degree < 0:
            raise InvalidArgumentError(f"max_degree must be >= 0, got {self.max_degree}")
        idx = tuple((s, m) for m in range(self.max_degree + 1) for s in range(1, basis_dim(self.n, m) + 1))
        object.__setattr__(self, "index", idx)

    @property
    def size(self) -> int:
        return len(self.index)

    def column(self, s: int, m: int) -> int:
        self.check_index(s, m)
        return self.index.index((s, m))

    def check_index(self, s: int, m: int):
        if not (0 <= m <= self.max_degree) or not (1 <= s <= basis_dim(self.n, m)):
            raise InvalidIndexError(f"(s={s}, m={m}) is outside the basis (n={self.n}, M={self.max_degree})")


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def _angles(points: np.ndarray):
    if points.shape[1] == 2:
        return (np.arctan2(points[:, 1], points[:, 0]),)
    z = np.clip(points[:, 2], -1.0, 1.0)
    return np.arccos(z), np.arctan2(points[:, 1], points[:, 0])


def _order(s: int) -> tuple[int, int]:
    """n=3 column s -> (order k, trig kind 0=none/1=cos/2=sin)."""
    if s == 1:
        return 0, 0
    return s // 2, 1 if s % 2 == 0 else 2


def _norm3(l: int, k: int) -> float:
    log_ratio = gammaln(l - k + 1) - gammaln(l + k + 1)
    c = math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.exp(log_ratio))
    return c * math.sqrt(2.0) if k > 0 else c


def _values(n: int, s: int, m: int, points: np.ndarray) -> np.ndarray:
    if n == 2:
        (t,) = _angles(points)
        if m == 0:
            return np.full(len(points), 1.0 / math.sqrt(2.0 * math.pi))
        trig = np.cos if s == 1 else np.sin
        return trig(m * t) / math.sqrt(math.pi)
    theta, phi = _angles(points)
    k, kind = _order(s)
    radial = _norm3(m, k) * lpmv(k, m, np.cos(theta))
    if kind == 0:
        return radial
    return radial * (np.cos(k * phi) if kind == 1 else np.sin(k * phi))


def _sphere_gradient(n: int, s: int, m: int, points: np.ndarray) -> np.ndarray:
    """Tangential gradient on the sphere (= ambient gradient of the 0-homogeneous extension)."""
    if n == 2:
        (t,) = _angles(points)
        if m == 0:
            return np.zeros_like(points)
        dt = (-m * np.sin(m * t) if s == 1 else m * np.cos(m * t)) / math.sqrt(math.pi)
        return dt[:, None] * np.column_stack([-np.sin(t), np.cos(t)])

    theta, phi = _angles(points)
    k, kind = _order(s)
    x = np.cos(theta)
    c = _norm3(m, k)
    p = lpmv(k, m, x)
    if k == 0:
        dp = lpmv(1, m, x)
    else:
        dp = 0.5 * (lpmv(k + 1, m, x) - (m + k) * (m - k + 1) * lpmv(k - 1, m, x))
    if kind == 0:
        trig, dtrig = np.ones_like(phi), np.zeros_like(phi)
    elif kind == 1:
        trig, dtrig = np.cos(k * phi), -k * np.sin(k * phi)
    else:
        trig, dtrig = np.sin(k * phi), k * np.cos(k * phi)
    sin_t = np.maximum(np.sin(theta), 1e-15)
    d_theta = c * dp * trig
    d_phi = c * p * dtrig / sin_t
    e_theta = np.column_stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    e_phi = np.column_stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
    return d_theta[:, None] * e_theta + d_phi[:, None] * e_phi


def _on_sphere(points, n: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != n:
        raise InvalidArgumentError(f"points must have {n} coordinates, got shape {pts.shape}")
    if np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) > ON_SPHERE_TOL:
        raise InvalidArgumentError("harmonics are evaluated on the unit sphere only")
    return pts


@traced("harmonics.eval_harmonic")
def eval_harmonic(basis: HarmonicBasis, s: int, m: int, point):
    basis.check_index(s, m)
    single = np.ndim(point) == 1
    pts = _on_sphere(point, basis.n)
    out = _values(basis.n, s, m, pts)
    return float(out[0]) if single else out


def sphere_gradient(basis: HarmonicBasis, s: int, m: int, point):
    basis.check_index(s, m)
    single = np.ndim(point) == 1
    pts = _on_sphere(point, basis.n)
    out = _sphere_gradient(basis.n, s, m, pts)
    return out[0] if single else out


def evaluate_all(basis: HarmonicBasis, points) -> np.ndarray:
    """(N, basis.size) matrix of every basis function at every point."""
    pts = _on_sphere(points, basis.n)
    return np.column_stack([_values(basis.n, s, m, pts) for s, m in basis.index])


def gram_matrix(basis: HarmonicBasis, q: SphereQuadrature) -> np.ndarray:
    Y = evaluate_all(basis, q.nodes)
    return Y.T @ (q.weights[:, None] * Y)


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------

@dataclass
class HarmonicCoefficients:
    basis: HarmonicBasis
    # (P, basis.size): one row per evaluation point x (P = 1 for x-independent functions)
    values: np.ndarray
    x_points: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.basis.size:
            raise InvalidArgumentError(f"coefficient table has {self.values.shape[1]} columns, basis has {self.basis.size}")

    def table(self, m: int) -> np.ndarray:
        """b_sm for s = 1..g_m (rows per x point when x-dependent)."""
        cols = [i for i, (_, mm) in enumerate(self.basis.index) if mm == m]
        out = self.values[:, cols]
        return out[0] if len(out) == 1 else out

    def coefficient(self, s: int, m: int):
        col = self.values[:, self.basis.column(s, m)]
        return float(col[0]) if len(col) == 1 else col

    @property
    def sup_norms(self) -> np.ndarray:
        """max over s (and x) of |b_sm| for m = 0..M."""
        return np.array([np.max(np.abs(self.table(m))) for m in range(self.basis.max_degree + 1)])

    def truncated(self, max_degree: int) -> "HarmonicCoefficients":
        keep = [i for i, (_, m) in enumerate(self.basis.index) if m <= max_degree]
        return HarmonicCoefficients(HarmonicBasis(self.basis.n, max_degree), self.values[:, keep], self.x_points)


SphereFunction = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


@traced("harmonics.expand")
def expand(phi: SphereFunction, basis: HarmonicBasis, q: SphereQuadrature) -> HarmonicCoefficients:
    """b_sm = integral of phi * Y_sm over the sphere, by quadrature."""
    if q.n != basis.n:
        raise InvalidArgumentError(f"quadrature dimension {q.n} does not match basis dimension {basis.n}")
    values = phi(q.nodes) if callable(phi) else phi
    values = np.atleast_2d(np.asarray(values, dtype=float))
    Y = evaluate_all(basis, q.nodes)
    return HarmonicCoefficients(basis, (values * q.weights[None, :]) @ Y)


def expand_kernel(k: VariableKernel, basis: HarmonicBasis, q: SphereQuadrature, xs=None) -> HarmonicCoefficients:
    """Coefficients b_sm(x) of k(x; .) restricted to the sphere, one row per x."""
    if k.n != basis.n:
        raise InvalidArgumentError(f"kernel dimension {k.n} does not match basis dimension {basis.n}")
    if xs is None or not k.x_dependent:
        rows = k(np.zeros(k.n), q.nodes)[None, :]
        coeffs = expand(rows, basis, q)
        coeffs.x_points = None if xs is None else np.atleast_2d(xs)
        return coeffs
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    nq = len(q.nodes)
    rows = k(np.repeat(xs, nq, axis=0), np.tile(q.nodes, (len(xs), 1))).reshape(len(xs), nq)
    coeffs = expand(rows, basis, q)
    coeffs.x_points = xs
    return coeffs


def reconstruct(c: HarmonicCoefficients, points, max_degree: int | None = None) -> np.ndarray:
    """Partial sum of b_sm Y_sm up to max_degree at sphere points; (P, N) for x-dependent tables."""
    cut = c.basis.max_degree if max_degree is None else max_degree
    Y = evaluate_all(c.basis, points)
    mask = np.array([m <= cut for _, m in c.basis.index])
    out = c.values[:, mask] @ Y[:, mask].T
    return out[0] if len(out) == 1 else out


@dataclass
class DecayFit:
    slope: float
    degenerate: bool
    passed: bool
    degrees: list[int] = field(default_factory=list)
    sup_norms: list[float] = field(default_factory=list)


@traced("harmonics.decay_fit")
def decay_fit(c: HarmonicCoefficients, threshold_slope: float = -2.0) -> DecayFit:
    """Least-squares slope of log max_s|b_sm| against log m over the non-negligible degrees m >= 1."""
    if c.basis.max_degree < 16:
        raise InvalidArgumentError(f"decay fit needs coefficients up to m >= 16, got {c.basis.max_degree}")
    sups = c.sup_norms
    floor = max(NEGLIGIBLE, 1e-12 * float(np.max(sups)))
    degrees = [m for m in range(1, len(sups)) if sups[m] > floor]
    if len(degrees) < 2:
        logger.warning(f"decay_fit: degenerate table ({len(degrees)} non-negligible degree(s))")
        return DecayFit(float("nan"), True, False, degrees, [float(sups[m]) for m in degrees])
    slope = float(np.polyfit(np.log(degrees), np.log(sups[degrees]), 1)[0])
    return DecayFit(slope, False, slope <= threshold_slope, degrees, [float(sups[m]) for m in degrees])


def coefficients_to_csv(c: HarmonicCoefficients, row: int = 0) -> str:
    """CSV text with columns m, s, b_sm for one coefficient row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["m", "s", "b_sm"])
    for (s, m), b in zip(c.basis.index, c.values[row]):
        writer.writerow([m, s, repr(float(b))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Derivative growth
# ---------------------------------------------------------------------------

def _extended_gradient(n: int, s: int, m: int, pts: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(pts, axis=1)
    return _sphere_gradient(n, s, m, pts / r[:, None]) / r[:, None]


def derivative_sups(basis: HarmonicBasis, order: int, q: SphereQuadrature, degrees=None) -> dict[int, float]:
    """sup over the nodes of q, over s and over |beta| = order of |D^beta Y_sm| (0-homogeneous extension)."""
    if order not in (0, 1, 2):
        raise InvalidArgumentError(f"derivative order must be 0, 1 or 2, got {order}")
    degrees = range(1, basis.max_degree + 1) if degrees is None else degrees
    out = {}
    for m in degrees:
        best = 0.0
        for s in range(1, basis_dim(basis.n, m) + 1):
            if order == 0:
                vals = np.abs(_values(basis.n, s, m, q.nodes))
            elif order == 1:
                vals = np.abs(_sphere_gradient(basis.n, s, m, q.nodes))
            else:
                cols = [
                    finite_difference(lambda p, s=s, m=m: _extended_gradient(basis.n, s, m, p), q.nodes, e)
                    for e in multiindices(basis.n, 1, exact=True)
                ]
                vals = np.abs(np.concatenate(cols, axis=1))
            best = max(best, float(np.max(vals)))
        out[m] = best
    return out


def derivative_growth(basis: HarmonicBasis, order: int, q: SphereQuadrature, degrees=None) -> tuple[float, dict]:
    """Fitted exponent e in sup|D^beta Y_sm| ~ C m^e, with the per-degree sups."""
    sups = derivative_sups(basis, order, q, degrees)
    ms = np.array(sorted(sups))
    exponent = float(np.polyfit(np.log(ms), np.log([sups[m] for m in ms]), 1)[0])
    return exponent, sups


# ---------------------------------------------------------------------------
# Constant kernels H_sm
# ---------------------------------------------------------------------------

def _check_pair(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile):
    basis.check_index(s, m)
    if profile.n != basis.n:
        raise InvalidArgumentError(f"profile dimension {profile.n} does not match basis dimension {basis.n}")


@traced("harmonics.hsm_kernel")
def hsm_kernel(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile) -> VariableKernel:
    """Constant kernel xi -> Y_sm(xi_bar) rho(xi)^(-alpha)."""
    _check_pair(basis, s, m, profile)
    alpha = profile.homogeneous_dimension

    def evaluate(x, xi):
        if np.any(np.all(xi == 0.0, axis=1)):
            raise SingularPointError(f"H_({s},{m}) is singular at xi = 0")
        xbar, r = normalize(xi, profile)
        return _values(basis.n, s, m, xbar) * r ** (-alpha)

    return VariableKernel(f"H({s},{m})", profile, evaluate, x_dependent=False)


@traced("harmonics.hsm_gradient")
def hsm_gradient(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile, x):
    """
    Analytic gradient of H_sm at x != 0:
        dH/dx_i = rho^-(alpha+alpha_i) [ dY_i - (x_bar_i / S) (alpha Y + sum_k alpha_k x_bar_k dY_k) ]
    with S = sum_j alpha_j x_bar_j^2 and dY the sphere gradient of Y_sm at x_bar.
    """
    _check_pair(basis, s, m, profile)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.all(pts == 0.0, axis=1)):
        raise SingularPointError("hsm_gradient is undefined at the origin")
    a = profile.alpha
    xbar, r = normalize(pts, profile)
    Y = _values(basis.n, s, m, xbar)
    dY = _sphere_gradient(basis.n, s, m, xbar)
    S = (a[None, :] * xbar ** 2).sum(axis=1)
    mixed = (a[None, :] * xbar * dY).sum(axis=1)
    inner = dY - xbar / S[:, None] * (profile.homogeneous_dimension * Y + mixed)[:, None]
    grad = inner / r[:, None] ** (profile.homogeneous_dimension + a[None, :])
    return grad[0] if np.ndim(x) == 1 else grad


def gradient_bound_ratio(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile, x) -> np.ndarray:
    """max_i |dH/dx_i| rho^(alpha+alpha_i) / m^(n/2) per point; bounded uniformly in x and m."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    grad = np.atleast_2d(hsm_gradient(basis, s, m, profile, pts))
    r = np.atleast_1d(rho(pts, profile))
    scaled = np.abs(grad) * r[:, None] ** (profile.homogeneous_dimension + profile.alpha[None, :])
    return scaled.max(axis=1) / max(m, 1) ** (basis.n / 2.0)
