"""
Anisotropic quasi-distance, dilations, ellipsoids and quadrature on the unit sphere.

The quasi-distance rho(x) is the unique positive root of
    F(x, rho) = sum_i x_i^2 rho^(-2 alpha_i) = 1,
F being strictly decreasing in rho for x != 0. Its balls are the ellipsoids
    sum_i (x_i - c_i)^2 / r^(2 alpha_i) < 1
with Lebesgue measure V_n r^alpha, alpha = sum_i alpha_i.

All functions accept a single point of shape (n,) or a stack of shape (N, n);
the result shape follows the input.
"""
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gamma

from core.logger import logger
from core.state import traced
from sio.errors import InvalidArgumentError, SingularPointError, UnsupportedDimensionError

RHO_TOL = 1e-13
CONTAINS_TOL = 1e-12
_MAX_NEWTON_STEPS = 200

# Dimensions with tabulated sphere rules and harmonic bases
SPHERE_DIMENSIONS = (2, 3)


@dataclass(frozen=True)
class AnisotropyProfile:
    exponents: tuple[float, ...]
    homogeneous_dimension: float = field(init=False)

    def __post_init__(self):
        exps = tuple(float(a) for a in self.exponents)
        if len(exps) < 2:
            raise InvalidArgumentError(f"profile needs n >= 2 exponents, got {len(exps)}")
        if not all(math.isfinite(a) and a >= 1.0 for a in exps):
            raise InvalidArgumentError(f"every exponent must be a finite real >= 1, got {exps}")
        object.__setattr__(self, "exponents", exps)
        # math.fsum keeps the sum exact for the usual (integer / half-integer) exponents
        object.__setattr__(self, "homogeneous_dimension", math.fsum(exps))

    @property
    def n(self) -> int:
        return len(self.exponents)

    @property
    def alpha(self) -> np.ndarray:
        return np.asarray(self.exponents)

    @property
    def isotropic(self) -> bool:
        return len(set(self.exponents)) == 1

    @classmethod
    def isotropic_profile(cls, n: int) -> "AnisotropyProfile":
        return cls(tuple([1.0] * n))


def _as_points(x, n: int) -> tuple[np.ndarray, bool]:
    """Return x as an (N, n) float array and whether the caller passed a single point."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != n:
        raise InvalidArgumentError(f"points must have {n} coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("points must be finite")
    return arr, single


def rho_bracket(x, profile: AnisotropyProfile) -> tuple[np.ndarray, np.ndarray]:
    """
    Bracket [lo, hi] of rho(x) for nonzero x.

    lo = max_i |x_i|^(1/alpha_i) makes one term of F equal to 1, so F(lo) >= 1;
    hi = n^(1/(2 min alpha)) * lo makes every term at most 1/n, so F(hi) <= 1.
    """
    pts, _ = _as_points(x, profile.n)
    a = profile.alpha
    lo = np.max(np.abs(pts) ** (1.0 / a), axis=1)
    hi = lo * profile.n ** (1.0 / (2.0 * a.min()))
    return lo, hi


def _solve_rho(pts: np.ndarray, profile: AnisotropyProfile) -> np.ndarray:
    a = profile.alpha
    x2 = pts ** 2
    lo, hi = rho_bracket(pts, profile)
    lo_u, hi_u = np.log(lo), np.log(hi)
    # Newton on u = log(rho): g(u) = log F is smooth and convex in u
    u = 0.5 * (lo_u + hi_u)
    done = np.zeros(len(pts), dtype=bool)
    for step in range(_MAX_NEWTON_STEPS):
        w = x2 * np.exp(-2.0 * a[None, :] * u[:, None])
        F = w.sum(axis=1)
        done = (np.abs(F - 1.0) <= RHO_TOL) | (hi_u - lo_u <= 1e-15 * np.maximum(1.0, np.abs(u)))
        if done.all():
            break
        lo_u = np.where(F > 1.0, u, lo_u)
        hi_u = np.where(F < 1.0, u, hi_u)
        g = np.log(F)
        dg = -2.0 * (a[None, :] * w).sum(axis=1) / F
        with np.errstate(divide="ignore", invalid="ignore"):
            u_new = u - g / dg
        # Bisection whenever the Newton step leaves the bracket
        outside = ~np.isfinite(u_new) | (u_new <= lo_u) | (u_new >= hi_u)
        u_new = np.where(outside, 0.5 * (lo_u + hi_u), u_new)
        u = np.where(done, u, u_new)
    else:
        logger.warning(f"rho: {int((~done).sum())} point(s) did not reach tolerance")
    return np.exp(u)


@traced("metric.rho")
def rho(x, profile: AnisotropyProfile):
    """Quasi-distance of x (or of every row of x) from the origin."""
    pts, single = _as_points(x, profile.n)
    out = np.zeros(len(pts))
    nonzero = np.any(pts != 0.0, axis=1)
    if nonzero.any():
        if profile.isotropic:
            a0 = profile.exponents[0]
            out[nonzero] = np.linalg.norm(pts[nonzero], axis=1) ** (1.0 / a0)
        else:
            out[nonzero] = _solve_rho(pts[nonzero], profile)
    return float(out[0]) if single else out


@traced("metric.dilate")
def dilate(mu: float, x, profile: AnisotropyProfile):
    """Anisotropic dilation mu o x = (mu^alpha_1 x_1, ..., mu^alpha_n x_n)."""
    if not (math.isfinite(mu) and mu > 0):
        raise InvalidArgumentError(f"dilation factor must be positive, got {mu}")
    pts, single = _as_points(x, profile.n)
    out = pts * mu ** profile.alpha[None, :]
    return out[0] if single else out


def normalize(x, profile: AnisotropyProfile):
    """Component-wise projection x_bar_i = x_i / rho(x)^alpha_i onto the unit sphere."""
    pts, single = _as_points(x, profile.n)
    r = np.atleast_1d(rho(pts, profile))
    if np.any(r == 0.0):
        raise SingularPointError("normalize is undefined at the origin")
    out = pts / r[:, None] ** profile.alpha[None, :]
    return (out[0], float(r[0])) if single else (out, r)


def rho_gradient(x, profile: AnisotropyProfile):
    """
    Gradient of rho from the implicit function theorem applied to F(x, rho(x)) = 1:
        d rho / d x_i = x_i rho^(1 - 2 alpha_i) / sum_j alpha_j x_j^2 rho^(-2 alpha_j)
    """
    pts, single = _as_points(x, profile.n)
    xbar, r = normalize(pts, profile)
    a = profile.alpha
    s = (a[None, :] * xbar ** 2).sum(axis=1)
    grad = xbar * r[:, None] ** (1.0 - a[None, :]) / s[:, None]
    return grad[0] if single else grad


def polar_jacobian(theta, r, profile: AnisotropyProfile):
    """
    Density of dy in the coordinates y = r o theta: r^(alpha-1) * sum_i alpha_i theta_i^2.
    Scalar r gives one value per node, shape (N,); an array of radii gives (len(r), N).
    """
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    ang = (profile.alpha[None, :] * th ** 2).sum(axis=1)
    return np.multiply.outer(np.asarray(r, dtype=float) ** (profile.homogeneous_dimension - 1.0), ang)


def rho_boundary_distance(x, lower, upper, profile: AnisotropyProfile):
    """rho-distance from x to the complement of the box [lower, upper] (rho(t e_i) = |t|^(1/alpha_i))."""
    pts, single = _as_points(x, profile.n)
    gap = np.minimum(pts - np.asarray(lower, float)[None, :], np.asarray(upper, float)[None, :] - pts)
    gap = np.clip(gap, 0.0, None)
    out = np.min(gap ** (1.0 / profile.alpha[None, :]), axis=1)
    return float(out[0]) if single else out


def unit_ball_volume(n: int) -> float:
    return float(math.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0))


def sphere_area(n: int) -> float:
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, ...]
    radius: float
    profile: AnisotropyProfile

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != self.profile.n:
            raise InvalidArgumentError(f"center has {len(c)} coordinates, profile has {self.profile.n}")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidArgumentError(f"ellipsoid radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def scaled(self, factor: float) -> "Ellipsoid":
        """Concentric ellipsoid of radius factor * r (2E, 2^k E, ...)."""
        return Ellipsoid(self.center, self.radius * factor, self.profile)

    def semi_axes(self) -> np.ndarray:
        return self.radius ** self.profile.alpha


@traced("metric.ellipsoid_measure")
def ellipsoid_measure(e: Ellipsoid) -> float:
    return unit_ball_volume(e.profile.n) * e.radius ** e.profile.homogeneous_dimension


def quadratic_form(e: Ellipsoid, x) -> np.ndarray:
    pts, _ = _as_points(x, e.profile.n)
    d = pts - np.asarray(e.center)[None, :]
    return ((d / e.semi_axes()[None, :]) ** 2).sum(axis=1)


@traced("metric.ellipsoid_contains")
def ellipsoid_contains(e: Ellipsoid, x):
    """Open ellipsoid membership; points within 1e-12 of the boundary count as outside."""
    pts, single = _as_points(x, e.profile.n)
    inside = quadratic_form(e, pts) < 1.0 - CONTAINS_TOL
    return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class SphereQuadrature:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 2 or len(nodes) != len(weights):
            raise InvalidArgumentError("nodes must be (N, n) with one weight per node")
        if np.any(weights <= 0):
            raise InvalidArgumentError("quadrature weights must be positive")
        if np.max(np.abs(np.linalg.norm(nodes, axis=1) - 1.0)) > 1e-12:
            raise InvalidArgumentError("quadrature nodes must lie on the unit sphere")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


@traced("metric.sphere_quadrature")
@functools.lru_cache(maxsize=32)
def sphere_quadrature(n: int, resolution: int) -> SphereQuadrature:
    """
    n=2: trapezoid rule with `resolution` equally spaced angles.
    n=3: Gauss-Legendre in cos(polar) with resolution//2 nodes times a uniform azimuth
    rule with `resolution` nodes.
    """
    if n not in SPHERE_DIMENSIONS:
        raise UnsupportedDimensionError(f"sphere quadrature is implemented for n in {SPHERE_DIMENSIONS}, got {n}")
    if resolution < 8:
        raise InvalidArgumentError(f"resolution must be >= 8, got {resolution}")

    if n == 2:
        theta = 2.0 * np.pi * np.arange(resolution) / resolution
        nodes = np.column_stack([np.cos(theta), np.sin(theta)])
        weights = np.full(resolution, 2.0 * np.pi / resolution)
    else:
        z, wz = leggauss(resolution // 2)
        phi = 2.0 * np.pi * np.arange(resolution) / resolution
        Z, PHI = np.meshgrid(z, phi, indexing="ij")
        S = np.sqrt(1.0 - Z ** 2)
        nodes = np.column_stack([(S * np.cos(PHI)).ravel(), (S * np.sin(PHI)).ravel(), Z.ravel()])
        nodes /= np.linalg.norm(nodes, axis=1)[:, None]
        weights = np.outer(wz, np.full(resolution, 2.0 * np.pi / resolution)).ravel()

    logger.debug(f"sphere_quadrature: n={n} resolution={resolution} nodes={len(weights)}")
    return SphereQuadrature(nodes, weights)
