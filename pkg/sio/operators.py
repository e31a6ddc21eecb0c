"""
Truncated singular integrals K_eps f(x) = integral over rho(x - y) > eps of k(x; x - y) f(y) dy on a grid,
their commutators with multiplication operators, the constant-kernel pieces K_sm,eps, the series
reconstruction K_eps f = sum b_sm(x) K_sm,eps f, and the Hormander-condition checks for H_sm.

Quadrature: trapezoid weights of f's grid times, for each cell, the fraction of the cell with
rho(x - y) >= eps. Outside the box f is extended by zero. Output is only formed at grid points whose
rho-distance to the box boundary is at least eps + 2h; the rest of the output is 0 and flagged in the mask.
"""
import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.signal import fftconvolve

from core.logger import logger
from core.parallel import chunked, parallel_map
from core.state import traced
from sio.errors import InvalidArgumentError, InvalidIndexError, UnderResolvedError
from sio.gridfn import Grid, GridFunction, cell_fractions, check_same_grid, lp_norm, offset_lattice
from sio.harmonics import HarmonicBasis, expand_kernel, hsm_kernel
from sio.kernel import VariableKernel
from sio.metric import AnisotropyProfile, Ellipsoid, dilate, polar_jacobian, rho, rho_boundary_distance, \
    sphere_quadrature

MIN_EPS_SPACINGS = 2.0
NEGLIGIBLE_COEFFICIENT = 1e-13
MIN_HORMANDER_SAMPLES = 1000


@dataclass(frozen=True)
class TruncationPolicy:
    epsilon: float
    # (lower, upper) of the evaluation box; None means f's own box
    outer_box: Optional[tuple[tuple[float, ...], tuple[float, ...]]] = None

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class QuadratureDiagnostics:
    epsilon: float
    straddling_cells: int
    evaluated_points: int
    skipped_points: int
    # max |f| on the box faces: size of the jump introduced by the zero extension
    truncation_error_estimate: float
    terms: int = 1


@dataclass
class OperatorResult:
    output: GridFunction
    diagnostics: QuadratureDiagnostics
    # True where the output was evaluated
    mask: np.ndarray


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _exterior_window(grid: Grid, eps: float, profile: AnisotropyProfile) -> tuple[np.ndarray, int]:
    """Fraction of each offset cell with rho >= eps over every difference x - y of the grid."""
    offsets = offset_lattice(grid.spacing, tuple(p - 1 for p in grid.points))
    inside = cell_fractions(offsets, grid.spacing, eps, profile)
    ext = 1.0 - inside
    ext.setflags(write=False)
    straddling = int(np.count_nonzero((inside > 0.0) & (inside < 1.0)))
    return ext, straddling


def _offsets(grid: Grid) -> np.ndarray:
    return offset_lattice(grid.spacing, tuple(p - 1 for p in grid.points))


def _box(grid: Grid, pol: TruncationPolicy) -> tuple[np.ndarray, np.ndarray]:
    lower, upper = np.array(grid.lower), np.array(grid.upper)
    if pol.outer_box is not None:
        lower = np.maximum(lower, np.asarray(pol.outer_box[0], dtype=float))
        upper = np.minimum(upper, np.asarray(pol.outer_box[1], dtype=float))
        if np.any(upper <= lower):
            raise InvalidArgumentError(f"outer box {pol.outer_box} does not meet the grid box")
    return lower, upper


def evaluation_mask(grid: Grid, pol: TruncationPolicy, profile: AnisotropyProfile) -> np.ndarray:
    lower, upper = _box(grid, pol)
    d = rho_boundary_distance(grid.points_array(), lower, upper, profile)
    return (np.atleast_1d(d) >= pol.epsilon + 2.0 * grid.max_spacing).reshape(grid.shape)


def _check(k: VariableKernel, grid: Grid, pol: TruncationPolicy):
    if k.n != grid.n:
        raise InvalidArgumentError(f"kernel {k.name} lives in R^{k.n}, grid in R^{grid.n}")
    if pol.epsilon < MIN_EPS_SPACINGS * grid.max_spacing:
        raise UnderResolvedError(
            f"epsilon {pol.epsilon:.4g} is below {MIN_EPS_SPACINGS:g} grid spacings ({grid.max_spacing:.4g})"
        )
    lower, upper = _box(grid, pol)
    inradius = float(np.min((0.5 * (upper - lower)) ** (1.0 / k.profile.alpha)))
    if pol.epsilon >= inradius:
        raise InvalidArgumentError(f"epsilon {pol.epsilon:.4g} must be below the box inradius {inradius:.4g}")


def _boundary_max(values: np.ndarray) -> float:
    best = 0.0
    for axis in range(values.ndim):
        for end in (0, -1):
            best = max(best, float(np.max(np.abs(np.take(values, end, axis=axis)))))
    return best


def _finish(grid: Grid, out: np.ndarray, mask: np.ndarray, f: GridFunction, eps: float, straddling: int,
            terms: int = 1) -> OperatorResult:
    out = np.where(mask, out, 0.0)
    evaluated = int(mask.sum())
    diag = QuadratureDiagnostics(
        epsilon=eps,
        straddling_cells=straddling,
        evaluated_points=evaluated,
        skipped_points=grid.size - evaluated,
        truncation_error_estimate=_boundary_max(f.values),
        terms=terms,
    )
    return OperatorResult(GridFunction(grid, out), diag, mask)


# ---------------------------------------------------------------------------
# Evaluation engines
# ---------------------------------------------------------------------------

def _kernel_window(k: VariableKernel, grid: Grid, ext: np.ndarray) -> np.ndarray:
    """k(xi) * exterior fraction over the full difference lattice (x-independent kernels)."""
    offsets = _offsets(grid).reshape(-1, grid.n)
    flat_ext = ext.ravel()
    live = flat_ext > 0.0
    window = np.zeros(len(flat_ext))
    window[live] = k(np.zeros(grid.n), offsets[live]) * flat_ext[live]
    return window.reshape(ext.shape)


def _convolve(window: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    """Zero-padded convolution with the odd, centered difference-lattice window; O(N log N) by FFT."""
    return fftconvolve(weighted, window, mode="same")


def _pointwise(k: VariableKernel, grid: Grid, weighted: np.ndarray, ext: np.ndarray, mask: np.ndarray,
               a: Optional[np.ndarray] = None) -> np.ndarray:
    """Direct sum at each masked x; with `a`, integrand carries the factor a(y) - a(x)."""
    pts = grid.points_array()
    shape = grid.shape
    flat_w = weighted.ravel()
    flat_a = None if a is None else a.ravel()
    flip = (slice(None, None, -1),) * grid.n
    targets = [tuple(int(v) for v in i) for i in np.argwhere(mask)]

    def run(chunk):
        out = []
        for i in chunk:
            frac = ext[tuple(slice(j, j + p) for j, p in zip(i, shape))][flip].ravel()
            sel = frac > 0.0
            flat_i = int(np.ravel_multi_index(i, shape))
            x = pts[flat_i]
            contrib = k(x, x[None, :] - pts[sel]) * frac[sel] * flat_w[sel]
            if flat_a is not None:
                contrib = contrib * (flat_a[sel] - flat_a[flat_i])
            out.append((i, float(np.sum(contrib))))
        return out

    result = np.zeros(shape)
    for part in parallel_map(run, chunked(targets)):
        for i, v in part:
            result[i] = v
    return result


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

@traced("operators.truncated_transform")
def truncated_transform(k: VariableKernel, f: GridFunction, pol: TruncationPolicy) -> OperatorResult:
    grid = f.grid
    _check(k, grid, pol)
    ext, straddling = _exterior_window(grid, float(pol.epsilon), k.profile)
    mask = evaluation_mask(grid, pol, k.profile)
    weighted = f.values * grid.trapezoid_weights()
    if k.x_dependent:
        out = _pointwise(k, grid, weighted, ext, mask)
    else:
        out = _convolve(_kernel_window(k, grid, ext), weighted)
    logger.debug(f"truncated_transform: {k.name} eps={pol.epsilon:.4g} points={int(mask.sum())} "
                 f"straddling={straddling}")
    return _finish(grid, out, mask, f, pol.epsilon, straddling)


@traced("operators.commutator")
def commutator(a: GridFunction, k: VariableKernel, f: GridFunction, pol: TruncationPolicy) -> OperatorResult:
    """C_eps f(x) = integral over rho(x - y) > eps of k(x; x - y) [a(y) - a(x)] f(y) dy."""
    check_same_grid(a, f)
    grid = f.grid
    _check(k, grid, pol)
    ext, straddling = _exterior_window(grid, float(pol.epsilon), k.profile)
    mask = evaluation_mask(grid, pol, k.profile)
    out = _pointwise(k, grid, f.values * grid.trapezoid_weights(), ext, mask, a=a.values)
    return _finish(grid, out, mask, f, pol.epsilon, straddling)


def commutator_operator_form(a: GridFunction, k: VariableKernel, f: GridFunction,
                             pol: TruncationPolicy) -> OperatorResult:
    """K_eps(af) - a K_eps f, the algebraically identical form of the commutator."""
    check_same_grid(a, f)
    kaf = truncated_transform(k, a * f, pol)
    kf = truncated_transform(k, f, pol)
    out = kaf.output.values - a.values * kf.output.values
    return _finish(f.grid, out, kaf.mask, f, pol.epsilon, kaf.diagnostics.straddling_cells)


@traced("operators.constant_transform")
def constant_transform(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile, f: GridFunction,
                       pol: TruncationPolicy) -> OperatorResult:
    if m == 0:
        raise InvalidIndexError("constant_transform needs m >= 1 (Y_0 has no cancellation)")
    return truncated_transform(hsm_kernel(basis, s, m, profile), f, pol)


def _series_resolution(n: int, max_degree: int) -> int:
    return max(256, 4 * (max_degree + 1)) if n == 2 else max(48, 2 * max_degree + 4)


@traced("operators.series_transform")
def series_transform(k: VariableKernel, f: GridFunction, pol: TruncationPolicy, max_degree: int,
                     resolution: int | None = None) -> OperatorResult:
    """Sum over (s, m), m <= max_degree, of b_sm(x) K_sm,eps f(x), with b_sm from the expansion of k(x; .)."""
    if max_degree < 2:
        raise InvalidArgumentError(f"max_degree must be >= 2, got {max_degree}")
    grid = f.grid
    _check(k, grid, pol)
    basis = HarmonicBasis(k.n, max_degree)
    q = sphere_quadrature(k.n, resolution or _series_resolution(k.n, max_degree))
    mask = evaluation_mask(grid, pol, k.profile)
    flat_mask = mask.ravel()
    if k.x_dependent:
        coeffs = expand_kernel(k, basis, q, grid.points_array()[flat_mask])
    else:
        coeffs = expand_kernel(k, basis, q)
    values = coeffs.values
    scale = float(np.max(np.abs(values))) or 1.0

    out = np.zeros(grid.size)
    terms = 0
    straddling = 0
    for col, (s, m) in enumerate(basis.index):
        b = values[:, col]
        if np.max(np.abs(b)) <= NEGLIGIBLE_COEFFICIENT * scale:
            continue
        if m == 0:
            logger.warning(f"series_transform: {k.name} has mean {float(np.max(np.abs(b))):.3e} on the sphere; "
                           "the m=0 term is dropped")
            continue
        part = constant_transform(basis, s, m, k.profile, f, pol)
        straddling = part.diagnostics.straddling_cells
        out[flat_mask] += b * part.output.values.ravel()[flat_mask]
        terms += 1
    logger.debug(f"series_transform: {k.name} M={max_degree} terms={terms}")
    return _finish(grid, out.reshape(grid.shape), mask, f, pol.epsilon, straddling, terms)


@dataclass
class EpsilonRefinement:
    epsilons: list[float]
    results: list[OperatorResult]
    # ||K_eps_i f - K_eps_(i+1) f||_p on the common evaluation set
    deltas: list[float] = field(default_factory=list)


def epsilon_refinement(k: VariableKernel, f: GridFunction, epsilons, p: float = 2.0) -> EpsilonRefinement:
    """K_eps f along a decreasing eps ladder and the Cauchy deltas between neighbours."""
    eps = sorted((float(e) for e in epsilons), reverse=True)
    results = [truncated_transform(k, f, TruncationPolicy(e)) for e in eps]
    common = results[0].mask
    for r in results[1:]:
        common = common & r.mask
    deltas = []
    for coarse, fine in zip(results, results[1:]):
        diff = np.where(common, coarse.output.values - fine.output.values, 0.0)
        deltas.append(lp_norm(GridFunction(f.grid, diff), p))
    return EpsilonRefinement(eps, results, deltas)


# ---------------------------------------------------------------------------
# Hormander conditions for H_sm
# ---------------------------------------------------------------------------

def _sphere_points(uniform: np.ndarray) -> np.ndarray:
    """Uniform points on the unit sphere (n = 2, 3) from columns of uniform [0, 1) draws."""
    phi = 2.0 * np.pi * uniform[:, 0]
    if uniform.shape[1] == 1:
        return np.column_stack([np.cos(phi), np.sin(phi)])
    z = 2.0 * uniform[:, 1] - 1.0
    s = np.sqrt(np.clip(1.0 - z ** 2, 0.0, None))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


@traced("operators.hormander_pointwise")
def hormander_pointwise(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile, e: Ellipsoid,
                        samples: int, seed: int = 0) -> float:
    """
    sup of |H(x - y) - H(x0 - y)| rho(x0 - y)^(alpha + 1) / (m^(n/2) rho(x0 - x)) over random
    x in e and y with rho(y - x0) in (2r, 64r].

    All draws come from one (samples, k) block, so a larger sample count extends the same
    sample set and the sup can only grow.
    """
    if samples < MIN_HORMANDER_SAMPLES:
        raise InvalidArgumentError(f"samples must be >= {MIN_HORMANDER_SAMPLES}, got {samples}")
    if e.profile != profile:
        raise InvalidArgumentError("ellipsoid and kernel profiles differ")
    H = hsm_kernel(basis, s, m, profile)
    n, alpha = profile.n, profile.homogeneous_dimension
    d = n - 1
    draws = np.random.default_rng(seed).random((samples, 2 + 2 * d))
    x0 = np.asarray(e.center)
    # random() is in [0, 1): 1 - U is in (0, 1], so t > 0 and x != x0
    t = 1.0 - draws[:, 0]
    # 1 - U keeps u in (2, 64]: y stays off the boundary of 2e
    u = np.exp(math.log(64.0) - (1.0 - draws[:, 1]) * math.log(32.0))
    u = np.where(u <= 2.0, 2.0 * (1.0 + 1e-9), u)
    dx = _sphere_points(draws[:, 2:2 + d]) * (t * e.radius)[:, None] ** profile.alpha[None, :]
    dy = _sphere_points(draws[:, 2 + d:]) * (u * e.radius)[:, None] ** profile.alpha[None, :]
    diff = np.abs(H(x0, dx - dy) - H(x0, -dy))
    ratio = diff * rho(dy, profile) ** (alpha + 1.0) / (max(m, 1) ** (n / 2.0) * rho(dx, profile))
    return float(np.max(ratio))


@dataclass
class HormanderIntegral:
    partial: float
    tail_estimate: float
    value: float
    r_min: float
    r_max: float


@traced("operators.hormander_integral")
def hormander_integral(basis: HarmonicBasis, s: int, m: int, profile: AnisotropyProfile, x, r_max: float,
                       panels_per_octave: int = 4, radial_nodes: int = 8,
                       resolution: int | None = None) -> HormanderIntegral:
    """
    Integral of |H(y - x) - H(y)| over 4 rho(x) <= rho(y) <= r_max in polar coordinates y = r o theta,
    dy = r^(alpha-1) sum(alpha_i theta_i^2) dr dsigma. The tail beyond r_max decays like 1/R, so
    I(R) - I(R/2) estimates it.
    """
    x = np.asarray(x, dtype=float)
    rx = rho(x, profile)
    if not rx > 0.0:
        raise InvalidArgumentError("hormander_integral needs rho(x) > 0")
    r_min = 4.0 * rx
    if r_max < 2.0 * r_min:
        raise InvalidArgumentError(f"r_max must be >= 8 rho(x) = {2.0 * r_min:.4g}, got {r_max}")
    H = hsm_kernel(basis, s, m, profile)
    q = sphere_quadrature(profile.n, resolution or (256 if profile.n == 2 else 48))
    ang = polar_jacobian(q.nodes, 1.0, profile)
    z, wz = leggauss(radial_nodes)

    # panel edges run down from r_max in fixed log steps so that r_max / 2 is an edge
    step = 2.0 ** (-1.0 / panels_per_octave)
    edges = [r_max]
    while edges[-1] * step > r_min:
        edges.append(edges[-1] * step)
    edges.append(r_min)
    edges = edges[::-1]

    half = r_max / 2.0
    total = inner = 0.0
    for lo, hi in zip(edges, edges[1:]):
        u_lo, u_hi = math.log(lo), math.log(hi)
        us = 0.5 * (u_hi - u_lo) * z + 0.5 * (u_hi + u_lo)
        panel = 0.0
        for u, w in zip(us, 0.5 * (u_hi - u_lo) * wz):
            r = math.exp(u)
            y = dilate(r, q.nodes, profile)
            vals = np.abs(H(x, y - x[None, :]) - H(x, y))
            # dr = r du
            panel += w * r ** profile.homogeneous_dimension * q.integrate(vals * ang)
        total += panel
        if hi <= half * (1.0 + 1e-12):
            inner += panel
    tail = total - inner
    return HormanderIntegral(partial=total, tail_estimate=tail, value=total + tail, r_min=r_min, r_max=r_max)
