"""
Maximal and sharp maximal operators, generalized Morrey norms, weight conditions and
mean-oscillation (BMO/VMO) moduli for grid functions.

Suprema over ellipsoids are discretized by a center sublattice (every 4th grid point) and a
geometric radius ladder. An ellipsoid average is taken over E intersected with the box:
    f_E = sum(f w chi) / sum(w chi)
with w the trapezoid weights and chi the cell-inclusion fractions, so constants average exactly.
Morrey integrals are the unnormalized sums over E intersected with the box.
"""
import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from core.logger import logger
from core.parallel import chunked, parallel_map
from core.state import traced
from sio.errors import InvalidArgumentError
from sio.gridfn import Grid, GridFunction, cell_fractions, ellipsoid_mask
from sio.metric import AnisotropyProfile, Ellipsoid, rho

DEFAULT_RADIUS_RATIO = math.sqrt(2.0)
CENTER_STRIDE = 4
VMO_THRESHOLD = 0.2
# decades integrated numerically before the analytic tail takes over
INTEGRAL_DECADES = 16
PLATEAU_TOL = 1e-3
# sublevel thresholds for sharp_field and how many are convolved per FFT batch
SHARP_LEVELS = 256
SHARP_BATCH = 8


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    name: str
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # "const" | "power" | "power_log" enable the analytic tail in check_weight
    kind: str = "custom"
    lam: float = 0.0

    def __call__(self, x, r) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(x, dtype=float), np.asarray(r, dtype=float)), dtype=float)


def const_weight() -> Weight:
    return Weight("const", lambda x, r: np.ones_like(r), kind="const")


def power_weight(lam: float) -> Weight:
    return Weight(f"power({lam:g})", lambda x, r: r ** lam, kind="power", lam=float(lam))


def power_log_weight(lam: float) -> Weight:
    return Weight(f"power_log({lam:g})", lambda x, r: r ** lam * np.log(r + 2.0), kind="power_log", lam=float(lam))


_WEIGHT_PATTERN = re.compile(r"^\s*(const|power|power_log)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")


def parse_weight(spec: str) -> Weight:
    """'const', 'power(l)' or 'power_log(l)'."""
    match = _WEIGHT_PATTERN.match(spec or "")
    if not match:
        raise InvalidArgumentError(f"unknown weight '{spec}', expected const | power(l) | power_log(l)")
    kind, arg = match.groups()
    if kind == "const":
        if arg is not None:
            raise InvalidArgumentError("weight 'const' takes no parameter")
        return const_weight()
    if arg is None:
        raise InvalidArgumentError(f"weight '{kind}' needs a parameter, e.g. {kind}(1)")
    try:
        lam = float(arg)
    except ValueError:
        raise InvalidArgumentError(f"weight parameter '{arg}' is not a number") from None
    return power_weight(lam) if kind == "power" else power_log_weight(lam)


# ---------------------------------------------------------------------------
# Ladders, centers and windows
# ---------------------------------------------------------------------------

def _profile(grid: Grid, profile: Optional[AnisotropyProfile]) -> AnisotropyProfile:
    profile = profile or AnisotropyProfile.isotropic_profile(grid.n)
    if profile.n != grid.n:
        raise InvalidArgumentError(f"profile dimension {profile.n} does not match grid dimension {grid.n}")
    return profile


def radius_ladder(grid: Grid, profile: AnisotropyProfile, ratio: float = DEFAULT_RADIUS_RATIO,
                  r_min: float | None = None, r_max: float | None = None) -> np.ndarray:
    """Geometric radii from two cells (every semi-axis >= 2h) up to the rho-diameter of the box."""
    if ratio <= 1.0:
        raise InvalidArgumentError(f"ladder ratio must exceed 1, got {ratio}")
    lo = r_min or float(np.max((2.0 * grid.spacing) ** (1.0 / profile.alpha)))
    hi = r_max or rho(np.array(grid.upper) - np.array(grid.lower), profile)
    count = max(1, int(math.ceil(math.log(hi / lo) / math.log(ratio) - 1e-9)) + 1)
    return lo * ratio ** np.arange(count)


def center_sublattice(grid: Grid, stride: int = CENTER_STRIDE) -> np.ndarray:
    """Grid points on every `stride`-th index per axis (ends included)."""
    axes = []
    for x in grid.axes():
        idx = list(range(0, len(x), stride))
        if idx[-1] != len(x) - 1:
            idx.append(len(x) - 1)
        axes.append(x[idx])
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


@functools.lru_cache(maxsize=256)
def _window(grid: Grid, radius: float, profile: AnisotropyProfile) -> np.ndarray:
    mask = ellipsoid_mask(grid, radius, profile)
    mask.setflags(write=False)
    return mask


def _overlap(center: tuple[int, ...], window_shape, grid_shape):
    """Matching slices of the grid and of a centered window."""
    g, m = [], []
    for c, size, p in zip(center, window_shape, grid_shape):
        w = size // 2
        lo, hi = max(c - w, 0), min(c + w + 1, p)
        g.append(slice(lo, hi))
        m.append(slice(lo - (c - w), hi - (c - w)))
    return tuple(g), tuple(m)


def _center_indices(grid: Grid, centers) -> list[tuple[int, ...]]:
    pts = center_sublattice(grid) if centers is None else np.atleast_2d(np.asarray(centers, dtype=float))
    return [grid.index_of(c) for c in pts]


def _ladder(grid, profile, radii):
    return radius_ladder(grid, profile) if radii is None else np.asarray(radii, dtype=float)


class _LocalAverager:
    """Masked sums of grid arrays over E_r(x) intersected with the box, x on the lattice."""

    def __init__(self, grid: Grid, profile: AnisotropyProfile):
        self.grid = grid
        self.profile = profile
        self.w = grid.trapezoid_weights()

    def parts(self, idx, radius):
        window = _window(self.grid, float(radius), self.profile)
        gs, ms = _overlap(idx, window.shape, self.grid.shape)
        return gs, window[ms] * self.w[gs]

    def average(self, values, idx, radius) -> float:
        gs, cw = self.parts(idx, radius)
        return float(np.sum(values[gs] * cw) / np.sum(cw))

    def oscillation(self, values, idx, radius, p: float = 1.0) -> float:
        gs, cw = self.parts(idx, radius)
        local = values[gs]
        mean = np.sum(local * cw) / np.sum(cw)
        return float((np.sum(np.abs(local - mean) ** p * cw) / np.sum(cw)) ** (1.0 / p))

    def integral(self, values, idx, radius) -> float:
        gs, cw = self.parts(idx, radius)
        return float(np.sum(values[gs] * cw))


# ---------------------------------------------------------------------------
# Maximal operators
# ---------------------------------------------------------------------------

@traced("spaces.maximal")
def maximal(f: GridFunction, x, radii=None, profile: AnisotropyProfile | None = None) -> float:
    """max over the ladder of the |f|-average over E_r(x); x is snapped to the nearest lattice point."""
    profile = _profile(f.grid, profile)
    avg = _LocalAverager(f.grid, profile)
    idx = f.grid.index_of(x)
    values = np.abs(f.values)
    return max(avg.average(values, idx, r) for r in _ladder(f.grid, profile, radii))


@traced("spaces.sharp")
def sharp(f: GridFunction, x, radii=None, profile: AnisotropyProfile | None = None) -> float:
    """max over the ladder of the mean oscillation of f over E_r(x)."""
    profile = _profile(f.grid, profile)
    avg = _LocalAverager(f.grid, profile)
    idx = f.grid.index_of(x)
    return max(avg.oscillation(f.values, idx, r) for r in _ladder(f.grid, profile, radii))


@traced("spaces.m_s")
def m_s(f: GridFunction, x, s: float, radii=None, profile: AnisotropyProfile | None = None) -> float:
    """(M |f|^s (x))^(1/s)."""
    if not s >= 1.0:
        raise InvalidArgumentError(f"s must be >= 1, got {s}")
    if s == 1.0:
        return maximal(f, x, radii, profile)
    return maximal(f.abs().map(lambda v: v ** s), x, radii, profile) ** (1.0 / s)


def maximal_field(f: GridFunction, radii=None, profile: AnisotropyProfile | None = None) -> GridFunction:
    """Mf at every grid point, by convolving with the ellipsoid windows of the ladder."""
    profile = _profile(f.grid, profile)
    w = f.grid.trapezoid_weights()
    weighted = np.abs(f.values) * w
    out = np.zeros(f.grid.shape)
    for r in _ladder(f.grid, profile, radii):
        window = _window(f.grid, float(r), profile)
        num = np.clip(fftconvolve(weighted, window, mode="same"), 0.0, None)
        den = fftconvolve(w, window, mode="same")
        out = np.maximum(out, num / den)
    return GridFunction(f.grid, out)


def m_s_field(f: GridFunction, s: float, radii=None, profile: AnisotropyProfile | None = None) -> GridFunction:
    if not s >= 1.0:
        raise InvalidArgumentError(f"s must be >= 1, got {s}")
    if s == 1.0:
        return maximal_field(f, radii, profile)
    powered = maximal_field(f.abs().map(lambda v: v ** s), radii, profile)
    return powered.map(lambda v: v ** (1.0 / s))


def sharp_levels(f: GridFunction, levels: int = SHARP_LEVELS) -> np.ndarray:
    """Every distinct value of f when there are at most levels + 1 of them, else levels + 1 quantiles."""
    if levels < 1:
        raise InvalidArgumentError(f"levels must be >= 1, got {levels}")
    distinct = np.unique(f.values)
    if len(distinct) <= levels + 1:
        return distinct
    return np.unique(np.quantile(f.values, np.linspace(0.0, 1.0, levels + 1)))


def sharp_field_error_bound(f: GridFunction, levels: int = SHARP_LEVELS) -> float:
    """Largest pointwise gap between sharp_field(f, levels=levels) and sharp(f, x), roundoff aside."""
    if len(np.unique(f.values)) <= levels + 1:
        return 0.0
    return 2.0 * float(np.max(np.diff(sharp_levels(f, levels))))


def sharp_field(f: GridFunction, radii=None, profile: AnisotropyProfile | None = None,
                levels: int = SHARP_LEVELS) -> GridFunction:
    """
    f^# at every grid point. Over E = E_r(x) the mean oscillation equals 2 (f_E - S / |E|) with
    S = sum over E of min(f, f_E), and S is assembled from convolutions of the sublevel sets
    {f <= t_j}. Exact when f takes at most levels + 1 values; otherwise each point is within
    sharp_field_error_bound(f, levels) of `sharp`.
    """
    profile = _profile(f.grid, profile)
    grid = f.grid
    w = grid.trapezoid_weights()
    v = f.values
    t = sharp_levels(f, levels)
    out = np.zeros(grid.shape)
    if len(t) == 1:
        return GridFunction(grid, out)
    axes = tuple(range(1, grid.n + 1))
    column = (-1,) + (1,) * grid.n
    for r in _ladder(grid, profile, radii):
        window = _window(grid, float(r), profile)
        mass = fftconvolve(w, window, mode="same")
        mean = fftconvolve(v * w, window, mode="same") / mass
        # bin j holds t_j < mean <= t_(j+1)
        j = np.clip(np.searchsorted(t, mean, side="left") - 1, 0, len(t) - 2)
        lo_mass, lo_sum, hi_mass, hi_sum = (np.zeros(grid.shape) for _ in range(4))
        for start in range(0, len(t), SHARP_BATCH):
            block = t[start:start + SHARP_BATCH]
            below = (v[None, ...] <= block.reshape(column)) * w[None, ...]
            counts = fftconvolve(below, window[None, ...], mode="same", axes=axes)
            sums = fftconvolve(below * v[None, ...], window[None, ...], mode="same", axes=axes)
            for k in range(len(block)):
                at_lo, at_hi = j == start + k, j + 1 == start + k
                lo_mass[at_lo], lo_sum[at_lo] = counts[k][at_lo], sums[k][at_lo]
                hi_mass[at_hi], hi_sum[at_hi] = counts[k][at_hi], sums[k][at_hi]
        inside = np.minimum(hi_sum - lo_sum, mean * (hi_mass - lo_mass))
        s = lo_sum + inside + mean * (mass - hi_mass)
        out = np.maximum(out, np.clip(2.0 * (mean - s / mass), 0.0, None))
    logger.debug(f"sharp_field: {len(t)} levels, {grid.size} points")
    return GridFunction(grid, out)


# ---------------------------------------------------------------------------
# Morrey norms
# ---------------------------------------------------------------------------

@dataclass
class MorreyNorm:
    value: float
    center: tuple[float, ...]
    radius: float


@traced("spaces.morrey_norm")
def morrey_norm(f: GridFunction, p: float, w: Weight, centers=None, radii=None,
                profile: AnisotropyProfile | None = None) -> MorreyNorm:
    """sup over sampled E = E_r(c) of (w(c, r)^-1 * integral over E of |f|^p)^(1/p), with the argmax."""
    if not (1.0 < p < math.inf):
        raise InvalidArgumentError(f"p must lie in (1, inf), got {p}")
    profile = _profile(f.grid, profile)
    avg = _LocalAverager(f.grid, profile)
    powered = np.abs(f.values) ** p
    pts = f.grid.points_array().reshape(*f.grid.shape, f.grid.n)
    idxs = _center_indices(f.grid, centers)
    ladder = _ladder(f.grid, profile, radii)

    def run(chunk):
        best = (-1.0, None, None)
        for idx in chunk:
            c = pts[idx]
            for r in ladder:
                v = avg.integral(powered, idx, r) / float(w(c, r))
                if v > best[0]:
                    best = (v, tuple(float(t) for t in c), float(r))
        return best

    value, center, radius = max(parallel_map(run, chunked(idxs)), key=lambda b: b[0])
    return MorreyNorm(max(value, 0.0) ** (1.0 / p), center, radius)


# ---------------------------------------------------------------------------
# Weight conditions
# ---------------------------------------------------------------------------

@dataclass
class WeightCheck:
    weight: str
    doubling_bounds: tuple[float, float]
    integral_constant: float
    passed: bool
    divergent: bool = False
    sigma: float = 1.0
    diagnostic: str = ""


def _analytic_tail(w: Weight, t0: float, beta: float) -> float | None:
    """Integral of w(t) / t^(beta+1) over (t0, inf) for the tabulated weights; None when not tabulated."""
    if w.kind == "const":
        lam = 0.0
    elif w.kind in ("power", "power_log"):
        lam = w.lam
    else:
        return None
    gamma = beta - lam
    if gamma <= 0.0:
        return math.inf
    tail = t0 ** (-gamma) / gamma
    if w.kind == "power_log":
        # ln(t + 2) ~ ln t on the far tail
        tail = t0 ** (-gamma) * (math.log(t0) / gamma + 1.0 / gamma ** 2)
    return tail


def _tail_integral(w: Weight, x: np.ndarray, r: float, beta: float) -> tuple[float, bool]:
    """(integral of w(x, t) / t^(beta+1) over (r, inf), divergent) by quad per decade in log t."""
    total = 0.0
    last = 0.0
    for j in range(INTEGRAL_DECADES):
        a, b = math.log(r) + j * math.log(10.0), math.log(r) + (j + 1) * math.log(10.0)
        last, _ = quad(lambda u: float(w(x, math.exp(u))) * math.exp(-beta * u), a, b, limit=200)
        total += last
    tail = _analytic_tail(w, r * 10.0 ** INTEGRAL_DECADES, beta)
    if tail is None:
        return total, last > PLATEAU_TOL * total
    return total + tail, math.isinf(tail)


@traced("spaces.check_weight")
def check_weight(w: Weight, profile: AnisotropyProfile, centers, radii, sigma: float = 1.0) -> WeightCheck:
    """
    Doubling bounds C1 <= w(x, t)/w(x, r) <= C2 for r <= t <= 2r, and the smallest C with
    integral_r^inf w(x, t)/t^(sigma alpha + 1) dt <= C w(x, r)/r^(sigma alpha) over the samples.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.min() <= 0 or radii.max() / radii.min() < 1e3:
        raise InvalidArgumentError("radii must be positive and span at least 3 decades")
    if not (0.0 < sigma <= 1.0):
        raise InvalidArgumentError(f"sigma must lie in (0, 1], got {sigma}")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    beta = sigma * profile.homogeneous_dimension

    lo, hi, constant = math.inf, 0.0, 0.0
    divergent = False
    for x in centers:
        for r in radii:
            base = float(w(x, r))
            if not (math.isfinite(base) and base > 0):
                return WeightCheck(w.name, (math.nan, math.nan), math.nan, False, sigma=sigma,
                                   diagnostic=f"weight is not positive at x={x.tolist()}, r={r:g}")
            ratios = np.asarray(w(x, np.linspace(r, 2.0 * r, 9)), dtype=float) / base
            lo, hi = min(lo, float(ratios.min())), max(hi, float(ratios.max()))
            integral, div = _tail_integral(w, x, float(r), beta)
            if div:
                divergent = True
                break
            constant = max(constant, integral * r ** beta / base)
        if divergent:
            break

    if divergent:
        logger.warning(f"check_weight: {w.name} integral condition diverges (sigma={sigma:g})")
        return WeightCheck(w.name, (lo, hi), math.inf, False, True, sigma,
                           diagnostic="partial integrals do not plateau")
    passed = all(math.isfinite(v) and v > 0 for v in (lo, hi, constant))
    return WeightCheck(w.name, (lo, hi), constant, passed, False, sigma)


# ---------------------------------------------------------------------------
# Mean oscillation
# ---------------------------------------------------------------------------

@dataclass
class BmoModulus:
    # increasing radii R_k and gamma(R_k) = sup over r <= R_k of the mean oscillation
    radii: list[float]
    values: list[float]
    bmo_norm: float
    vmo_flag: bool
    trend_slope: float
    raw: list[float] = field(default_factory=list)


@traced("spaces.bmo_modulus")
def bmo_modulus(a: GridFunction, radii=None, centers=None, profile: AnisotropyProfile | None = None,
                vmo_threshold: float = VMO_THRESHOLD) -> BmoModulus:
    profile = _profile(a.grid, profile)
    avg = _LocalAverager(a.grid, profile)
    ladder = np.sort(_ladder(a.grid, profile, radii))
    idxs = _center_indices(a.grid, centers)

    def run(r):
        return max(avg.oscillation(a.values, idx, r) for idx in idxs)

    raw = parallel_map(run, list(ladder))
    values = np.maximum.accumulate(np.asarray(raw)) if raw else np.zeros(0)
    norm = float(values[-1]) if len(values) else 0.0

    if norm == 0.0:
        vmo, slope = True, 0.0
    else:
        small = values[:2]
        vmo = bool(len(small) == 2 and np.all(small < vmo_threshold * norm) and small[0] < small[1])
        head = [(r, v) for r, v in zip(ladder[:3], values[:3]) if v > 0]
        if len(head) >= 2:
            slope = float(np.polyfit(np.log([h[0] for h in head]), np.log([h[1] for h in head]), 1)[0])
        else:
            slope = math.nan
    logger.debug(f"bmo_modulus: {len(ladder)} radii, {len(idxs)} centers, norm={norm:.4g}, vmo={vmo}")
    return BmoModulus([float(r) for r in ladder], [float(v) for v in values], norm, vmo, slope,
                      [float(v) for v in raw])


def _ellipsoid_weights(grid: Grid, e: Ellipsoid) -> tuple[tuple[slice, ...], np.ndarray]:
    """Trapezoid weight times inclusion fraction of every cell near e (e need not be lattice-centered)."""
    if e.profile.n != grid.n:
        raise InvalidArgumentError(f"ellipsoid dimension {e.profile.n} does not match grid dimension {grid.n}")
    c = np.asarray(e.center)
    reach = e.semi_axes() + grid.spacing
    lo = np.clip(np.floor((c - reach - np.array(grid.lower)) / grid.spacing).astype(int), 0, None)
    hi = np.minimum(np.ceil((c + reach - np.array(grid.lower)) / grid.spacing).astype(int) + 1,
                    np.array(grid.points))
    sl = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
    pts = grid.points_array().reshape(*grid.shape, grid.n)[sl]
    frac = cell_fractions(pts - c, grid.spacing, e.radius, e.profile)
    return sl, frac * grid.trapezoid_weights()[sl]


def ellipsoid_average(f: GridFunction, e: Ellipsoid) -> float:
    sl, cw = _ellipsoid_weights(f.grid, e)
    total = float(np.sum(cw))
    if total <= 0.0:
        raise InvalidArgumentError(f"ellipsoid {e} does not meet the grid")
    return float(np.sum(f.values[sl] * cw) / total)


@traced("spaces.john_nirenberg_ratio")
def john_nirenberg_ratio(a: GridFunction, p: float, e: Ellipsoid, bmo_norm: float | None = None) -> float:
    """(mean over E of |a - a_E|^p)^(1/p) / ||a||_*; 0 for constant a."""
    if not (1.0 <= p < math.inf):
        raise InvalidArgumentError(f"p must lie in [1, inf), got {p}")
    norm = bmo_modulus(a, profile=e.profile).bmo_norm if bmo_norm is None else bmo_norm
    if norm == 0.0:
        return 0.0
    sl, cw = _ellipsoid_weights(a.grid, e)
    local = a.values[sl]
    mean = np.sum(local * cw) / np.sum(cw)
    return float((np.sum(np.abs(local - mean) ** p * cw) / np.sum(cw)) ** (1.0 / p)) / norm


@traced("spaces.nested_average_drift")
def nested_average_drift(a: GridFunction, e: Ellipsoid, k: int) -> float:
    """|a_(2^k E) - a_E|."""
    if k < 0:
        raise InvalidArgumentError(f"k must be >= 0, got {k}")
    big = e.scaled(2.0 ** k)
    c, semi = np.asarray(big.center), big.semi_axes()
    if np.any(c - semi < np.array(a.grid.lower)) or np.any(c + semi > np.array(a.grid.upper)):
        raise InvalidArgumentError(f"2^{k} E does not fit in the grid box")
    return abs(ellipsoid_average(a, big) - ellipsoid_average(a, e))
