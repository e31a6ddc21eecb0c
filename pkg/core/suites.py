"""Fixed, seeded operand suites: twelve functions f and four multipliers a."""
import numpy as np

from sio.gridfn import Grid, GridFunction, sample
from sio.metric import AnisotropyProfile, Ellipsoid, ellipsoid_contains, rho

GAUSSIAN_SCALES = (0.5, 1.0, 2.0)


def _offset(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    """A center a quarter of the half-width away from the box middle, in a seeded direction."""
    lower, upper = np.array(grid.lower), np.array(grid.upper)
    direction = rng.uniform(-1.0, 1.0, grid.n)
    return 0.5 * (lower + upper) + 0.25 * 0.5 * (upper - lower) * direction


def _gaussian(profile: AnisotropyProfile, scale: float, center: np.ndarray):
    widths = scale ** profile.alpha

    def fn(x):
        return np.exp(-(((x - center[None, :]) / widths[None, :]) ** 2).sum(axis=1))

    return fn


def _modulated(center: np.ndarray, degree: int):
    # harmonic homogeneous polynomial of degree 2 (x1^2 - x2^2) or 3 (Re (x1 + i x2)^3) times a bump
    def fn(x):
        d = x - center[None, :]
        if degree == 2:
            poly = d[:, 0] ** 2 - d[:, 1] ** 2
        else:
            poly = d[:, 0] ** 3 - 3.0 * d[:, 0] * d[:, 1] ** 2
        return poly * np.exp(-(d ** 2).sum(axis=1))

    return fn


def _indicator(e: Ellipsoid):
    def fn(x):
        return np.asarray(ellipsoid_contains(e, x), dtype=float)

    return fn


def f_suite(grid: Grid, profile: AnisotropyProfile, seed: int = 0) -> list[tuple[str, GridFunction]]:
    rng = np.random.default_rng(seed)
    middle = 0.5 * (np.array(grid.lower) + np.array(grid.upper))
    offsets = [_offset(grid, rng) for _ in range(4)]
    out = []
    for s in GAUSSIAN_SCALES:
        out.append((f"gauss(s={s:g})", sample(_gaussian(profile, s, middle), grid)))
        out.append((f"gauss(s={s:g},offset)", sample(_gaussian(profile, s, offsets[0]), grid)))
    out.append(("harmonic2-bump", sample(_modulated(middle, 2), grid)))
    out.append(("harmonic3-bump(offset)", sample(_modulated(offsets[1], 3), grid)))
    out.append(("indicator(E_1(0))", sample(_indicator(Ellipsoid(tuple(middle), 1.0, profile)), grid)))
    out.append(("indicator(E_0.5,offset)", sample(_indicator(Ellipsoid(tuple(offsets[2]), 0.5, profile)), grid)))
    bump_a, bump_b = _gaussian(profile, 0.5, offsets[2]), _gaussian(profile, 0.5, offsets[3])
    out.append(("bump+bump", sample(lambda x: bump_a(x) + bump_b(x), grid)))
    out.append(("bump-bump", sample(lambda x: bump_a(x) - bump_b(x), grid)))
    return out


def log_rho_floored(grid: Grid, profile: AnisotropyProfile, center=None):
    """log rho(x - center), with rho floored at h/4 so the lattice values stay finite."""
    c = 0.5 * (np.array(grid.lower) + np.array(grid.upper)) if center is None else np.asarray(center, dtype=float)
    floor = grid.max_spacing / 4.0

    def fn(x):
        return np.log(np.maximum(np.atleast_1d(rho(x - c[None, :], profile)), floor))

    return fn


def a_suite(grid: Grid, profile: AnisotropyProfile) -> list[tuple[str, GridFunction]]:
    return [
        ("const", sample(lambda x: np.full(len(x), 2.0), grid)),
        ("sin(x1)", sample(lambda x: np.sin(x[:, 0]), grid)),
        ("clamp(x1)", sample(lambda x: np.clip(x[:, 0], -1.0, 1.0), grid)),
        ("log(rho)", sample(log_rho_floored(grid, profile), grid)),
    ]
