"""
Functions sampled on uniform tensor lattices over a box.

Integrals use the tensor-product trapezoid rule. The CSV format is

    # n=2 axes=65,65 lower=-4.0,-4.0 upper=4.0,4.0
    x1,x2,value        (one row per grid point, row-major, 17 significant digits)
"""
import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from core.config import get_settings
from core.logger import logger
from core.state import traced
from sio.errors import GridMismatchError, InvalidArgumentError, ParseError, SamplingError
from sio.metric import AnisotropyProfile, rho

HEADER_FIELDS = ("n", "axes", "lower", "upper")
CELL_SUBSAMPLES = 16
# relative tolerance on CSV coordinates against the header grid
COORD_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        points = tuple(int(v) for v in self.points)
        if not (len(lower) == len(upper) == len(points)) or not lower:
            raise InvalidArgumentError("lower, upper and points must have the same non-zero length")
        if any(p < 2 for p in points):
            raise InvalidArgumentError(f"every axis needs at least 2 points, got {points}")
        if any(not (math.isfinite(a) and math.isfinite(b) and b > a) for a, b in zip(lower, upper)):
            raise InvalidArgumentError(f"box must satisfy lower < upper per axis, got {lower} / {upper}")
        cap = get_settings().grid_cap
        if math.prod(points) > cap:
            raise InvalidArgumentError(f"grid of {math.prod(points)} points exceeds the cap of {cap}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return math.prod(self.points)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.points) - 1)

    @property
    def max_spacing(self) -> float:
        return float(self.spacing.max())

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lower, self.upper))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, p) for a, b, p in zip(self.lower, self.upper, self.points)]

    def points_array(self) -> np.ndarray:
        """(size, n) coordinates in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def index_of(self, x) -> tuple[int, ...]:
        """Nearest lattice index of a point inside the box."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x - np.array(self.lower)) / self.spacing).astype(int)
        return tuple(int(v) for v in np.clip(idx, 0, np.array(self.points) - 1))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.lower, self.upper, tuple((p - 1) * factor + 1 for p in self.points))

    def trapezoid_weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights, shape = grid shape."""
        w = np.ones(self.shape)
        for axis, (h, p) in enumerate(zip(self.spacing, self.points)):
            w1 = np.full(p, h)
            w1[0] = w1[-1] = 0.5 * h
            shape = [1] * self.n
            shape[axis] = p
            w = w * w1.reshape(shape)
        return w


class GridFunction:
    """Immutable array of finite samples on a Grid."""

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.size:
            raise InvalidArgumentError(f"{arr.size} values for a grid of {grid.size} points")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("grid function values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    def __repr__(self):
        return f"GridFunction(shape={self.grid.shape}, lower={self.grid.lower}, upper={self.grid.upper})"

    def _other(self, other) -> np.ndarray:
        if isinstance(other, GridFunction):
            check_same_grid(self, other)
            return other.values
        return float(other)

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def abs(self) -> "GridFunction":
        return GridFunction(self.grid, np.abs(self.values))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(self.grid, fn(self.values))

    def at(self, x) -> float:
        """Value at the lattice point nearest to x."""
        return float(self.values[self.grid.index_of(x)])


def check_same_grid(*fs: GridFunction):
    first = fs[0].grid
    for f in fs[1:]:
        if f.grid != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {f.grid}")


@traced("gridfn.sample")
def sample(fn: Callable[[np.ndarray], np.ndarray], grid: Grid) -> GridFunction:
    """Evaluate fn on every grid point; fn maps an (N, n) array of points to N values."""
    pts = grid.points_array()
    values = np.broadcast_to(np.asarray(fn(pts), dtype=float), (len(pts),))
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        raise SamplingError(f"non-finite sample at {pts[i].tolist()}", location=pts[i].tolist())
    return GridFunction(grid, values)


@traced("gridfn.integrate")
def integrate(f: GridFunction) -> float:
    out = f.values
    for x in reversed(f.grid.axes()):
        out = trapezoid(out, x, axis=-1)
    return float(out)


@traced("gridfn.lp_norm")
def lp_norm(f: GridFunction, p: float) -> float:
    if not p >= 1.0:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    # scaled by max |f| so that tiny and huge inputs neither underflow nor overflow
    top = float(np.max(np.abs(f.values)))
    if math.isinf(p) or top == 0.0 or not math.isfinite(top):
        return top
    return top * integrate(f.map(lambda v: (np.abs(v) / top) ** p)) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Cell geometry shared by operators and spaces
# ---------------------------------------------------------------------------

def window_halfwidth(spacing, radius: float, profile: AnisotropyProfile) -> tuple[int, ...]:
    """Lattice half-widths covering the ellipsoid E_radius(0) plus one cell."""
    h = np.asarray(spacing, dtype=float)
    return tuple(int(math.ceil(radius ** a / s)) + 1 for a, s in zip(profile.exponents, h))


def offset_lattice(spacing, halfwidth) -> np.ndarray:
    """Offsets j * h for |j_i| <= halfwidth_i, shape (2w_1+1, ..., 2w_n+1, n)."""
    axes = [np.arange(-w, w + 1) * s for w, s in zip(halfwidth, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _subsample_offsets(n: int, per_axis: int) -> np.ndarray:
    frac = (np.arange(per_axis) + 0.5) / per_axis - 0.5
    return np.array(list(itertools.product(frac, repeat=n)))


def cell_fractions(offsets: np.ndarray, spacing, radius: float, profile: AnisotropyProfile,
                   subsamples: int = CELL_SUBSAMPLES) -> np.ndarray:
    """
    Fraction of each cell (centered at an offset, side = spacing) lying in the open ellipsoid
    rho < radius. Cells entirely inside give 1 and entirely outside 0; only straddling cells
    are subsampled on a k^n midpoint lattice, k = max(2, round(subsamples^(1/n))).
    """
    h = np.asarray(spacing, dtype=float)
    n = offsets.shape[-1]
    flat = offsets.reshape(-1, n)
    lo, hi = flat - 0.5 * h, flat + 0.5 * h
    # rho is increasing in every |x_i|: extremes are at the clipped origin and the far corner
    nearest = np.clip(0.0, lo, hi)
    farthest = np.where(np.abs(lo) > np.abs(hi), lo, hi)
    r_min = np.atleast_1d(rho(nearest, profile))
    r_max = np.atleast_1d(rho(farthest, profile))
    out = np.where(r_max < radius, 1.0, 0.0)
    straddle = (r_min < radius) & (r_max >= radius)
    if straddle.any():
        per_axis = max(2, int(round(subsamples ** (1.0 / n))))
        sub = _subsample_offsets(n, per_axis) * h[None, :]
        pts = flat[straddle][:, None, :] + sub[None, :, :]
        inside = np.atleast_1d(rho(pts.reshape(-1, n), profile)) < radius
        out[straddle] = inside.reshape(len(pts), -1).mean(axis=1)
        logger.debug(f"cell_fractions: {int(straddle.sum())} straddling cell(s) at radius {radius:.4g}")
    return out.reshape(offsets.shape[:-1])


def ellipsoid_mask(grid: Grid, radius: float, profile: AnisotropyProfile) -> np.ndarray:
    """Window of cell fractions inside E_radius(0) on the lattice of grid."""
    w = window_halfwidth(grid.spacing, radius, profile)
    return cell_fractions(offset_lattice(grid.spacing, w), grid.spacing, radius, profile)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


@traced("gridfn.write_csv")
def write_csv(f: GridFunction, path: str):
    g = f.grid
    header = (f"# n={g.n} axes={','.join(str(p) for p in g.points)} "
              f"lower={','.join(_fmt(v) for v in g.lower)} upper={','.join(_fmt(v) for v in g.upper)}")
    pts = g.points_array()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for x, v in zip(pts, f.values.ravel()):
            writer.writerow([_fmt(c) for c in x] + [_fmt(v)])
    logger.debug(f"write_csv: {g.size} rows to {path}")


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ParseError("missing '# n=... axes=... lower=... upper=...' header", line=1)
    fields = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"malformed header token '{token}'", line=1)
        fields[key] = value
    for name in HEADER_FIELDS:
        if name not in fields:
            raise ParseError(f"header field '{name}' is missing", line=1)
    return fields


def _floats(text: str, name: str, n: int, line: int) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ParseError(f"header field '{name}' is not numeric: '{text}'", line=line) from None
    if len(out) != n:
        raise ParseError(f"header field '{name}' has {len(out)} entries, expected {n}", line=line)
    return out


@traced("gridfn.read_csv")
def read_csv(path: str) -> GridFunction:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    fields = _parse_header(lines[0].strip())
    try:
        n = int(fields["n"])
    except ValueError:
        raise ParseError(f"header field 'n' is not an integer: '{fields['n']}'", line=1) from None
    try:
        axes = tuple(int(v) for v in fields["axes"].split(","))
    except ValueError:
        raise ParseError(f"header field 'axes' is not a list of integers: '{fields['axes']}'", line=1) from None
    if len(axes) != n:
        raise ParseError(f"header field 'axes' has {len(axes)} entries, expected {n}", line=1)
    try:
        grid = Grid(_floats(fields["lower"], "lower", n, 1), _floats(fields["upper"], "upper", n, 1), axes)
    except InvalidArgumentError as e:
        raise ParseError(f"header does not describe a grid: {e}", line=1) from None
    pts = grid.points_array()
    tol = COORD_TOL * max(grid.max_spacing, float(np.max(np.abs(pts))))

    rows = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(rows) != grid.size:
        raise ParseError(f"expected {grid.size} data rows, found {len(rows)}", line=len(lines))
    values = np.empty(grid.size)
    for k, (lineno, cells) in enumerate(zip((r[0] for r in rows), csv.reader(r[1] for r in rows))):
        if len(cells) != n + 1:
            raise ParseError(f"expected {n + 1} columns, found {len(cells)}", line=lineno)
        try:
            x = np.array([float(c) for c in cells[:-1]])
        except ValueError:
            raise ParseError(f"coordinates {cells[:-1]} are not numeric", line=lineno) from None
        if not np.all(np.abs(x - pts[k]) <= tol):
            raise ParseError(f"coordinates {cells[:-1]} do not match grid point "
                             f"{', '.join(_fmt(c) for c in pts[k])}", line=lineno)
        try:
            v = float(cells[-1])
        except ValueError:
            raise ParseError(f"value '{cells[-1]}' is not numeric", line=lineno) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite value '{cells[-1]}'", line=lineno)
        values[k] = v
    return GridFunction(grid, values)
