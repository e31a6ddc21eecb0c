"""4th-order central finite differences on stacks of points."""
import itertools
import math
from typing import Callable

import numpy as np

# First-order step is fixed; higher orders use eps^(1/(k+4)) to balance truncation and roundoff
FIRST_ORDER_STEP = 1e-4

# Offsets -w..w; coefficients before division by h^k
STENCILS = {
    0: np.array([1.0]),
    1: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    2: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
    3: np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0,
    4: np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0,
}
MAX_ORDER = max(STENCILS)


def default_step(order: int) -> float:
    if order <= 1:
        return FIRST_ORDER_STEP
    return float(np.finfo(float).eps ** (1.0 / (order + 4)))


def multiindices(n: int, max_order: int, exact: bool = False) -> list[tuple[int, ...]]:
    """All beta in N^n with |beta| <= max_order (or == max_order when exact), lowest order first."""
    out = [
        b for b in itertools.product(range(max_order + 1), repeat=n)
        if (sum(b) == max_order if exact else sum(b) <= max_order)
    ]
    return sorted(out, key=lambda b: (sum(b), tuple(-v for v in b)))


def finite_difference(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, beta: tuple[int, ...],
                      step: float | None = None) -> np.ndarray:
    """Tensor-product D^beta fn at each row of points; fn maps (N, n) -> (N,) or (N, d)."""
    order = sum(beta)
    h = default_step(order) if step is None else step
    axes = []
    for b in beta:
        coef = STENCILS[b]
        half = len(coef) // 2
        offsets = np.arange(-half, half + 1) * h
        keep = coef != 0.0
        axes.append((offsets[keep], coef[keep] / h ** b))
    total = None
    for combo in itertools.product(*[range(len(o)) for o, _ in axes]):
        shift = np.array([axes[i][0][j] for i, j in enumerate(combo)])
        weight = math.prod(axes[i][1][j] for i, j in enumerate(combo))
        term = weight * np.asarray(fn(points + shift[None, :]), dtype=float)
        total = term if total is None else total + term
    return total
