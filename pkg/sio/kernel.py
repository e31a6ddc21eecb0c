"""
Variable kernels k(x; xi) with mixed homogeneity, their axiom checks and the built-ins.

A kernel evaluator takes x of shape (n,) or (N, n) and xi of shape (N, n) and returns
N values. The axioms checked here:
  * homogeneity   k(x; mu o xi) = mu^(-alpha) k(x; xi)
  * cancellation  the integral of k(x; .) over the unit sphere vanishes
  * smoothness    sup over the sphere of |D^beta_xi k(x; xi)| bounded uniformly in x
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from core.logger import logger
from core.state import traced
from sio.errors import AnisoError, EvaluationError, InvalidArgumentError, UnknownKernelError
from sio.metric import AnisotropyProfile, SphereQuadrature, rho, sphere_area, sphere_quadrature
from sio.numdiff import MAX_ORDER, finite_difference, multiindices

HOMOGENEITY_TOL = 1e-10
CANCELLATION_TOL = 1e-10
DERIVATIVE_STABILITY_TOL = 0.10
DEFAULT_MAX_ORDER = 4

SQRT_PI = math.sqrt(math.pi)

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VariableKernel:
    name: str
    profile: AnisotropyProfile
    evaluate: Evaluator
    smoothness_order: int = DEFAULT_MAX_ORDER
    # False when k(x; xi) does not depend on x (a constant kernel)
    x_dependent: bool = True
    # Optional analytic D^beta_xi k: derivative(beta, x, xi) -> values
    derivative: Optional[Callable[[tuple, np.ndarray, np.ndarray], np.ndarray]] = None

    @property
    def n(self) -> int:
        return self.profile.n

    def __call__(self, x, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        x = np.asarray(x, dtype=float)
        try:
            values = np.asarray(self.evaluate(x, xi), dtype=float)
        except AnisoError:
            raise
        except (ArithmeticError, ValueError) as e:
            raise EvaluationError(f"kernel {self.name} failed: {e}", sample=(x, xi)) from e
        values = np.broadcast_to(values, (len(xi),))
        bad = ~np.isfinite(values)
        if bad.any():
            i = int(np.argmax(bad))
            xs = x if x.ndim == 1 else x[i]
            raise EvaluationError(f"kernel {self.name} is not finite at xi={xi[i].tolist()}", sample=(xs, xi[i]))
        return values


@dataclass
class KernelValidationReport:
    kernel: str
    homogeneity_max_residual: float
    cancellation_residual: float
    mean_absolute_integral: float
    derivative_sup_estimates: dict[str, float] = field(default_factory=dict)
    derivative_stability: float = 0.0
    max_order_checked: int = 0
    passed: bool = False


def _random_sphere(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1)[:, None]


def _x_samples(n: int, count: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points over [-pi, pi]^n; doubling `count` extends the same sequence."""
    m = max(1, math.ceil(math.log2(max(count, 2))))
    pts = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:count]
    return qmc.scale(pts, [-math.pi] * n, [math.pi] * n)


@traced("kernel.check_homogeneity")
def check_homogeneity(k: VariableKernel, sample_count: int = 1000, tol: float = HOMOGENEITY_TOL,
                      seed: int = 0) -> float:
    """max |k(x; mu o xi) - mu^(-alpha) k(x; xi)| / (1 + |k(x; xi)|) over random samples."""
    if sample_count < 100:
        raise InvalidArgumentError(f"sample_count must be >= 100, got {sample_count}")
    rng = np.random.default_rng(seed)
    n, alpha = k.n, k.profile.homogeneous_dimension
    x = rng.uniform(-math.pi, math.pi, (sample_count, n))
    xi = _random_sphere(rng, sample_count, n)
    mu = np.exp(rng.uniform(math.log(0.1), math.log(10.0), sample_count))
    scaled = xi * mu[:, None] ** k.profile.alpha[None, :]
    base = k(x, xi)
    moved = k(x, scaled)
    residual = float(np.max(np.abs(moved - mu ** (-alpha) * base) / (1.0 + np.abs(base))))
    if residual > tol:
        logger.debug(f"check_homogeneity: {k.name} residual {residual:.3e} exceeds {tol:.1e}")
    return residual


@traced("kernel.check_cancellation")
def check_cancellation(k: VariableKernel, x, q: SphereQuadrature) -> tuple[float, float]:
    """(|integral of k(x; .) over the sphere|, integral of |k(x; .)|) by quadrature."""
    if q.n != k.n:
        raise InvalidArgumentError(f"quadrature dimension {q.n} does not match kernel dimension {k.n}")
    values = k(np.asarray(x, dtype=float), q.nodes)
    return abs(q.integrate(values)), q.integrate(np.abs(values))


def _derivative_sups(k: VariableKernel, max_order: int, xs: np.ndarray, nodes: np.ndarray) -> dict:
    sups = {}
    for beta in multiindices(k.n, max_order):
        best = 0.0
        for x in xs:
            if k.derivative is not None:
                vals = np.asarray(k.derivative(beta, x, nodes), dtype=float)
            else:
                vals = finite_difference(lambda p, x=x: k(x, p), nodes, beta)
            best = max(best, float(np.max(np.abs(vals))))
            if not k.x_dependent:
                break
        sups[beta] = best
    return sups


@traced("kernel.check_derivative_bounds")
def check_derivative_bounds(k: VariableKernel, max_order: int = DEFAULT_MAX_ORDER, sample_count: int = 128,
                            seed: int = 0, resolution: int | None = None) -> dict[tuple[int, ...], float]:
    """Empirical sup over sampled x and sphere nodes of |D^beta_xi k(x; xi)| for every |beta| <= max_order."""
    if max_order > k.smoothness_order:
        raise InvalidArgumentError(f"max_order {max_order} exceeds smoothness_order {k.smoothness_order}")
    if max_order > MAX_ORDER:
        raise InvalidArgumentError(f"derivatives above order {MAX_ORDER} are not tabulated")
    q = sphere_quadrature(k.n, resolution or (64 if k.n == 2 else 16))
    xs = _x_samples(k.n, sample_count, seed)
    sups = _derivative_sups(k, max_order, xs, q.nodes)
    bad = [b for b, v in sups.items() if not math.isfinite(v)]
    if bad:
        logger.warning(f"check_derivative_bounds: {k.name} non-finite derivative for beta in {bad}")
    return sups


def validate(k: VariableKernel, max_order: int = DEFAULT_MAX_ORDER, sample_count: int = 128,
             seed: int = 0) -> KernelValidationReport:
    """Run the three axiom checks and fold them into one report."""
    q = sphere_quadrature(k.n, 64 if k.n == 2 else 32)
    homogeneity = check_homogeneity(k, 1000, seed=seed)
    xs = _x_samples(k.n, 8, seed) if k.x_dependent else np.zeros((1, k.n))
    cancel = [check_cancellation(k, x, q) for x in xs]
    mean_residual = max(c[0] for c in cancel)
    abs_integral = max(c[1] for c in cancel)

    order = min(max_order, k.smoothness_order)
    sups = check_derivative_bounds(k, order, sample_count, seed)
    doubled = check_derivative_bounds(k, order, 2 * sample_count, seed)
    stability = max(abs(doubled[b] - v) / max(abs(doubled[b]), 1e-300) for b, v in sups.items())

    passed = (
        homogeneity <= HOMOGENEITY_TOL
        and mean_residual <= CANCELLATION_TOL
        and math.isfinite(abs_integral)
        and all(math.isfinite(v) for v in doubled.values())
        and stability <= DERIVATIVE_STABILITY_TOL
    )
    report = KernelValidationReport(
        kernel=k.name,
        homogeneity_max_residual=homogeneity,
        cancellation_residual=mean_residual,
        mean_absolute_integral=abs_integral,
        derivative_sup_estimates={str(b): v for b, v in doubled.items()},
        derivative_stability=stability,
        max_order_checked=order,
        passed=passed,
    )
    logger.info(
        f"validate: {k.name} homogeneity={homogeneity:.2e} cancellation={mean_residual:.2e} "
        f"|k|-integral={abs_integral:.4f} derivative-orders<= {order} passed={passed}"
    )
    return report


# ---------------------------------------------------------------------------
# Built-in kernels
# ---------------------------------------------------------------------------

def _cz2(x, xi):
    r2 = (xi ** 2).sum(axis=1)
    return (xi[:, 0] ** 2 - xi[:, 1] ** 2) / (SQRT_PI * r2 ** 2)


def _var_cz2(x, xi):
    x = np.atleast_2d(x)
    return (2.0 + np.sin(x[:, 0])) * _cz2(x, xi)


_MIX12_PROFILE = AnisotropyProfile((1.0, 2.0))


def _mix12(x, xi):
    r = rho(xi, _MIX12_PROFILE)
    return xi[:, 0] * xi[:, 1] / r ** (_MIX12_PROFILE.homogeneous_dimension + 3.0)


def _riesz3(x, xi):
    r = np.linalg.norm(xi, axis=1)
    return xi[:, 0] * xi[:, 1] / r ** 5


def _builtins() -> dict[str, VariableKernel]:
    plane = AnisotropyProfile.isotropic_profile(2)
    return {
        "CZ2": VariableKernel("CZ2", plane, _cz2, x_dependent=False),
        "MIX12": VariableKernel("MIX12", _MIX12_PROFILE, _mix12, x_dependent=False),
        "VAR-CZ2": VariableKernel("VAR-CZ2", plane, _var_cz2, x_dependent=True),
        "RIESZ3": VariableKernel("RIESZ3", AnisotropyProfile.isotropic_profile(3), _riesz3, x_dependent=False),
    }


BUILTIN_KERNELS = tuple(_builtins())


@traced("kernel.builtin")
def builtin(name: str) -> VariableKernel:
    kernels = _builtins()
    if name not in kernels:
        raise UnknownKernelError(f"unknown kernel '{name}', expected one of {list(kernels)}")
    return kernels[name]


def from_callable(name: str, profile: AnisotropyProfile, fn: Evaluator, x_dependent: bool = True,
                  smoothness_order: int = DEFAULT_MAX_ORDER, derivative=None) -> VariableKernel:
    """Wrap a user evaluator fn(x, xi) -> values as a kernel."""
    return VariableKernel(name, profile, fn, smoothness_order, x_dependent, derivative)


def constant_over_rho(profile: AnisotropyProfile, c: float = 1.0) -> VariableKernel:
    """c / rho(xi)^alpha: homogeneous but without cancellation (mean c * |sphere|)."""
    alpha = profile.homogeneous_dimension
    return from_callable(f"const/rho^{alpha:g}", profile,
                         lambda x, xi: c / rho(xi, profile) ** alpha, x_dependent=False)


def non_homogeneous_example(profile: AnisotropyProfile) -> VariableKernel:
    """1 / (1 + |xi|^2): violates homogeneity."""
    return from_callable("1/(1+|xi|^2)", profile, lambda x, xi: 1.0 / (1.0 + (xi ** 2).sum(axis=1)),
                         x_dependent=False)


def expected_constant_mean(profile: AnisotropyProfile, c: float) -> float:
    return abs(c) * sphere_area(profile.n)
