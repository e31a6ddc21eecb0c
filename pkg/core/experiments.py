"""
The named experiments. Each one runs a set of checks against the library and appends one
CheckRecord per check to the context; failures are recorded, never raised.
"""
import math
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from core.config import ExperimentConfig
from core.logger import logger
from core.report import CheckRecord
from core.state import OperationLedger, RunState
from core.suites import a_suite, f_suite, log_rho_floored
from sio import harmonics, kernel as kernels, metric, numdiff, operators, spaces
from sio.errors import AnisoError, UnderResolvedError
from sio.gridfn import Grid, cell_fractions, integrate, lp_norm, offset_lattice, read_csv, \
    sample, write_csv
from sio.metric import AnisotropyProfile, Ellipsoid

TINY = 1e-300

# Result label per check family: the family is the check id up to its first "[" or "(".
CHECK_ANCHORS: dict[str, str] = {
    "rho-homogeneity": "metric:dilation-homogeneity",
    "unit-sphere": "metric:unit-sphere",
    "triangle-inequality": "metric:quasi-triangle",
    "ellipsoid": "metric:ellipsoid-measure",
    "polar-jacobian": "metric:polar-coordinates",
    "validate": "kernel:standing-assumptions",
    "abs-integral": "kernel:standing-assumptions",
    "negative": "kernel:standing-assumptions",
    "basis-dimension": "harmonics:space-dimension",
    "gram-identity": "harmonics:orthonormal-basis",
    "closed-forms": "harmonics:orthonormal-basis",
    "derivative-growth": "harmonics:derivative-growth",
    "coefficient-decay": "harmonics:coefficient-decay",
    "decay-degenerate": "harmonics:coefficient-decay",
    "hsm-gradient": "hormander:gradient-formula",
    "hsm-gradient-bound": "hormander:gradient-bound",
    "pointwise-doubling": "hormander:pointwise",
    "pointwise-radius": "hormander:pointwise",
    "pointwise-m-scaling": "hormander:pointwise",
    "integral-dilation": "hormander:integral",
    "integral-tail": "hormander:integral",
    "integral-uniformity": "hormander:integral",
    "eps-uniformity": "operator:morrey-bound",
    "linearity": "operator:truncated-transform",
    "cancellation-constant": "operator:truncated-transform",
    "polar-oracle": "operator:truncated-transform",
    "grid-quadrature-io": "operator:truncated-transform",
    "ratio": "commutator:morrey-bound",
    "linearity-in-a": "commutator:morrey-bound",
    "localization": "commutator:vmo-localization",
    "vmo-bmo-contrast": "commutator:vmo-localization",
    "series": "operator:harmonic-series",
    "constant-transform": "operator:harmonic-series",
    "eps-refinement": "operator:harmonic-series",
    "power": "weight:doubling-and-integral",
    "power_log": "weight:doubling-and-integral",
    "sigma-variant": "weight:sigma-integral",
    "configured": "weight:doubling-and-integral",
    "maximal-inequality": "maximal:morrey-bound",
    "sharp-inequality": "sharp:morrey-bound",
    "pointwise-bounds": "maximal:pointwise",
    "point-evaluations": "maximal:pointwise",
    "maximal-indicator": "maximal:pointwise",
    "bmo-modulus": "bmo:vmo-modulus",
    "nested-average-drift": "bmo:nested-averages",
    "john-nirenberg": "bmo:john-nirenberg",
    "operation-coverage": "harness:coverage",
}
_FAMILY = re.compile(r"[^\[(]+")


def anchor_for(experiment: str, check_id: str) -> str:
    match = _FAMILY.match(check_id)
    family = match.group(0) if match else check_id
    return CHECK_ANCHORS.get(family, f"{experiment}:{family}")


@dataclass
class Outcome:
    passed: bool
    constants: dict[str, float] = field(default_factory=dict)
    ratios: list[float] = field(default_factory=list)
    detail: str = ""


@dataclass
class ExperimentContext:
    config: ExperimentConfig
    records: list[CheckRecord] = field(default_factory=list)

    def __post_init__(self):
        self.profile = AnisotropyProfile(tuple(self.config.exponents))
        g = self.config.grid
        self.grid = Grid(g.lower, g.upper, g.points)
        self.kernel = kernels.builtin(self.config.kernel)
        self.weight = spaces.parse_weight(self.config.weight)

    @property
    def seed(self) -> int:
        return self.config.seed

    def eps_ladder(self, grid: Grid, profile: AnisotropyProfile) -> list[float]:
        """The configured eps multiples of h that leave evaluation points in the box."""
        h = grid.max_spacing
        half = 0.5 * (np.array(grid.upper) - np.array(grid.lower))
        inradius = float(np.min(half ** (1.0 / profile.alpha)))
        ladder = [m * h for m in self.config.eps_multipliers if m * h + 2.0 * h <= inradius]
        if len(ladder) < len(self.config.eps_multipliers):
            logger.warning(f"eps ladder trimmed to {ladder}: larger values leave no evaluation points")
        if len(ladder) < 2:
            raise UnderResolvedError(f"fewer than two usable eps values for a box of inradius {inradius:.4g}")
        return ladder

    def radii(self, grid: Grid, profile: AnisotropyProfile) -> np.ndarray:
        return spaces.radius_ladder(grid, profile, self.config.radius_ratio)

    def morrey(self, f, p: float, w: spaces.Weight, profile: AnisotropyProfile) -> spaces.MorreyNorm:
        return spaces.morrey_norm(f, p, w, radii=self.radii(f.grid, profile), profile=profile)

    def bmo(self, a, profile: AnisotropyProfile) -> spaces.BmoModulus:
        return spaces.bmo_modulus(a, radii=self.radii(a.grid, profile), profile=profile)

    def check(self, experiment: str, check_id: str, claim: str, fn: Callable[[], Outcome],
              anchor: str | None = None) -> CheckRecord:
        """
        Run one check and record it. `anchor` labels the result the check exercises and defaults
        to the label registered for the check family; `claim` leads the record's detail.
        Any exception inside `fn` fails the check instead of ending the run.
        """
        anchor = anchor or anchor_for(experiment, check_id)
        RunState.start_check(experiment, check_id)
        start = time.perf_counter()
        errored = False
        try:
            outcome = fn()
        except AnisoError as e:
            outcome = Outcome(False, detail=f"{type(e).__name__}: {e}")
        except Exception as e:
            logger.exception(f"[{experiment}] {check_id} raised unexpectedly")
            errored = True
            outcome = Outcome(False, detail=f"{type(e).__name__}: {e}")
        record = CheckRecord(
            check_id=check_id,
            experiment=experiment,
            anchor=anchor,
            constants={k: float(v) for k, v in outcome.constants.items()},
            ratios=[float(v) for v in outcome.ratios],
            passed=bool(outcome.passed),
            runtime_s=round(time.perf_counter() - start, 3),
            detail=f"{claim}: {outcome.detail}" if outcome.detail else claim,
        )
        self.records.append(record)
        RunState.finish_check(experiment, check_id, record.passed, record.runtime_s, errored)
        status = "PASS" if record.passed else "FAIL"
        log = logger.info if record.passed else logger.error
        log(f"[{experiment}] {status} {check_id} ({record.runtime_s:.2f}s) {record.detail}")
        return record


EXPERIMENT_REGISTRY: dict[str, tuple[str, Callable[[ExperimentContext], None]]] = {}


def experiment(name: str, description: str):
    def wrap(fn):
        EXPERIMENT_REGISTRY[name] = (description, fn)
        return fn
    return wrap


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), TINY))


def _spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.max() / max(v.min(), TINY))


def _tag(profile: AnisotropyProfile) -> str:
    return "a=" + ",".join(f"{a:g}" for a in profile.exponents)


def _companion_profile(n: int) -> AnisotropyProfile:
    return AnisotropyProfile((1.0, 2.0)) if n == 2 else AnisotropyProfile((1.0, 1.5, 2.0))


def _random_points(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    return rng.standard_normal((count, n)) * np.exp(rng.uniform(-2.0, 2.0, (count, 1)))


# ---------------------------------------------------------------------------
# metric-axioms
# ---------------------------------------------------------------------------

@experiment("metric-axioms", "rho homogeneity, unit sphere, triangle inequality, ellipsoid geometry")
def metric_axioms(ctx: ExperimentContext):
    name = "metric-axioms"
    profiles = [ctx.profile]
    if ctx.profile != _companion_profile(ctx.profile.n):
        profiles.append(_companion_profile(ctx.profile.n))
    for profile in profiles:
        n, tag = profile.n, _tag(profile)
        rng = np.random.default_rng(ctx.seed)

        def homogeneity():
            worst = 0.0
            for mu in np.exp(rng.uniform(math.log(0.1), math.log(10.0), 100)):
                x = _random_points(rng, 100, n)
                lhs = metric.rho(metric.dilate(float(mu), x, profile), profile)
                rhs = mu * metric.rho(x, profile)
                worst = max(worst, float(np.max(np.abs(lhs - rhs) / rhs)))
            return Outcome(worst <= 1e-10, {"max_relative_residual": worst}, detail="10^4 samples")

        ctx.check(name, f"rho-homogeneity[{tag}]", "rho(mu o x) = mu rho(x)", homogeneity)

        def unit_sphere():
            theta = rng.standard_normal((10_000, n))
            theta /= np.linalg.norm(theta, axis=1)[:, None]
            worst = float(np.max(np.abs(metric.rho(theta, profile) - 1.0)))
            return Outcome(worst <= 1e-10, {"max_abs_residual": worst})

        ctx.check(name, f"unit-sphere[{tag}]", "rho = 1 exactly on the Euclidean unit sphere", unit_sphere)

        def triangle():
            x, y = _random_points(rng, 1000, n), _random_points(rng, 1000, n)
            lhs = metric.rho(x + y, profile)
            rhs = metric.rho(x, profile) + metric.rho(y, profile)
            violations = int(np.count_nonzero(lhs > rhs * (1.0 + 1e-12)))
            best = float(np.max(lhs / rhs))
            return Outcome(violations == 0, {"violations": violations, "empirical_constant": best},
                           detail="10^3 triples, constant 1")

        ctx.check(name, f"triangle-inequality[{tag}]", "rho(x + y) <= rho(x) + rho(y)", triangle)

        def ellipsoid():
            e = Ellipsoid(tuple(rng.uniform(-1.0, 1.0, n)), 0.7, profile)
            h = e.semi_axes() / 40.0
            offsets = offset_lattice(h, (44,) * n)
            area = float(cell_fractions(offsets, h, e.radius, profile).sum() * np.prod(h))
            exact = metric.ellipsoid_measure(e)
            pts = np.asarray(e.center) + rng.uniform(-1.2, 1.2, (5000, n)) * e.semi_axes()
            r = metric.rho(pts - np.asarray(e.center), profile)
            clear = np.abs(r / e.radius - 1.0) > 1e-9
            mismatch = int(np.count_nonzero((metric.ellipsoid_contains(e, pts) != (r < e.radius))[clear]))
            rel = abs(area - exact) / exact
            return Outcome(rel <= 1e-2 and mismatch == 0,
                           {"measure": exact, "cell_quadrature": area, "relative_error": rel,
                            "membership_mismatches": mismatch})

        ctx.check(name, f"ellipsoid[{tag}]", "|E_r| = V_n r^alpha and membership agrees with rho", ellipsoid)

        def polar():
            q = metric.sphere_quadrature(n, 64 if n == 2 else 32)
            jac = metric.polar_jacobian(q.nodes, 1.0, profile)
            area = metric.sphere_area(n)
            got, want = q.integrate(jac), profile.homogeneous_dimension * area / n
            rel = abs(got - want) / want
            one = abs(q.integrate(np.ones(len(q.weights))) - area) / area
            return Outcome(rel <= 1e-12 and one <= 1e-12, {"jacobian_integral": got, "expected": want,
                                                            "area_error": one})

        ctx.check(name, f"polar-jacobian[{tag}]", "sphere integral of the polar Jacobian is alpha |S| / n", polar)


# ---------------------------------------------------------------------------
# kernel-axioms
# ---------------------------------------------------------------------------

@experiment("kernel-axioms", "homogeneity, cancellation and derivative bounds of the built-in kernels")
def kernel_axioms(ctx: ExperimentContext):
    name = "kernel-axioms"
    for kname in kernels.BUILTIN_KERNELS:
        k = kernels.builtin(kname)

        def run(k=k):
            rep = kernels.validate(k, seed=ctx.seed)
            return Outcome(rep.passed, {
                "homogeneity_residual": rep.homogeneity_max_residual,
                "cancellation_residual": rep.cancellation_residual,
                "abs_integral": rep.mean_absolute_integral,
                "derivative_stability": rep.derivative_stability,
                "max_order": rep.max_order_checked,
                "max_derivative_sup": max(rep.derivative_sup_estimates.values()),
            }, detail=f"orders <= {rep.max_order_checked}")

        ctx.check(name, f"validate[{kname}]", "homogeneous of degree -alpha, mean zero, smooth on the sphere", run)

    def cz2_abs():
        k = kernels.builtin("CZ2")
        _, total = kernels.check_cancellation(k, np.zeros(2), metric.sphere_quadrature(2, 64))
        want = 4.0 / math.sqrt(math.pi)
        rel = abs(total - want) / want
        return Outcome(rel <= 1e-2, {"abs_integral": total, "expected": want, "relative_error": rel})

    ctx.check(name, "abs-integral[CZ2]", "integral of |CZ2| over the circle is 4/sqrt(pi)", cz2_abs)

    def constant_kernel():
        profile = ctx.profile if ctx.profile.n in metric.SPHERE_DIMENSIONS else AnisotropyProfile((1.0, 1.0))
        c = 1.5
        k = kernels.constant_over_rho(profile, c)
        q = metric.sphere_quadrature(profile.n, 64 if profile.n == 2 else 32)
        mean, _ = kernels.check_cancellation(k, np.zeros(profile.n), q)
        want = kernels.expected_constant_mean(profile, c)
        homog = kernels.check_homogeneity(k, 200, seed=ctx.seed)
        ok = mean > kernels.CANCELLATION_TOL and abs(mean - want) <= 1e-10 * want and homog <= 1e-10
        return Outcome(ok, {"mean": mean, "expected_mean": want, "homogeneity_residual": homog},
                       detail="expected to fail cancellation only")

    ctx.check(name, "negative[c/rho^alpha]", "a homogeneous kernel without cancellation is rejected",
              constant_kernel)

    def non_homogeneous():
        k = kernels.non_homogeneous_example(AnisotropyProfile((1.0, 1.0)))
        residual = kernels.check_homogeneity(k, 1000, seed=ctx.seed)
        return Outcome(residual > kernels.HOMOGENEITY_TOL, {"homogeneity_residual": residual},
                       detail="expected to fail homogeneity")

    ctx.check(name, "negative[1/(1+|xi|^2)]", "a non-homogeneous kernel is rejected", non_homogeneous)


# ---------------------------------------------------------------------------
# harmonic-decay
# ---------------------------------------------------------------------------

@experiment("harmonic-decay", "basis dimensions, orthonormality, derivative growth, coefficient decay, H_sm gradients")
def harmonic_decay(ctx: ExperimentContext):
    name = "harmonic-decay"
    M = ctx.config.max_degree
    M3 = min(M, 12)

    def dimensions():
        bad = []
        for n in metric.SPHERE_DIMENSIONS:
            for m in range(25):
                expected = 1 if m == 0 else (2 if n == 2 else 2 * m + 1)
                counted = sum(1 for _, mm in harmonics.HarmonicBasis(n, m).index if mm == m)
                if harmonics.basis_dim(n, m) != expected or counted != expected:
                    bad.append((n, m))
        return Outcome(not bad, {"mismatches": len(bad),
                                 "growth_constant_n3": harmonics.dimension_growth_constant(3, 24)})

    ctx.check(name, "basis-dimension", "g_m from the binomial formula, m <= 24", dimensions)

    def gram():
        errs = {}
        for n, deg, res in ((2, M, 4 * (M + 1)), (3, M3, 2 * M3 + 4)):
            basis = harmonics.HarmonicBasis(n, deg)
            G = harmonics.gram_matrix(basis, metric.sphere_quadrature(n, res))
            errs[f"n{n}"] = float(np.max(np.abs(G - np.eye(basis.size))))
        return Outcome(max(errs.values()) <= 1e-8, errs)

    ctx.check(name, "gram-identity", "the real harmonics are orthonormal on the sphere", gram)

    def closed_forms():
        b2, b3 = harmonics.HarmonicBasis(2, 2), harmonics.HarmonicBasis(3, 2)
        got = [
            harmonics.eval_harmonic(b2, 1, 0, np.array([1.0, 0.0])),
            harmonics.eval_harmonic(b2, 1, 2, np.array([0.0, 1.0])),
            harmonics.eval_harmonic(b3, 1, 1, np.array([0.0, 0.0, 1.0])),
            harmonics.eval_harmonic(b3, 2, 1, np.array([1.0, 0.0, 0.0])),
        ]
        want = [1.0 / math.sqrt(2.0 * math.pi), -1.0 / math.sqrt(math.pi),
                math.sqrt(3.0 / (4.0 * math.pi)), -math.sqrt(3.0 / (4.0 * math.pi))]
        err = _rel(got, want)
        return Outcome(err <= 1e-12, {"max_relative_error": err})

    ctx.check(name, "closed-forms", "spot values of low-degree harmonics", closed_forms)

    for n, deg, res in ((2, M, 256), (3, min(M, 10), 32)):
        basis = harmonics.HarmonicBasis(n, deg)
        q = metric.sphere_quadrature(n, res)

        def growth(basis=basis, q=q, n=n):
            exps = {}
            for order in (0, 1, 2):
                exps[f"order{order}"], _ = harmonics.derivative_growth(basis, order, q)
            limits = {f"order{o}": o + (n - 2) / 2.0 + 0.25 for o in (0, 1, 2)}
            ok = all(exps[k] <= limits[k] for k in exps)
            return Outcome(ok, {**exps, **{f"limit_{k}": v for k, v in limits.items()}})

        ctx.check(name, f"derivative-growth[n={n}]", "sup |D^beta Y_sm| <= C m^(|beta| + (n-2)/2)", growth)

    def decay():
        slopes = {}
        for n, fn in ((2, lambda p: np.exp(p[:, 0])), (3, lambda p: np.exp(p[:, 2]))):
            deg = max(16, M if n == 2 else 16)
            basis = harmonics.HarmonicBasis(n, deg)
            q = metric.sphere_quadrature(n, 4 * (deg + 1) if n == 2 else 2 * deg + 4)
            fit = harmonics.decay_fit(harmonics.expand(fn, basis, q))
            slopes[f"n{n}"] = fit.slope
        return Outcome(all(s <= -2.0 for s in slopes.values()), slopes, detail="analytic test function exp(x_1)")

    ctx.check(name, "coefficient-decay", "coefficients of a smooth function decay faster than m^-2", decay)

    def degenerate():
        basis = harmonics.HarmonicBasis(2, 16)
        q = metric.sphere_quadrature(2, 128)
        flat = harmonics.decay_fit(harmonics.expand(lambda p: np.ones(len(p)), basis, q))
        single = harmonics.decay_fit(harmonics.expand(lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, basis, q))
        return Outcome(flat.degenerate and single.degenerate,
                       {"constant_points": len(flat.degrees), "single_harmonic_points": len(single.degrees)})

    ctx.check(name, "decay-degenerate", "tables with fewer than two non-negligible degrees are flagged", degenerate)

    rng = np.random.default_rng(ctx.seed)
    for profile in (AnisotropyProfile((1.0, 1.0)), _companion_profile(2)):
        basis = harmonics.HarmonicBasis(2, 8)

        def gradient(profile=profile, basis=basis):
            theta = rng.uniform(0.0, 2.0 * math.pi, 1000)
            r = np.exp(rng.uniform(math.log(0.5), math.log(2.0), 1000))
            # the Euclidean unit circle is the rho-unit sphere
            pts = np.column_stack([np.cos(theta), np.sin(theta)]) * r[:, None] ** profile.alpha[None, :]
            worst = 0.0
            for s, m in ((1, 1), (2, 1), (1, 2), (2, 3)):
                H = harmonics.hsm_kernel(basis, s, m, profile)
                analytic = harmonics.hsm_gradient(basis, s, m, profile, pts)
                fd = np.column_stack([
                    numdiff.finite_difference(lambda p: H(np.zeros(2), p), pts, e)
                    for e in numdiff.multiindices(2, 1, exact=True)
                ])
                # multiindices lists (1, 0) before (0, 1)
                worst = max(worst, _rel(fd, analytic))
            return Outcome(worst <= 1e-6, {"max_relative_error": worst}, detail="10^3 points")

        ctx.check(name, f"hsm-gradient[{_tag(profile)}]", "analytic gradient of H_sm matches finite differences",
                  gradient)

        def bound(profile=profile, basis=basis):
            pts = rng.standard_normal((500, 2))
            ratios = [float(np.max(harmonics.gradient_bound_ratio(basis, 1, m, profile, pts))) for m in (1, 2, 4, 8)]
            spread = _spread(ratios)
            return Outcome(all(math.isfinite(v) for v in ratios) and spread <= 10.0, {"spread": spread}, ratios)

        ctx.check(name, f"hsm-gradient-bound[{_tag(profile)}]",
                  "|grad H_sm| rho^(alpha+alpha_i) / m^(n/2) bounded in m", bound)


# ---------------------------------------------------------------------------
# hormander
# ---------------------------------------------------------------------------

@experiment("hormander", "pointwise and integral Hormander conditions for H_sm")
def hormander(ctx: ExperimentContext):
    name = "hormander"
    basis = harmonics.HarmonicBasis(2, 8)
    profiles = [AnisotropyProfile((1.0, 1.0))]
    if ctx.profile.n == 2 and not ctx.profile.isotropic:
        profiles.append(ctx.profile)
    else:
        profiles.append(_companion_profile(2))
    for profile in profiles:
        tag = _tag(profile)
        unit = Ellipsoid((0.0, 0.0), 1.0, profile)

        def doubling(profile=profile, unit=unit):
            a = operators.hormander_pointwise(basis, 1, 1, profile, unit, 2000, ctx.seed)
            b = operators.hormander_pointwise(basis, 1, 1, profile, unit, 4000, ctx.seed)
            change = abs(b / a - 1.0)
            return Outcome(math.isfinite(b) and change <= 0.2, {"sup_ratio": b, "relative_change": change}, [a, b])

        ctx.check(name, f"pointwise-doubling[{tag}]", "sup ratio stable under sample doubling", doubling)

        def radii(profile=profile):
            vals = [operators.hormander_pointwise(basis, 1, 1, profile, Ellipsoid((0.3, -0.2), r, profile), 2000,
                                                  ctx.seed) for r in (0.5, 1.0, 2.0)]
            spread = _spread(vals)
            return Outcome(spread - 1.0 <= 0.2, {"spread": spread}, vals, detail="r in {0.5, 1, 2}")

        ctx.check(name, f"pointwise-radius[{tag}]", "sup ratio invariant along dilations of the ellipsoid", radii)

        def m_scaling(profile=profile, unit=unit):
            vals = [operators.hormander_pointwise(basis, 1, m, profile, unit, 2000, ctx.seed) for m in (1, 2, 4, 8)]
            return Outcome(all(math.isfinite(v) for v in vals), {"spread": _spread(vals)}, vals,
                           detail="m in {1, 2, 4, 8}, divided by m^(n/2)")

        ctx.check(name, f"pointwise-m-scaling[{tag}]", "ratios bounded after the m^(n/2) factor", m_scaling)

    iso = profiles[0]

    def dilation():
        a = operators.hormander_integral(basis, 1, 1, iso, np.array([1.0, 0.0]), 64.0)
        b = operators.hormander_integral(basis, 1, 1, iso, np.array([2.0, 0.0]), 128.0)
        rel = abs(a.value - b.value) / a.value
        return Outcome(rel <= 1e-3, {"value_rho1": a.value, "value_rho2": b.value, "relative_difference": rel})

    ctx.check(name, "integral-dilation", "integral condition constant invariant under dilation of x", dilation)

    def tail():
        x = np.array([1.0, 0.0])
        a = operators.hormander_integral(basis, 1, 1, iso, x, 64.0)
        b = operators.hormander_integral(basis, 1, 1, iso, x, 128.0)
        change = abs(b.value - a.value) / a.value
        raw = abs(b.partial - a.partial) / a.partial
        return Outcome(change <= 1e-2, {"value_64": a.value, "value_128": b.value, "relative_change": change,
                                        "raw_partial_change": raw, "tail_estimate_64": a.tail_estimate})

    ctx.check(name, "integral-tail", "value plateaus when R_max doubles from 64 rho(x) to 128 rho(x)", tail)

    for profile in profiles:
        def spread_in_x(profile=profile):
            angles = np.linspace(0.0, math.pi, 5)
            table = np.array([[operators.hormander_integral(
                basis, 1, 1, profile, metric.dilate(r, np.array([math.cos(t), math.sin(t)]), profile), 64.0 * r).value
                for t in angles] for r in (0.25, 1.0, 4.0)])
            vals = table.ravel().tolist()
            variation = _spread(vals) - 1.0
            # the integral is invariant under dilation of x, so each direction agrees across the radii
            dilation_gap = float(np.max(np.abs(table / table[1][None, :] - 1.0)))
            ok = (all(math.isfinite(v) for v in vals) and dilation_gap <= 1e-6
                  and (variation <= 0.25 or not profile.isotropic))
            return Outcome(ok, {"variation": variation, "dilation_gap": dilation_gap}, vals,
                           detail="rho(x) in {0.25, 1, 4}" + ("" if profile.isotropic else
                                                               "; direction spread recorded only"))

        ctx.check(name, f"integral-uniformity[{_tag(profile)}]", "integral condition constant independent of x",
                  spread_in_x)


# ---------------------------------------------------------------------------
# operator-bound
# ---------------------------------------------------------------------------

def _smooth(fname: str) -> bool:
    return not fname.startswith("indicator")


@experiment("operator-bound", "Morrey-norm ratios of K_eps f over the f-suite and the eps ladder")
def operator_bound(ctx: ExperimentContext):
    name = "operator-bound"
    k, grid = ctx.kernel, ctx.grid
    profile = k.profile
    ladder = ctx.eps_ladder(grid, profile)
    p, w = ctx.config.p, ctx.weight
    suite = f_suite(grid, profile, ctx.seed)

    for fname, f in suite:
        def ratios(f=f, fname=fname):
            ref = operators.epsilon_refinement(k, f, ladder, p)
            base = ctx.morrey(f, p, w, profile=profile).value
            vals = [ctx.morrey(r.output, p, w, profile=profile).value / base for r in ref.results]
            spread = _spread(vals)
            d = ref.deltas
            cauchy = all(b <= 1.1 * a for a, b in zip(d, d[1:]))
            ok = all(math.isfinite(v) for v in vals) and spread <= 2.0 and (cauchy or not _smooth(fname))
            return Outcome(ok, {"spread": spread, **{f"delta_{i}": v for i, v in enumerate(d)}}, vals,
                           detail=f"eps={[round(e, 6) for e in ref.epsilons]}"
                                  + ("" if _smooth(fname) else "; Cauchy deltas recorded only"))

        ctx.check(name, f"eps-uniformity[{fname}]", "||K_eps f||_(p,w) / ||f||_(p,w) uniform in eps", ratios)

    def linearity():
        pol = operators.TruncationPolicy(ladder[0])
        f, g = suite[0][1], suite[7][1]
        lhs = operators.truncated_transform(k, f + g, pol).output.values
        rhs = operators.truncated_transform(k, f, pol).output.values + \
            operators.truncated_transform(k, g, pol).output.values
        err = _rel(lhs, rhs)
        return Outcome(err <= 1e-12, {"relative_error": err})

    ctx.check(name, "linearity", "K_eps(f + g) = K_eps f + K_eps g", linearity)

    def constant_input():
        pol = operators.TruncationPolicy(ladder[0])
        one = sample(lambda x: np.ones(len(x)), grid)
        out = operators.truncated_transform(k, one, pol)
        center = 0.5 * (np.array(grid.lower) + np.array(grid.upper))
        value = abs(out.output.at(center))
        return Outcome(value <= 1e-3, {"center_value": value, "straddling_cells": out.diagnostics.straddling_cells})

    ctx.check(name, "cancellation-constant", "K_eps of a constant vanishes at the center of a symmetric box",
              constant_input)

    def polar_oracle():
        g2 = Grid((-4.0, -4.0), (4.0, 4.0), (65, 65))
        eps = 8.0 * g2.max_spacing
        f = sample(lambda x: (x[:, 0] ** 2 - x[:, 1] ** 2) * np.exp(-(x ** 2).sum(axis=1)), g2)
        got = operators.truncated_transform(kernels.builtin("CZ2"), f, operators.TruncationPolicy(eps)).output.at(
            (0.0, 0.0))
        want = 0.5 * math.sqrt(math.pi) * math.exp(-eps ** 2)
        rel = abs(got - want) / want
        return Outcome(rel <= 1e-2, {"value": got, "polar_oracle": want, "relative_error": rel})

    ctx.check(name, "polar-oracle[CZ2]", "K_eps of a degree-2 harmonic bump matches the polar closed form",
              polar_oracle)

    def quadrature_and_io():
        fine = Grid((-6.0, -6.0), (6.0, 6.0), (257, 257))
        gauss = sample(lambda x: np.exp(-(x ** 2).sum(axis=1)), fine)
        err = abs(integrate(gauss) - math.pi)
        homog = abs(lp_norm(gauss * -3.0, p) - 3.0 * lp_norm(gauss, p)) / lp_norm(gauss, p)
        out = operators.truncated_transform(k, suite[0][1], operators.TruncationPolicy(ladder[0])).output
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "k_eps_f.csv")
            write_csv(out, path)
            back = read_csv(path)
        same = back.grid == out.grid and np.array_equal(back.values, out.values)
        return Outcome(err <= 1e-6 and homog <= 1e-12 and same,
                       {"gaussian_error": err, "lp_homogeneity_error": homog, "csv_roundtrip_exact": float(same)})

    ctx.check(name, "grid-quadrature-io", "trapezoid integral, L^p homogeneity and bit-exact CSV round trip",
              quadrature_and_io)


# ---------------------------------------------------------------------------
# commutator-bound
# ---------------------------------------------------------------------------

@experiment("commutator-bound", "commutator Morrey norms against ||a||_* over the a-suite and f-suite")
def commutator_bound(ctx: ExperimentContext):
    name = "commutator-bound"
    k, grid = ctx.kernel, ctx.grid
    profile = k.profile
    ladder = ctx.eps_ladder(grid, profile)
    pol = operators.TruncationPolicy(ladder[len(ladder) // 2])
    p, w = ctx.config.p, ctx.weight
    fs = f_suite(grid, profile, ctx.seed)
    f_norms = {fname: ctx.morrey(f, p, w, profile=profile).value for fname, f in fs}

    for aname, a in a_suite(grid, profile):
        def ratios(a=a, aname=aname):
            norm = ctx.bmo(a, profile=profile).bmo_norm
            vals, identity = [], 0.0
            zero = True
            for fname, f in fs:
                diff_form = operators.commutator(a, k, f, pol)
                op_form = operators.commutator_operator_form(a, k, f, pol)
                scale = max(float(np.max(np.abs(operators.truncated_transform(k, a * f, pol).output.values))), TINY)
                identity = max(identity, float(np.max(np.abs(diff_form.output.values - op_form.output.values))) / scale)
                cn = ctx.morrey(diff_form.output, p, w, profile=profile).value
                zero = zero and cn == 0.0
                vals.append(0.0 if norm == 0.0 else cn / (norm * f_norms[fname]))
            ok = all(math.isfinite(v) for v in vals) and identity <= 1e-10 and (norm > 0.0 or zero)
            return Outcome(ok, {"bmo_norm": norm, "max_ratio": max(vals), "identity_error": identity}, vals)

        ctx.check(name, f"ratio[{aname}]", "||C_eps f||_(p,w) <= C ||a||_* ||f||_(p,w)", ratios)

    def linear_in_a():
        a = a_suite(grid, profile)[1][1]
        f = fs[0][1]
        lhs = operators.commutator(a * 3.0, k, f, pol).output.values
        rhs = 3.0 * operators.commutator(a, k, f, pol).output.values
        err = _rel(lhs, rhs)
        return Outcome(err <= 1e-12, {"relative_error": err})

    ctx.check(name, "linearity-in-a", "C_eps[lambda a] = lambda C_eps[a]", linear_in_a)


# ---------------------------------------------------------------------------
# vmo-localization
# ---------------------------------------------------------------------------

@experiment("vmo-localization", "commutator norms on shrinking ellipsoids for a VMO and a BMO multiplier")
def vmo_localization(ctx: ExperimentContext):
    name = "vmo-localization"
    k = ctx.kernel if ctx.kernel.n == 2 else kernels.builtin("CZ2")
    profile = k.profile
    grid = Grid((-2.0, -2.0), (2.0, 2.0), (65, 65))
    pol = operators.TruncationPolicy(2.0 * grid.max_spacing)
    p, w = ctx.config.p, ctx.weight
    bump = sample(lambda x: np.exp(-(x ** 2).sum(axis=1)), grid)
    multipliers = {
        "sin(x1)": sample(lambda x: np.sin(x[:, 0]), grid),
        "log(rho)": sample(log_rho_floored(grid, profile), grid),
    }
    results = {}
    for aname, a in multipliers.items():
        def run(a=a, aname=aname):
            vals = []
            for radius in (1.0, 0.5, 0.25):
                e = Ellipsoid((0.0, 0.0), radius, profile)
                chi = sample(lambda x: np.asarray(metric.ellipsoid_contains(e, x), dtype=float), grid)
                f_loc = bump * chi
                c = operators.commutator(a, k, f_loc, pol).output * chi
                vals.append(ctx.morrey(c, p, w, profile=profile).value
                            / ctx.morrey(f_loc, p, w, profile=profile).value)
            modulus = ctx.bmo(a, profile=profile)
            decreasing = all(b < a_ for a_, b in zip(vals, vals[1:]))
            results[aname] = (decreasing, modulus.vmo_flag)
            if aname == "sin(x1)":
                ok = decreasing and modulus.vmo_flag
            else:
                ok = all(math.isfinite(v) for v in vals) and not modulus.vmo_flag
            return Outcome(ok, {"vmo_flag": float(modulus.vmo_flag), "trend_slope": modulus.trend_slope,
                                "bmo_norm": modulus.bmo_norm}, vals,
                           detail=f"radii 1, 1/2, 1/4; ratios {'decrease' if decreasing else 'do not decrease'}")

        ctx.check(name, f"localization[{aname}]", "commutator ratio shrinks with the ellipsoid for VMO multipliers",
                  run)

    def contrast():
        vmo, bmo = results.get("sin(x1)"), results.get("log(rho)")
        ok = vmo is not None and bmo is not None and vmo[0] and vmo[1] and not bmo[1]
        return Outcome(ok, {"vmo_decreasing": float(bool(vmo and vmo[0])),
                            "bmo_decreasing": float(bool(bmo and bmo[0]))},
                       detail="VMO multiplier localizes; BMO-only multiplier is flagged non-VMO")

    ctx.check(name, "vmo-bmo-contrast", "VMO versus BMO multipliers", contrast)


# ---------------------------------------------------------------------------
# series-reconstruction
# ---------------------------------------------------------------------------

@experiment("series-reconstruction", "K_eps f as the sum of b_sm(x) K_sm,eps f")
def series_reconstruction(ctx: ExperimentContext):
    name = "series-reconstruction"
    grid = Grid((-4.0, -4.0), (4.0, 4.0), (33, 33))
    pol = operators.TruncationPolicy(4.0 * grid.max_spacing)
    iso = AnisotropyProfile((1.0, 1.0))
    f = sample(lambda x: np.exp(-((x - 0.3) ** 2).sum(axis=1)) * (1.0 + x[:, 0]), grid)
    M = ctx.config.max_degree

    def cz2():
        k = kernels.builtin("CZ2")
        direct = operators.truncated_transform(k, f, pol).output.values
        series = operators.series_transform(k, f, pol, M)
        err = _rel(series.output.values, direct)
        return Outcome(err <= 1e-10, {"relative_error": err, "terms": series.diagnostics.terms})

    ctx.check(name, "series[CZ2]", "a single-harmonic kernel is reproduced exactly", cz2)

    def h12():
        basis = harmonics.HarmonicBasis(2, 2)
        direct = operators.truncated_transform(kernels.builtin("CZ2"), f, pol).output.values
        piece = operators.constant_transform(basis, 1, 2, iso, f, pol).output.values
        err = _rel(piece, direct)
        return Outcome(err <= 1e-12, {"relative_error": err})

    ctx.check(name, "constant-transform[H(1,2)=CZ2]", "K_12,eps coincides with the CZ2 transform", h12)

    def var_cz2():
        k = kernels.builtin("VAR-CZ2")
        xs = np.array([[0.0, 0.0], [1.0, -0.5], [-2.0, 1.5], [2.5, 2.5]])
        basis = harmonics.HarmonicBasis(2, M)
        coeffs = harmonics.expand_kernel(k, basis, metric.sphere_quadrature(2, 256), xs)
        recovered = coeffs.coefficient(1, 2)
        coef_err = float(np.max(np.abs(recovered - (2.0 + np.sin(xs[:, 0])))))
        direct = operators.truncated_transform(k, f, pol).output.values
        series = operators.series_transform(k, f, pol, M).output.values
        disc = float(np.linalg.norm(series - direct) / np.linalg.norm(direct))
        return Outcome(coef_err <= 1e-10 and disc <= 1e-3, {"coefficient_error": coef_err, "discrepancy": disc})

    ctx.check(name, "series[VAR-CZ2]", "b_12(x) = 2 + sin x_1 and the series matches the direct transform", var_cz2)

    def mix12():
        k = kernels.builtin("MIX12")
        direct = operators.truncated_transform(k, f, pol).output.values
        degrees = [d for d in (2, 4, 8, 16) if d <= max(M, 2)]
        curve = []
        for d in degrees:
            series = operators.series_transform(k, f, pol, d).output.values
            curve.append(float(np.linalg.norm(series - direct) / np.linalg.norm(direct)))
        monotone = all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))
        return Outcome(monotone and curve[-1] <= 1e-3, {"final_discrepancy": curve[-1]}, curve,
                       detail=f"M in {degrees}")

    ctx.check(name, "series[MIX12]", "discrepancy nonincreasing in M", mix12)

    def refinement():
        basis = harmonics.HarmonicBasis(2, 2)
        k = harmonics.hsm_kernel(basis, 1, 2, iso)
        g2 = ctx.grid if ctx.grid.n == 2 else Grid((-4.0, -4.0), (4.0, 4.0), (65, 65))
        g = sample(lambda x: np.exp(-(x ** 2).sum(axis=1)), g2)
        ref = operators.epsilon_refinement(k, g, ctx.eps_ladder(g.grid, iso))
        d = ref.deltas
        ok = all(b <= 1.1 * a for a, b in zip(d, d[1:]))
        return Outcome(ok, {}, d, detail=f"eps={[round(e, 6) for e in ref.epsilons]}")

    ctx.check(name, "eps-refinement[H(1,2)]", "Cauchy deltas of K_12,eps f shrink with eps", refinement)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@experiment("weights", "doubling and integral conditions of the weight families")
def weights(ctx: ExperimentContext):
    name = "weights"
    profile = ctx.profile
    alpha = profile.homogeneous_dimension
    centers = np.array([np.zeros(profile.n), np.ones(profile.n)])
    radii = np.logspace(-2.0, 2.0, 9)

    def power():
        lam = alpha / 2.0
        res = spaces.check_weight(spaces.power_weight(lam), profile, centers, radii)
        want = 1.0 / (alpha - lam)
        rel = abs(res.integral_constant - want) / want
        c1, c2 = res.doubling_bounds
        return Outcome(res.passed and rel <= 1e-2, {"integral_constant": res.integral_constant, "expected": want,
                                                    "relative_error": rel, "C1": c1, "C2": c2})

    ctx.check(name, "power(alpha/2)", "power weights below alpha satisfy both conditions", power)

    def power_log():
        res = spaces.check_weight(spaces.power_log_weight(alpha / 2.0), profile, centers, radii)
        c1, c2 = res.doubling_bounds
        return Outcome(res.passed, {"integral_constant": res.integral_constant, "C1": c1, "C2": c2})

    ctx.check(name, "power_log(alpha/2)", "r^l ln(r + 2) weights are admissible", power_log)

    def critical():
        res = spaces.check_weight(spaces.power_weight(alpha), profile, centers, radii)
        return Outcome(not res.passed and res.divergent, {"divergent": float(res.divergent)},
                       detail=res.diagnostic or "expected to diverge")

    ctx.check(name, "power(alpha)", "the critical power weight violates the integral condition", critical)

    def sigma_variant():
        sigma, lam = 0.75, alpha / 4.0
        res = spaces.check_weight(spaces.power_weight(lam), profile, centers, radii, sigma=sigma)
        want = 1.0 / (sigma * alpha - lam)
        rel = abs(res.integral_constant - want) / want
        return Outcome(res.passed and rel <= 1e-2, {"integral_constant": res.integral_constant, "expected": want,
                                                    "relative_error": rel})

    ctx.check(name, "sigma-variant", "integral condition with t^(sigma alpha + 1)", sigma_variant)

    def configured():
        res = spaces.check_weight(ctx.weight, profile, centers, radii)
        c1, c2 = res.doubling_bounds
        return Outcome(res.passed, {"integral_constant": res.integral_constant, "C1": c1, "C2": c2},
                       detail=res.diagnostic)

    ctx.check(name, f"configured[{ctx.weight.name}]", "the configured weight is admissible", configured)


# ---------------------------------------------------------------------------
# spaces-inequalities
# ---------------------------------------------------------------------------

@experiment("spaces-inequalities", "maximal, sharp and mean-oscillation inequalities on two resolutions")
def spaces_inequalities(ctx: ExperimentContext):
    name = "spaces-inequalities"
    profile = ctx.profile
    fine = ctx.grid
    coarse = Grid(fine.lower, fine.upper, tuple((pp - 1) // 2 + 1 for pp in fine.points))
    p = ctx.config.p
    w = spaces.power_weight(profile.homogeneous_dimension / 2.0)
    s_values = sorted({1.0, max(1.0, p / 2.0)})
    suites = {g: f_suite(g, profile, ctx.seed) for g in (coarse, fine)}
    norms = {g: {fname: ctx.morrey(f, p, w, profile=profile).value for fname, f in suites[g]}
             for g in suites}

    for s in s_values:
        def maximal_ineq(s=s):
            maxima = []
            for g in (coarse, fine):
                vals = [ctx.morrey(spaces.m_s_field(f, s, profile=profile), p, w, profile=profile).value
                        / norms[g][fname] for fname, f in suites[g]]
                maxima.append(max(vals))
            change = abs(maxima[1] / maxima[0] - 1.0)
            return Outcome(all(math.isfinite(v) for v in maxima) and change <= 0.25, {"relative_change": change},
                           maxima, detail="suite max on coarse and fine grids")

        ctx.check(name, f"maximal-inequality[s={s:g}]", "||M_s f||_(p,w) <= C ||f||_(p,w)", maximal_ineq)

    sharp_fields = {}

    def sharp_ineq():
        maxima = []
        for g in (coarse, fine):
            vals = []
            for fname, f in suites[g]:
                fs = spaces.sharp_field(f, profile=profile)
                sharp_fields[(g, fname)] = fs
                vals.append(norms[g][fname] / ctx.morrey(fs, p, w, profile=profile).value)
            maxima.append(max(vals))
        change = abs(maxima[1] / maxima[0] - 1.0)
        return Outcome(all(math.isfinite(v) for v in maxima) and change <= 0.25, {"relative_change": change},
                       maxima, detail="constants excluded: the inequality holds modulo constants")

    ctx.check(name, "sharp-inequality", "||f||_(p,w) <= C ||f^#||_(p,w)", sharp_ineq)

    def pointwise():
        h = fine.max_spacing
        worst_low, worst_sharp = 0.0, 0.0
        for fname, f in suites[fine]:
            mf = spaces.maximal_field(f, profile=profile)
            scale = float(np.max(np.abs(f.values)))
            if _smooth(fname):
                worst_low = max(worst_low, float(np.max(np.abs(f.values) - mf.values)) / scale)
            fs = sharp_fields.get((fine, fname)) or spaces.sharp_field(f, profile=profile)
            worst_sharp = max(worst_sharp, float(np.max(fs.values - 2.0 * mf.values)) / scale)
        return Outcome(worst_low <= h and worst_sharp <= 1e-10,
                       {"max_excess_f_over_Mf": worst_low, "max_excess_sharp_over_2Mf": worst_sharp, "h": h})

    ctx.check(name, "pointwise-bounds", "|f| <= Mf + O(h) and f^# <= 2 Mf", pointwise)

    def point_operators():
        f = suites[fine][0][1]
        rng = np.random.default_rng(ctx.seed)
        pts = rng.uniform(0.5 * np.array(fine.lower), 0.5 * np.array(fine.upper), (5, fine.n))
        worst_mono, worst_s1, worst_sharp = 0.0, 0.0, 0.0
        fs = sharp_fields.get((fine, suites[fine][0][0])) or spaces.sharp_field(f, profile=profile)
        sharp_tol = spaces.sharp_field_error_bound(f) + 1e-10 * max(float(np.max(np.abs(f.values))), TINY)
        for x in pts:
            m1, m2, m3 = (spaces.m_s(f, x, s, profile=profile) for s in (1.0, 2.0, 3.0))
            worst_mono = max(worst_mono, m1 - m2, m2 - m3)
            worst_s1 = max(worst_s1, abs(m1 - spaces.maximal(f, x, profile=profile)))
            worst_sharp = max(worst_sharp, abs(spaces.sharp(f, x, profile=profile) - fs.at(x)))
        return Outcome(worst_mono <= 1e-12 and worst_s1 == 0.0 and worst_sharp <= sharp_tol,
                       {"monotonicity_violation": worst_mono, "s1_difference": worst_s1,
                        "sharp_point_vs_field": worst_sharp, "sharp_field_bound": sharp_tol})

    ctx.check(name, "point-evaluations", "M_1 = M, M_s nondecreasing in s, point and field f^# agree",
              point_operators)

    def indicator_bound():
        r = 0.5
        center = 0.5 * (np.array(fine.lower) + np.array(fine.upper))
        e = Ellipsoid(tuple(center), r, profile)
        chi = sample(lambda x: np.asarray(metric.ellipsoid_contains(e, x), dtype=float), fine)
        alpha = profile.homogeneous_dimension
        worst = -math.inf
        vals = []
        for axis in range(fine.n):
            for dist in (1.5, 2.0):
                x = center.copy()
                x[axis] += dist ** profile.exponents[axis]
                x = np.array(fine.lower) + np.array(fine.index_of(x)) * fine.spacing
                d = metric.rho(x - center, profile)
                bound = r ** alpha / (d - r) ** alpha
                got = spaces.maximal(chi, x, profile=profile)
                vals.append(got)
                worst = max(worst, got - bound)
        return Outcome(worst <= fine.max_spacing, {"max_excess": worst}, vals)

    ctx.check(name, "maximal-indicator", "M chi_E(x) <= r^alpha / (rho(x - x0) - r)^alpha + O(h)",
              indicator_bound)

    def oscillation():
        log_fine = sample(log_rho_floored(fine, profile), fine)
        log_coarse = sample(log_rho_floored(coarse, profile), coarse)
        sin_fine = sample(lambda x: np.sin(x[:, 0]), fine)
        mod_f = ctx.bmo(log_fine, profile=profile)
        mod_c = ctx.bmo(log_coarse, profile=profile)
        mod_s = ctx.bmo(sin_fine, profile=profile)
        nondecreasing = all(b >= a for a, b in zip(mod_f.values, mod_f.values[1:]))
        agree = abs(mod_f.bmo_norm / mod_c.bmo_norm - 1.0)
        ok = nondecreasing and agree <= 0.1 and not mod_f.vmo_flag and mod_s.vmo_flag
        return Outcome(ok, {"bmo_log_fine": mod_f.bmo_norm, "bmo_log_coarse": mod_c.bmo_norm,
                            "resolution_change": agree, "vmo_sin": float(mod_s.vmo_flag),
                            "vmo_log": float(mod_f.vmo_flag), "sin_trend_slope": mod_s.trend_slope},
                       mod_f.values)

    ctx.check(name, "bmo-modulus", "gamma nondecreasing; log rho is BMO not VMO; sin x_1 is VMO", oscillation)

    def drift():
        a = sample(log_rho_floored(fine, profile), fine)
        norm = ctx.bmo(a, profile=profile).bmo_norm
        center = tuple(0.5 * (np.array(fine.lower) + np.array(fine.upper)))
        alpha = profile.homogeneous_dimension
        one = spaces.nested_average_drift(a, Ellipsoid(center, 1.0, profile), 1)
        two = spaces.nested_average_drift(a, Ellipsoid(center, 0.5, profile), 2)
        bound_ok = one <= 2 ** alpha * norm + fine.max_spacing and two <= 2 ** alpha * 2 * norm + fine.max_spacing
        rel = abs(one - math.log(2.0)) / math.log(2.0)
        return Outcome(bound_ok and rel <= 0.1, {"drift_k1": one, "drift_k2": two, "closed_form_k1": math.log(2.0),
                                                 "relative_error": rel, "bmo_norm": norm})

    ctx.check(name, "nested-average-drift", "|a_(2^k E) - a_E| <= 2^alpha k ||a||_*; log rho drifts by k log 2",
              drift)

    def john_nirenberg():
        a = sample(log_rho_floored(fine, profile), fine)
        modulus = ctx.bmo(a, profile=profile)
        center = 0.5 * (np.array(fine.lower) + np.array(fine.upper))
        step = fine.spacing * 4
        ellipsoids = [Ellipsoid(tuple(center + shift), r, profile)
                      for r in (0.5, 1.0, 1.5) for shift in (np.zeros(fine.n), step)]
        ratios = [spaces.john_nirenberg_ratio(a, 2.0, e, modulus.bmo_norm) for e in ellipsoids]
        r1 = spaces.john_nirenberg_ratio(a, 1.0, Ellipsoid(tuple(center), float(modulus.radii[2]), profile),
                                         modulus.bmo_norm)
        spread = _spread(ratios)
        return Outcome(spread <= 2.0 and r1 <= 1.05, {"spread": spread, "p1_ratio": r1}, ratios)

    ctx.check(name, "john-nirenberg", "(mean |a - a_E|^p)^(1/p) <= C(p) ||a||_*", john_nirenberg)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def coverage_check(ctx: ExperimentContext):
    def run():
        missing = OperationLedger.uninvoked()
        return Outcome(not missing, {"registered": len(OperationLedger.registered()),
                                     "invoked": len(OperationLedger.invoked())},
                       detail="uninvoked: " + (", ".join(missing) if missing else "none"))

    ctx.check("coverage", "operation-coverage", "every library operation is exercised by the experiments", run)
