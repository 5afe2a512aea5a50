"""
Invariant suite: evaluates the identities of the lab on random fields and
reports a residual table.
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from .bundle import exp_metric, flat_reference_metric, make_bundle, random_endomorphism, random_metric, random_periodic, relate_metrics
from .chern import curvature, curvature_relations, degree
from .donaldson import cross_check, mk_path, mk_spectral, scalar_bound_violations, siu_estimate_check, variations
from .fields import EndoField, FormDegree, FormField
from .flow import FlowConfig, heat_kernel_comparison, heat_step, monotonicity_violations, run_flow
from .geometry import build_grid
from .spectral_calc import (EXP, SQUARE, Phi_of_s, diff_quotient, holder_norm_check, lp_norm, phi_of_s,
                            pointwise_norm, psi, psi_scaled, smoothed_step)

logger = logging.getLogger(__name__)

PROFILES = ("spectral", "fd2", "fd4")
MIN_ORDERS = {"fd2": 1.9, "fd4": 3.8}
SKEW_TAU = 0.3 + 0.8j
DEFAULT_GRID_SIZE = 48
FIXED_POINT_STEPS = 100


@dataclass
class CheckResult:
    """Outcome of one identity check"""

    name: str
    residual: float
    tolerance: float
    passed: bool
    details: str = ""
    seconds: float = 0.0
    error: Optional[str] = None


def _smooth_scalar(grid):
    return np.exp(np.cos(2 * np.pi * grid.x1) + 0.5 * np.sin(2 * np.pi * (grid.x1 + grid.x2)))


def _fd_second(f, t, delta):
    return (-f(t + 2 * delta) + 16 * f(t + delta) - 30 * f(t) + 16 * f(t - delta) - f(t - 2 * delta)) / (12 * delta ** 2)


def _fd_first(f, t, delta):
    return (f(t - 2 * delta) - 8 * f(t - delta) + 8 * f(t + delta) - f(t + 2 * delta)) / (12 * delta)


class InvariantSuite:
    """
    Runs the identity checks for one tolerance profile.

    Args:
        n: Grid size for the field checks
        profile: spectral, fd2 or fd4
        seed: Seed for every random field
        tolerance_scale: Multiplies every tolerance; 0 makes any nonzero residual fail
        samples: Random samples per sampled check
    """

    def __init__(self, n: int = DEFAULT_GRID_SIZE, profile: str = "spectral", seed: int = 0,
                 tolerance_scale: float = 1.0, samples: int = 3):
        if profile not in PROFILES:
            raise ValueError(f"Unknown profile {profile!r}; expected one of {PROFILES}")
        self.n = n
        self.profile = profile
        self.seed = seed
        self.tolerance_scale = tolerance_scale
        self.samples = samples
        self.results: List[CheckResult] = []

    def _rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.seed + offset)

    def checks(self) -> List[Tuple[str, Callable[[], Tuple[float, float, str]]]]:
        if self.profile != "spectral":
            return [
                ("derivative_order", self.check_derivative_order),
                ("chain_rule_order", self.check_chain_rule_order),
            ]
        return [
            ("integrate_constant", self.check_integrate_constant),
            ("integration_by_parts", self.check_integration_by_parts),
            ("kahler_identity", self.check_kahler_identity),
            ("green_inverse", self.check_green_inverse),
            ("group_projection", self.check_group_projection),
            ("degree_quantization", self.check_degree_quantization),
            ("hermitian_einstein_fixed_point", self.check_fixed_point),
            ("exp_log_round_trip", self.check_round_trip),
            ("matrix_exponential", self.check_matrix_exponential),
            ("chain_rule", self.check_chain_rule),
            ("psi_properties", self.check_psi),
            ("holder_bound", self.check_holder),
            ("curvature_relations", self.check_curvature_relations),
            ("mk_cross_method", self.check_mk_cross_method),
            ("mk_cocycle", self.check_mk_cocycle),
            ("variations", self.check_variations),
            ("siu_scalar", self.check_siu_scalar),
            ("siu_estimate", self.check_siu_estimate),
            ("flow_monotonicity", self.check_flow),
        ]

    def run(self) -> List[CheckResult]:
        """Run every check; a failing or raising check does not stop the suite"""
        self.results = []
        for name, check in self.checks():
            start = time.perf_counter()
            try:
                residual, tolerance, details = check()
                passed = bool(np.isfinite(residual) and residual <= tolerance * self.tolerance_scale)
                result = CheckResult(name, float(residual), tolerance, passed, details)
            except Exception as e:
                logger.error(f"Check {name} raised: {e}")
                result = CheckResult(name, float("nan"), 0.0, False, error=str(e))
            result.seconds = time.perf_counter() - start
            status = "passed" if result.passed else "FAILED"
            logger.info(f"{name}: residual={result.residual:.3e} tol={result.tolerance:.1e} {status}")
            self.results.append(result)
        return self.results

    @property
    def all_passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.results])

    # ------------------------------------------------------------------
    # base geometry
    # ------------------------------------------------------------------

    def check_integrate_constant(self):
        grid = build_grid(self.n, self.n, SKEW_TAU)
        value = grid.integrate(np.ones(grid.shape))
        return abs(value - grid.volume) / grid.volume, 1e-12, f"volume={grid.volume}"

    def check_integration_by_parts(self):
        grid = build_grid(self.n, self.n, SKEW_TAU)
        rng = self._rng(1)
        f = random_periodic(grid, rng, 3)
        g = random_periodic(grid, rng, 3)
        total = grid.integrate(g * grid.dzbar(f)) + grid.integrate(f * grid.dzbar(g))
        return abs(total), 1e-10, ""

    def check_kahler_identity(self):
        grid = build_grid(self.n, self.n, SKEW_TAU)
        rng = self._rng(2)
        f = random_periodic(grid, rng, 3)
        a = random_periodic(grid, rng, 3)
        lhs = 2.0 * grid.integrate(grid.dzbar(f) * np.conj(a))
        adjoint = -1j * grid.lambda_contract(grid.apply_partial(FormField(a, FormDegree.DZBAR))).values
        rhs = grid.integrate(f * np.conj(adjoint))
        return abs(lhs - rhs), 1e-10, ""

    def check_green_inverse(self):
        grid = build_grid(self.n, self.n, SKEW_TAU)
        u = random_periodic(grid, self._rng(3), 3).real
        solved = grid.green_solve(grid.laplacian(u).real)
        return float(np.max(np.abs(solved - (u - grid.mean(u).real)))), 1e-9, ""

    def check_group_projection(self):
        grid = build_grid(self.n, self.n, 1j, k=2)
        bundle = make_bundle(grid, 2, [1, -1], np.diag([1.0, -1.0]))
        A = random_endomorphism(bundle, self._rng(4), self_adjoint=False)
        once = grid.group_project(A, isotropy=bundle.isotropy, charges=bundle.charges)
        twice = grid.group_project(once, isotropy=bundle.isotropy, charges=bundle.charges)
        return float(np.max(np.abs(twice.values - once.values))), 1e-12, "k=2, twists [1,-1]"

    # ------------------------------------------------------------------
    # bundle and curvature
    # ------------------------------------------------------------------

    def check_degree_quantization(self):
        grid = build_grid(self.n, self.n, 1j)
        rng = self._rng(5)
        worst = 0.0
        for d in (-2, -1, 0, 1, 2):
            bundle = make_bundle(grid, 1, [d])
            H = random_metric(bundle, rng, 0.5)
            worst = max(worst, abs(degree(bundle, H) - d))
        return worst, 1e-6, "twists -2..2"

    def check_fixed_point(self):
        grid = build_grid(self.n, self.n, 1j)
        bundle = make_bundle(grid, 1, [1])
        K = flat_reference_metric(bundle)
        report = curvature(K, bundle)
        dt = 2.0 / grid.stiffness()
        H = K
        for _ in range(FIXED_POINT_STEPS):
            H = heat_step(H, bundle, dt, "rk4")
        change = float(np.max(np.abs(H.values - K.values)))
        return max(report.sup_dev, change), 1e-10, f"sup_dev={report.sup_dev:.2e}, change={change:.2e}"

    def check_round_trip(self):
        grid = build_grid(self.n, self.n, 1j)
        bundle = make_bundle(grid, 2, [1, 0])
        rng = self._rng(6)
        K = random_metric(bundle, rng, 0.5)
        s = random_endomorphism(bundle, rng, amplitude=5.0, K=K)
        recovered = relate_metrics(exp_metric(K, s), K)
        return float(np.max(np.abs(recovered.values - s.values))), 1e-10, "||s|| = 5"

    def check_matrix_exponential(self):
        grid = build_grid(self.n, self.n, 1j)
        bundle = make_bundle(grid, 3, [0, 0, 0])
        s = random_endomorphism(bundle, self._rng(7), amplitude=2.0)
        exp_s = phi_of_s(EXP, s).values
        worst = 0.0
        for i in range(0, grid.n1, 4):
            for j in range(0, grid.n2, 4):
                worst = max(worst, float(np.max(np.abs(exp_s[i, j] - expm(s.values[i, j])))))
        return worst, 1e-10, "scipy.linalg.expm oracle"

    def _separated(self, offset: int):
        grid = build_grid(self.n, self.n, SKEW_TAU)
        bundle = make_bundle(grid, 2, [0, 0])
        s = random_endomorphism(bundle, self._rng(offset), amplitude=0.3)
        return grid, bundle, EndoField(s.values + np.diag([-1.0, 1.0]))

    def check_chain_rule(self):
        worst = 0.0
        for sample in range(self.samples):
            grid, _, s = self._separated(100 + sample)
            dbar_s = grid.apply_dbar(s)
            for phi in (EXP, SQUARE, smoothed_step(0.0, 0.5)):
                lhs = grid.apply_dbar(phi_of_s(phi, s)).values
                rhs = Phi_of_s(diff_quotient(phi), s, dbar_s).values
                worst = max(worst, lp_norm(pointwise_norm(lhs - rhs), 2, grid.cell_area))
        return worst, 1e-7, "exp, square, smoothed step"

    def check_psi(self):
        residuals = [abs(psi(0.3, 0.3) - 0.5), abs(psi(0.0, 1.0) - (np.e - 2.0))]
        scaled = [psi_scaled(ell, 1.0, 0.0) for ell in (1.0, 10.0, 100.0, 1000.0)]
        monotone = max(0.0, -float(np.min(np.diff(scaled))))
        return max(max(residuals), monotone, abs(scaled[-1] - 1.0) - 1e-3), 1e-12, f"psi_scaled(1000,1,0)={scaled[-1]:.6f}"

    def check_holder(self):
        worst = -np.inf
        for sample in range(self.samples):
            grid, _, s = self._separated(200 + sample)
            A = random_endomorphism(make_bundle(grid, 2, [0, 0]), self._rng(300 + sample), self_adjoint=False)
            lhs, rhs = holder_norm_check(s, A, 1.0, 2.0, None, grid)
            worst = max(worst, lhs - rhs)
        return worst, 0.0, "(p, q) = (1, 2)"

    def check_curvature_relations(self):
        grid = build_grid(self.n, self.n, 1j)
        bundle = make_bundle(grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
        rng = self._rng(8)
        K = random_metric(bundle, rng, 0.3)
        s = random_endomorphism(bundle, rng, amplitude=0.5, K=K)
        relations = curvature_relations(s, K, bundle)
        details = ", ".join(f"{k}={v:.1e}" for k, v in relations.items())
        return max(relations.values()), 1e-7, details

    # ------------------------------------------------------------------
    # Donaldson functional
    # ------------------------------------------------------------------

    def _functional_sample(self, offset: int):
        grid = build_grid(self.n, self.n, 1j)
        bundle = make_bundle(grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
        rng = self._rng(offset)
        K = random_metric(bundle, rng, 0.3)
        s = random_endomorphism(bundle, rng, amplitude=0.6, K=K, trace_free=True)
        return bundle, K, s

    def check_mk_cross_method(self):
        worst = 0.0
        for sample in range(self.samples):
            bundle, K, s = self._functional_sample(400 + sample)
            worst = max(worst, cross_check(s, K, bundle).residual_vs_other)
        return worst, 1e-7, "path_points=16"

    def check_mk_cocycle(self):
        bundle, K, s = self._functional_sample(500)
        rng = self._rng(501)
        J = random_metric(bundle, rng, 0.3, base=K)
        H = exp_metric(K, s)
        direct = mk_path(H, K, bundle).value
        split = mk_path(H, J, bundle).value + mk_path(J, K, bundle).value
        return abs(direct - split) / max(1.0, abs(direct)), 1e-7, ""

    def check_variations(self):
        worst = 0.0
        delta = 1e-2
        for sample in range(self.samples):
            bundle, K, s = self._functional_sample(600 + sample)
            t = float(self._rng(700 + sample).uniform(0.2, 0.8))
            first, second = variations(s, K, bundle, t)

            def mk_at(x):
                return mk_spectral(s.scale(x), K, bundle).value

            fd2 = _fd_second(mk_at, t, delta)
            fd1 = _fd_first(mk_at, t, delta)
            worst = max(worst, abs(fd2 - second) / max(1.0, abs(second)), abs(fd1 - first) / max(1.0, abs(first)))
        return worst, 1e-6, "five-point stencil, delta=1e-2"

    def check_siu_scalar(self):
        samples = self._rng(9).uniform(-50.0, 50.0, 1_000_000)
        violations = scalar_bound_violations(samples)
        return float(violations.size), 0.0, "1/(2(1+|u|)) over 1e6 samples"

    def check_siu_estimate(self):
        worst = -np.inf
        for sample in range(self.samples):
            bundle, K, s = self._functional_sample(800 + sample)
            _, _, margin = siu_estimate_check(s, K, bundle)
            worst = max(worst, -margin)
        return worst, 1e-9, "negative of the smallest margin"

    # ------------------------------------------------------------------
    # flow
    # ------------------------------------------------------------------

    def check_flow(self):
        grid = build_grid(16, 16, 1j)
        bundle = make_bundle(grid, 2, [1, 0])
        H0 = random_metric(bundle, self._rng(10), 0.3)
        dt = 2.0 / grid.stiffness()
        trace = run_flow(H0, bundle, FlowConfig(dt=dt, t_max=100 * dt, monitor_every=10))
        mk_up = monotonicity_violations(trace, "M_K")
        sup_up = monotonicity_violations(trace, "sup_dev")
        conservation = float(np.max(np.abs(trace.column("trace_int")))) / grid.volume
        kernel = heat_kernel_comparison(trace, grid)
        violations = sum(item["violated"] for item in kernel)
        residual = max(mk_up, sup_up, conservation, float(violations))
        details = (f"dM={mk_up:.1e}, dsup={sup_up:.1e}, trace_int={conservation:.1e}, "
                   f"heat-kernel violations={violations}/{len(kernel)}")
        return residual, 1e-9, details

    # ------------------------------------------------------------------
    # finite-difference profiles
    # ------------------------------------------------------------------

    def _order(self, error_at) -> Tuple[float, str]:
        coarse, fine = error_at(self.n), error_at(2 * self.n)
        order = float(np.log2(coarse / fine))
        return order, f"errors {coarse:.2e} -> {fine:.2e}, order {order:.2f}"

    def check_derivative_order(self):
        def error_at(n):
            spectral = build_grid(n, n, SKEW_TAU)
            grid = build_grid(n, n, SKEW_TAU, scheme=self.profile)
            f = _smooth_scalar(grid)
            return float(np.max(np.abs(grid.dzbar(f) - spectral.dzbar(f))))

        order, details = self._order(error_at)
        return MIN_ORDERS[self.profile] - order, 0.0, details

    def check_chain_rule_order(self):
        def error_at(n):
            grid = build_grid(n, n, SKEW_TAU, scheme=self.profile)
            f = _smooth_scalar(grid)
            s = EndoField(np.stack([np.stack([0.3 * f - 1.0, 0.2 * np.cos(2 * np.pi * grid.x2)], -1),
                                    np.stack([0.2 * np.cos(2 * np.pi * grid.x2), 1.0 - 0.3 * f], -1)], -2)
                          .astype(complex))
            lhs = grid.apply_dbar(phi_of_s(EXP, s)).values
            rhs = Phi_of_s(diff_quotient(EXP), s, grid.apply_dbar(s)).values
            return lp_norm(pointwise_norm(lhs - rhs), 2, grid.cell_area)

        order, details = self._order(error_at)
        return MIN_ORDERS[self.profile] - order, 0.0, details

