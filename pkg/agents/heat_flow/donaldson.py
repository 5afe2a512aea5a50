"""
Donaldson functional M_K(H) and the estimates built on it.

Two independent evaluators are provided. mk_path integrates the first
variation 2i * int Tr(s (Lambda F_t - lambda)) along the geodesic K e^{ts}
with Gauss-Legendre quadrature. mk_spectral uses the closed form

    M = 2i int Tr(s Lambda F_K) + 2 int sum_ij |(dbar s)_ij|^2 Psi(l_j, l_i)

in a K-unitary eigenframe of s, valid when int Tr(s) = 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import linprog

from .bundle import BundleData, exp_metric, relate_metrics
from .chern import curvature_form, dbar_end, lambda_constant
from .fields import EndoField, MetricField, trace
from .spectral_calc import PSI, Phi_of_s, adjoint_values, lp_norm, pointwise_norm

logger = logging.getLogger(__name__)

DEFAULT_PATH_POINTS = 16
TRACE_FREE_TOL = 1e-8
IMAG_WARN = 1e-8
PROPERNESS_SLACK = 0.05


class DonaldsonError(ValueError):
    """Input violates a precondition of the functional formulas"""


@dataclass
class MkEvaluation:
    """Value of M_K with provenance and error diagnostics"""

    value: float
    method: str
    path_points: Optional[int] = None
    residual_vs_other: Optional[float] = None
    imag_residual: float = 0.0
    error_estimate: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)


def trace_integral(s: EndoField, grid) -> float:
    return float(np.real(grid.integrate(trace(s.values))))


def _require_trace_free(s: EndoField, grid) -> None:
    total = trace_integral(s, grid)
    if abs(total) > TRACE_FREE_TOL:
        raise DonaldsonError(f"int Tr(s) = {total:.3e} exceeds {TRACE_FREE_TOL:g}; the closed form needs a trace-free s")


def first_variation_density(s: EndoField, H: MetricField, bundle: BundleData, lam: complex) -> complex:
    """2i * int Tr(s (Lambda F_H - lambda I))"""
    grid = bundle.grid
    lambda_F = grid.lambda_contract(curvature_form(H, bundle)).values
    shifted = lambda_F - lam * np.eye(bundle.rank)
    return 2j * grid.integrate(trace(s.values @ shifted))


def _path_quadrature(s: EndoField, K: MetricField, bundle: BundleData, points: int) -> complex:
    lam = lambda_constant(bundle)
    nodes, weights = leggauss(points)
    total = 0.0 + 0.0j
    for node, weight in zip(nodes, weights):
        t = 0.5 * (node + 1.0)
        H_t = exp_metric(K, s.scale(t))
        total += 0.5 * weight * first_variation_density(s, H_t, bundle, lam)
    return total


def mk_path(H: MetricField, K: MetricField, bundle: BundleData, path_points: int = DEFAULT_PATH_POINTS,
            richardson: bool = True) -> MkEvaluation:
    """
    M_K(H) by quadrature of the first variation along K e^{ts}.

    Args:
        H: Target metric
        K: Base metric
        bundle: Bundle data
        path_points: Gauss-Legendre nodes on [0, 1]
        richardson: Also evaluate with half the nodes and report the difference

    Returns:
        MkEvaluation with the imaginary part of the raw integral as a residual
    """
    s = relate_metrics(H, K)
    if not np.any(s.values):
        return MkEvaluation(0.0, "path", path_points, error_estimate=0.0)
    raw = _path_quadrature(s, K, bundle, path_points)
    error = None
    if richardson and path_points >= 4:
        coarse = _path_quadrature(s, K, bundle, path_points // 2)
        error = float(abs(raw - coarse))
    if abs(raw.imag) > IMAG_WARN * max(1.0, abs(raw.real)):
        logger.warning(f"mk_path integrand has imaginary part {raw.imag:.3e}")
    return MkEvaluation(float(raw.real), "path", path_points, imag_residual=float(abs(raw.imag)),
                        error_estimate=error)


def mk_spectral(s: EndoField, K: MetricField, bundle: BundleData) -> MkEvaluation:
    """
    M_K(K e^s) from the eigenframe formula.

    Raises:
        DonaldsonError: If int Tr(s) is not zero within 1e-8
    """
    grid = bundle.grid
    _require_trace_free(s, grid)
    if not np.any(s.values):
        return MkEvaluation(0.0, "spectral")

    lambda_F_K = grid.lambda_contract(curvature_form(K, bundle)).values
    linear = 2j * grid.integrate(trace(s.values @ lambda_F_K))

    dbar_s = dbar_end(s, bundle)
    weighted = Phi_of_s(PSI, s, dbar_s, K)
    density = np.real(trace(weighted.values @ adjoint_values(dbar_s.values, K.values)))
    # Form factor |dz-bar|^2 = 2 times the overall factor 2
    quadratic = 4.0 * grid.integrate(density)

    value = linear + quadratic
    return MkEvaluation(float(value.real), "spectral", imag_residual=float(abs(value.imag)),
                        extras={"linear": float(linear.real), "quadratic": float(np.real(quadratic))})


def mk_value(H: MetricField, K: MetricField, bundle: BundleData) -> MkEvaluation:
    """Spectral evaluation when s is trace-free, path quadrature otherwise"""
    s = relate_metrics(H, K)
    if abs(trace_integral(s, bundle.grid)) <= TRACE_FREE_TOL:
        return mk_spectral(s, K, bundle)
    return mk_path(H, K, bundle, richardson=False)


def cross_check(s: EndoField, K: MetricField, bundle: BundleData, path_points: int = DEFAULT_PATH_POINTS) -> MkEvaluation:
    """Spectral value annotated with its relative distance to the path value"""
    spectral = mk_spectral(s, K, bundle)
    path = mk_path(exp_metric(K, s), K, bundle, path_points)
    spectral.residual_vs_other = abs(spectral.value - path.value) / max(1.0, abs(path.value))
    spectral.path_points = path_points
    return spectral


def variations(s: EndoField, K: MetricField, bundle: BundleData, t: float):
    """
    First and second t-derivatives of M_K(K e^{ts}).

    Returns:
        (first, second) with second = 2 int |dbar_E s|^2_{H_t} >= 0
    """
    grid = bundle.grid
    _require_trace_free(s, grid)
    if not np.any(s.values):
        return 0.0, 0.0
    H_t = exp_metric(K, s.scale(t))
    first = first_variation_density(s, H_t, bundle, lambda_constant(bundle))
    dbar_s = dbar_end(s, bundle)
    second = 2.0 * np.sum(pointwise_norm(dbar_s, H_t.values) ** 2) * grid.cell_area
    return float(first.real), float(second)


# ----------------------------------------------------------------------
# Siu-type estimate
# ----------------------------------------------------------------------

def psi_profile(u: np.ndarray) -> np.ndarray:
    """(e^u - u - 1) / u^2 with the value 1/2 at u = 0"""
    u = np.asarray(u, dtype=float)
    return PSI(np.zeros_like(u), u)


def siu_lower_bound(u: np.ndarray) -> np.ndarray:
    """1 / (2 (1 + |u|)), a lower bound for psi_profile on the whole line"""
    return 0.5 / (1.0 + np.abs(np.asarray(u, dtype=float)))


def siu_literature_bound(u: np.ndarray) -> np.ndarray:
    """1 / (2 sqrt(u^2 + 1)); fails on a short interval of negative u"""
    return 0.5 / np.sqrt(np.asarray(u, dtype=float) ** 2 + 1.0)


def scalar_bound_violations(samples: np.ndarray, bound=siu_lower_bound, tol: float = 1e-15) -> np.ndarray:
    """Samples where bound(u) exceeds psi_profile(u)"""
    samples = np.asarray(samples, dtype=float)
    return samples[bound(samples) > psi_profile(samples) + tol]


def siu_estimate_check(s: EndoField, K: MetricField, bundle: BundleData):
    """
    Both sides of ||D_K s||_{L1}^2 <= 2 (sqrt(2) ||s||_{L1} + vol) (M_K(K e^s) - 2i int Tr(s Lambda F_K)).

    Returns:
        (lhs, rhs, margin)
    """
    grid = bundle.grid
    _require_trace_free(s, grid)
    if not np.any(s.values):
        return 0.0, 0.0, 0.0
    dbar_s = dbar_end(s, bundle)
    # |d_K s|^2 = |partial_K s|^2 + |dbar_E s|^2 = 2 |dbar_E s|^2 pointwise
    d_norm = np.sqrt(2.0) * pointwise_norm(dbar_s, K.values)
    lhs = lp_norm(d_norm, 1, grid.cell_area) ** 2

    evaluation = mk_spectral(s, K, bundle)
    s_l1 = lp_norm(pointwise_norm(s, K.values), 1, grid.cell_area)
    rhs = 2.0 * (np.sqrt(2.0) * s_l1 + grid.volume) * evaluation.extras["quadratic"]
    return float(lhs), float(rhs), float(rhs - lhs)


# ----------------------------------------------------------------------
# properness
# ----------------------------------------------------------------------

def _affine_lp(sup_s: np.ndarray, mk: np.ndarray):
    """Smallest C1 (then C2) with sup|s_t| <= C1 + C2 M_t, C1, C2 >= 0"""
    A_ub = np.column_stack([-np.ones_like(mk), -mk])
    result = linprog(c=[1.0, 1e-6], A_ub=A_ub, b_ub=-sup_s, bounds=[(0, None), (0, None)], method="highs")
    if not result.success:
        return None
    return float(result.x[0]), float(result.x[1])


def properness_probe(sup_s: Sequence[float], mk: Sequence[float], slack: float = PROPERNESS_SLACK,
                     abs_tol: float = 1e-6) -> dict:
    """
    Feasibility of sup|s_t| <= C1 + C2 M_K(K e^{s_t}) over a recorded run.

    The constants fitted to the first half of the history must still cover
    the full history (within `slack`); a run whose C1 keeps growing has no
    uniform constants and is reported as not proper.

    Args:
        sup_s: sup |s_t|_K at each monitor row
        mk: M_K at each monitor row
        slack: Relative growth allowed between half and full history
        abs_tol: Absolute growth allowed

    Returns:
        Dict with C1, C2, proper flag and the half-history constants
    """
    sup_s = np.asarray(sup_s, dtype=float)
    mk = np.asarray(mk, dtype=float)
    if sup_s.size == 0:
        return {"C1": 0.0, "C2": 0.0, "proper": True, "C1_half": 0.0, "rows": 0}

    full = _affine_lp(sup_s, mk)
    half_len = max(1, sup_s.size // 2)
    half = _affine_lp(sup_s[:half_len], mk[:half_len])
    if full is None or half is None:
        logger.info("Affine bound infeasible over the recorded history")
        return {"C1": None, "C2": None, "proper": False, "C1_half": None, "rows": int(sup_s.size)}

    proper = full[0] <= (1.0 + slack) * half[0] + abs_tol
    logger.info(f"Properness probe: C1={full[0]:.4g} (half history {half[0]:.4g}), C2={full[1]:.4g}, proper={proper}")
    return {"C1": full[0], "C2": full[1], "proper": bool(proper), "C1_half": half[0], "rows": int(sup_s.size)}
