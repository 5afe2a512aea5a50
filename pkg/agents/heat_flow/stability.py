"""
Destabilizing subbundles from the blow-up direction of a non-proper flow.

The late-time s_t is normalized to u = s_t / ell, the eigenvalues of u are
separated into groups nu_1 < ... < nu_m, and each group boundary yields a
projection pi_alpha = p_alpha(u) through a smoothed step. The combination

    W = nu_m deg(E) - sum (nu_{alpha+1} - nu_alpha) deg(pi_alpha)

is nonpositive for a genuine blow-up direction, which forces some pi_alpha
to have slope at least mu(E).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bundle import BundleData, relate_metrics
from .chern import dbar_end, projection_degree
from .chern import degree as chern_degree
from .fields import EndoField, MetricField, trace
from .flow import CONVERGED, FlowTrace
from .spectral_calc import (BivariateFunction, Phi_of_s, adjoint_values, diff_quotient, k_eigh, lp_norm,
                            phi_of_s, pointwise_norm, smoothed_step)

logger = logging.getLogger(__name__)

DEFAULT_GAP_TOL = 0.05
DEFAULT_ELL_THRESHOLD = 10.0
CONSTANCY_FRACTION = 0.05
W_TOLERANCE = 1e-3
FOUND = "found"
NO_SEPARATION = "no separation"
FLOW_CONVERGED = "flow converged"
NO_BLOW_UP = "no blow-up"
NOT_DESTABILIZING = "no destabilizing projection"


class StabilityError(ValueError):
    """Invalid input to the destabilization procedure"""


@dataclass
class Flag:
    """Eigenvalue groups of u and the nested projections between them"""

    eigenvalues: List[float]
    dispersion: List[float]
    projections: List[EndoField]
    ranks: List[int]
    residuals: List[dict]
    merged: List[List[int]]
    trace_integral: float
    constant_spectrum: bool

    @property
    def separated(self) -> bool:
        return len(self.projections) > 0


@dataclass
class ProbeReport:
    status: str
    found: bool = False
    index: Optional[int] = None
    deg_pi: Optional[float] = None
    mu_pi: Optional[float] = None
    mu_E: Optional[float] = None
    W: Optional[float] = None
    ell: Optional[float] = None
    degrees: List[float] = field(default_factory=list)
    eigenvalues: List[float] = field(default_factory=list)
    weak_holo: Optional[dict] = None
    telescoping: Optional[float] = None
    projection: Optional[EndoField] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "found": self.found,
            "index": self.index,
            "deg_pi": self.deg_pi,
            "mu_pi": self.mu_pi,
            "mu_E": self.mu_E,
            "W": self.W,
            "ell": self.ell,
            "degrees": self.degrees,
            "eigenvalues": self.eigenvalues,
            "weak_holo": self.weak_holo,
            "telescoping": self.telescoping,
        }


def normalize(s: EndoField, K: MetricField, grid) -> tuple:
    """
    Scale s to unit || |s|^2 ||_{L2}.

    Returns:
        (u, ell) with ell = (int |s|^4)^{1/4}

    Raises:
        StabilityError: If s vanishes
    """
    ell = lp_norm(pointwise_norm(s, K.values), 4, grid.cell_area)
    if ell == 0.0:
        raise StabilityError("Cannot normalize the zero endomorphism")
    return s.scale(1.0 / ell), ell


def _group_eigenvalues(means: np.ndarray, gap_tol: float) -> List[List[int]]:
    groups = [[0]]
    for idx in range(1, means.size):
        if means[idx] - means[idx - 1] < gap_tol:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    return groups


def eigen_flag(u: EndoField, K: MetricField, bundle: BundleData, gap_tol: float = DEFAULT_GAP_TOL) -> Flag:
    """
    Site-averaged spectrum of u and the projections separating it.

    Eigenvalues closer than gap_tol are merged into one group; r eigenvalues
    in m groups give m - 1 projections, ordered by increasing rank.
    """
    grid = bundle.grid
    lam, _, _ = k_eigh(u, K)
    means = lam.reshape(-1, lam.shape[-1]).mean(axis=0)
    spread = lam.reshape(-1, lam.shape[-1]).std(axis=0)
    groups = _group_eigenvalues(means, gap_tol)
    merged = [g for g in groups if len(g) > 1]
    if merged:
        logger.info(f"Merged eigenvalue groups {merged} (gap below {gap_tol})")

    group_values = [float(np.mean(means[g])) for g in groups]
    group_spread = [float(np.max(spread[g])) for g in groups]
    projections, ranks, residuals = [], [], []
    for alpha in range(len(groups) - 1):
        lower, upper = group_values[alpha], group_values[alpha + 1]
        gap = upper - lower
        step = smoothed_step(0.5 * (lower + upper), 0.25 * gap)
        pi = phi_of_s(step, u, K)
        projections.append(pi)
        ranks.append(sum(len(g) for g in groups[:alpha + 1]))
        residuals.append({
            "idempotency": float(np.max(np.abs(pi.values @ pi.values - pi.values))),
            "self_adjointness": float(np.max(np.abs(pi.values - adjoint_values(pi.values, K.values)))),
            "weak_holomorphy": weak_holo_residual(pi, K, bundle)["residual"],
        })

    gaps = np.diff(group_values)
    constant = bool(gaps.size == 0 or max(group_spread) < CONSTANCY_FRACTION * float(np.min(gaps)))
    tr_u = float(np.real(grid.integrate(trace(u.values))))
    return Flag(group_values, group_spread, projections, ranks, residuals, merged, tr_u, constant)


def _orthogonal_defect(step) -> BivariateFunction:
    """Pair weight (1 - p(v)) dp(u, v) representing (I - p(u)) dbar p(u)"""
    dp = diff_quotient(step)
    return BivariateFunction(lambda u, v: (1.0 - step(v)) * dp.func(u, v),
                             lambda u, v: (1.0 - step(v)) * dp.near_diagonal(u, v),
                             f"defect({step.tag})")


def weak_holo_residual(pi: EndoField, K: MetricField, bundle: BundleData, u: Optional[EndoField] = None,
                       step=None) -> dict:
    """
    L2 norm of (I - pi) dbar_E pi.

    When the generating u and step are given, also evaluates the same
    quantity as a pair-weighted transform of dbar_E u and reports the
    agreement of the two expressions.
    """
    grid = bundle.grid
    eye = np.eye(bundle.rank)
    direct = (eye - pi.values) @ dbar_end(pi, bundle).values
    residual = lp_norm(pointwise_norm(direct, K.values, dbar_end(pi, bundle).degree), 2, grid.cell_area)
    result = {"residual": residual}
    if u is not None and step is not None:
        transformed = Phi_of_s(_orthogonal_defect(step), u, dbar_end(u, bundle), K)
        difference = pointwise_norm(transformed.values - direct, K.values, transformed.degree)
        result["transform"] = lp_norm(pointwise_norm(transformed, K.values), 2, grid.cell_area)
        result["agreement"] = lp_norm(difference, 2, grid.cell_area)
    return result


def telescoping_residual(u: EndoField, flag: Flag, K: MetricField, grid) -> float:
    """Relative L2 distance between u and nu_m I - sum (nu_{a+1} - nu_a) pi_a"""
    rank = u.rank
    rebuilt = flag.eigenvalues[-1] * np.eye(rank) + np.zeros_like(u.values)
    for alpha, pi in enumerate(flag.projections):
        rebuilt = rebuilt - (flag.eigenvalues[alpha + 1] - flag.eigenvalues[alpha]) * pi.values
    diff = lp_norm(pointwise_norm(u.values - rebuilt, K.values), 2, grid.cell_area)
    return diff / max(lp_norm(pointwise_norm(u, K.values), 2, grid.cell_area), 1e-300)


def telescoping_degree(flag: Flag, degrees: List[float], total_degree: float) -> float:
    """W = nu_m deg(E) - sum (nu_{a+1} - nu_a) deg(pi_a)"""
    W = flag.eigenvalues[-1] * total_degree
    for alpha, deg in enumerate(degrees):
        W -= (flag.eigenvalues[alpha + 1] - flag.eigenvalues[alpha]) * deg
    return float(W)


def destabilize_probe(bundle: BundleData, K: MetricField, trace_in: Optional[FlowTrace] = None,
                      s: Optional[EndoField] = None, ell_threshold: float = DEFAULT_ELL_THRESHOLD,
                      gap_tol: float = DEFAULT_GAP_TOL) -> ProbeReport:
    """
    Extract a destabilizing projection from a run with growing s_t.

    Args:
        bundle: Bundle data
        K: Background metric of the run
        trace_in: Recorded run; the latest snapshot supplies s
        s: Blow-up direction supplied directly instead of a run
        ell_threshold: Minimum ell for the late iterate to count as a blow-up
        gap_tol: Eigenvalue groups closer than this are merged

    Returns:
        ProbeReport
    """
    grid = bundle.grid
    mu_E = bundle.topological_slope
    if s is None:
        if trace_in is None or not trace_in.snapshots:
            raise StabilityError("destabilize_probe needs a recorded run or an explicit s")
        if trace_in.status == CONVERGED:
            logger.info("Flow converged; no blow-up direction to probe")
            return ProbeReport(FLOW_CONVERGED, mu_E=mu_E)
        _, H_last = trace_in.snapshots[-1]
        s = relate_metrics(H_last, K)
        u, ell = normalize(s, K, grid)
        if ell < ell_threshold:
            logger.info(f"Late iterate has ell={ell:.3g} < {ell_threshold}; inconclusive")
            return ProbeReport(NO_BLOW_UP, mu_E=mu_E, ell=ell)
    else:
        u, ell = normalize(s, K, grid)

    flag = eigen_flag(u, K, bundle, gap_tol)
    if not flag.separated:
        logger.info("Blow-up direction has a single eigenvalue group")
        return ProbeReport(NO_SEPARATION, mu_E=mu_E, ell=ell, eigenvalues=flag.eigenvalues)

    degrees = [projection_degree(pi, K, bundle) for pi in flag.projections]
    slopes = [deg / rank for deg, rank in zip(degrees, flag.ranks)]
    total_degree = chern_degree(bundle, K)
    W = telescoping_degree(flag, degrees, total_degree)
    tolerance = W_TOLERANCE * max(1.0, abs(total_degree))
    if W > tolerance:
        logger.warning(f"Telescoping degree W={W:.4g} exceeds tolerance {tolerance:.1e}")

    best = int(np.argmax(slopes))
    pi = flag.projections[best]
    lower, upper = flag.eigenvalues[best], flag.eigenvalues[best + 1]
    step = smoothed_step(0.5 * (lower + upper), 0.25 * (upper - lower))
    weak = weak_holo_residual(pi, K, bundle, u, step)
    found = slopes[best] >= mu_E - tolerance
    logger.info(f"Destabilization probe: mu_pi={slopes[best]:.4g}, mu_E={mu_E:.4g}, W={W:.4g}, found={found}")
    return ProbeReport(
        status=FOUND if found else NOT_DESTABILIZING,
        found=bool(found),
        index=best,
        deg_pi=degrees[best],
        mu_pi=slopes[best],
        mu_E=mu_E,
        W=W,
        ell=ell,
        degrees=degrees,
        eigenvalues=flag.eigenvalues,
        weak_holo=weak,
        telescoping=telescoping_residual(u, flag, K, grid),
        projection=pi,
    )
