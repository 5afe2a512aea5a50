"""
Chern connection, curvature and Chern-Weil degrees.

Metrics are handled in the reference frame of the Gaussian metric K0:
H = K0 h with h an endomorphism field, so

    theta = H^-1 dH - H^-1 a^dagger H = A0 + Theta,
    Theta = h^-1 d0 h - H^-1 a^dagger H,
    F     = F0 - dbar Theta + d0 a + [Theta, a]      (dz ^ dz-bar coefficient)

where A0 = diag(2 pi i d x2) is the connection of K0, F0 = diag(pi d / Im tau)
its curvature and d0 = d/dz + [A0, .] the induced operator on End(E).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .bundle import BundleData, exp_metric, flat_reference_metric, summand_projection
from .fields import EndoField, FormDegree, MetricField, commutator, dagger, trace
from .spectral_calc import EXP, adjoint_values, lp_norm, phi_of_s, pointwise_norm

logger = logging.getLogger(__name__)

IDEMPOTENCY_WARN = 1e-3


@dataclass
class CurvatureReport:
    """Curvature of a metric together with its Hermitian-Einstein deviation"""

    F: EndoField
    lambda_F: EndoField
    lam: complex
    sup_dev: float
    l2_dev: float
    selfadjoint_residual: float

    @property
    def deviation(self) -> EndoField:
        """i Lambda F - i lambda I"""
        rank = self.lambda_F.rank
        return EndoField(1j * self.lambda_F.values - 1j * self.lam * np.eye(rank))


# ----------------------------------------------------------------------
# constants
# ----------------------------------------------------------------------

def lambda_constant(bundle: BundleData) -> complex:
    """Hermitian-Einstein constant -2 pi i mu(E) / volume"""
    return -2j * np.pi * bundle.topological_slope / bundle.grid.volume


def reference_connection(bundle: BundleData) -> np.ndarray:
    grid = bundle.grid
    values = np.zeros(grid.shape + (bundle.rank, bundle.rank), dtype=complex)
    for j, d in enumerate(bundle.twist_degrees):
        values[..., j, j] = 2j * np.pi * d * grid.x2
    return values


def reference_curvature(bundle: BundleData) -> np.ndarray:
    grid = bundle.grid
    values = np.zeros(grid.shape + (bundle.rank, bundle.rank), dtype=complex)
    for j, d in enumerate(bundle.twist_degrees):
        values[..., j, j] = np.pi * d / grid.tau.imag
    return values


# ----------------------------------------------------------------------
# operators on End(E)
# ----------------------------------------------------------------------

def partial_zero(bundle: BundleData, values: np.ndarray) -> np.ndarray:
    """d/dz of an endomorphism coefficient, twisted by the reference connection"""
    grid = bundle.grid
    shift = 2j * np.pi * grid.x2[..., None, None] * bundle.charges
    return grid.dz(values, bundle.charges) + shift * values


def dbar_end(A: EndoField, bundle: BundleData) -> EndoField:
    """del-bar_E A = dA/dz-bar + [a, A] as a (0,1) coefficient"""
    values = bundle.grid.dzbar(A.values, bundle.charges)
    if bundle.is_deformed:
        values = values + commutator(bundle.a.values, A.values)
    return EndoField(values, FormDegree.DZBAR)


def partial_k(A: EndoField, K: MetricField, bundle: BundleData, potential: Optional[np.ndarray] = None) -> EndoField:
    """
    The (1,0) part of the Chern connection of K acting on End(E).

    Applies to endomorphisms and to (0,1) coefficients alike; the caller
    tracks the resulting form degree.
    """
    if potential is None:
        potential = connection_potential(K, bundle)
    values = partial_zero(bundle, A.values) + commutator(potential, A.values)
    degree = FormDegree.DZ if A.degree is FormDegree.SCALAR else FormDegree.AREA
    return EndoField(values, degree)


def partial_k_adjoint(beta: EndoField, bundle: BundleData) -> EndoField:
    """Formal adjoint of partial_K on (1,0) fields: -2 (dbar beta + [a, beta])"""
    values = bundle.grid.dzbar(beta.values, bundle.charges)
    if bundle.is_deformed:
        values = values + commutator(bundle.a.values, beta.values)
    return EndoField(-2.0 * values)


def laplacian_partial(s: EndoField, K: MetricField, bundle: BundleData) -> EndoField:
    """partial_K^* partial_K s"""
    return partial_k_adjoint(partial_k(s, K, bundle), bundle)


def laplacian_dbar(s: EndoField, K: MetricField, bundle: BundleData) -> EndoField:
    """dbar_E^* dbar_E s = -2 partial_K (dbar_E s)"""
    inner = dbar_end(s, bundle)
    outer = partial_k(inner, K, bundle)
    return EndoField(-2.0 * outer.values)


# ----------------------------------------------------------------------
# connection and curvature
# ----------------------------------------------------------------------

def connection_potential(H: MetricField, bundle: BundleData) -> np.ndarray:
    """Theta = theta - A0, an honest endomorphism-valued (1,0) coefficient"""
    K0 = flat_reference_metric(bundle)
    h = np.linalg.solve(K0.values, H.values)
    theta = np.linalg.solve(h, partial_zero(bundle, h))
    if bundle.is_deformed:
        theta = theta - np.linalg.solve(H.values, dagger(bundle.a.values) @ H.values)
    return theta


def chern_connection(H: MetricField, bundle: BundleData) -> EndoField:
    """Full (1,0) connection coefficient theta in the holomorphic frame"""
    return EndoField(reference_connection(bundle) + connection_potential(H, bundle), FormDegree.DZ)


def curvature_form(H: MetricField, bundle: BundleData) -> EndoField:
    grid = bundle.grid
    potential = connection_potential(H, bundle)
    F = reference_curvature(bundle) - grid.dzbar(potential, bundle.charges)
    if bundle.is_deformed:
        a = bundle.a.values
        F = F + partial_zero(bundle, a) + commutator(potential, a)
    return EndoField(F, FormDegree.AREA)


def hermitian_einstein_deviation(lambda_F: EndoField, lam: complex, H: MetricField, grid) -> tuple:
    """(sup, L2) norms of i Lambda F - i lambda I measured with H"""
    rank = lambda_F.rank
    E = 1j * lambda_F.values - 1j * lam * np.eye(rank)
    # E is H-self-adjoint, so |E|_H^2 = Re Tr(E^2)
    pointwise = np.sqrt(np.maximum(np.real(trace(E @ E)), 0.0))
    return float(np.max(pointwise)), lp_norm(pointwise, 2, grid.cell_area)


def curvature(H: MetricField, bundle: BundleData, lam: Optional[complex] = None) -> CurvatureReport:
    """
    Curvature of the Chern connection of H.

    Args:
        H: Metric field
        bundle: Bundle data
        lam: Hermitian-Einstein constant; computed from the bundle when omitted

    Returns:
        CurvatureReport
    """
    grid = bundle.grid
    lam = lambda_constant(bundle) if lam is None else lam
    F = curvature_form(H, bundle)
    lambda_F = grid.lambda_contract(F)
    i_lambda_F = 1j * lambda_F.values
    residual = float(np.max(np.abs(i_lambda_F - adjoint_values(i_lambda_F, H.values))))
    sup_dev, l2_dev = hermitian_einstein_deviation(lambda_F, lam, H, grid)
    return CurvatureReport(F, lambda_F, lam, sup_dev, l2_dev, residual)


# ----------------------------------------------------------------------
# degrees
# ----------------------------------------------------------------------

def degree(bundle: BundleData, H: Optional[MetricField] = None) -> float:
    """Chern-Weil degree (i / 2 pi) * integral of Tr(Lambda F_H)"""
    H = H if H is not None else flat_reference_metric(bundle)
    lambda_F = bundle.grid.lambda_contract(curvature_form(H, bundle))
    value = 1j / (2.0 * np.pi) * bundle.grid.integrate(trace(lambda_F.values))
    if abs(value.imag) > 1e-8:
        logger.warning(f"Chern-Weil degree has imaginary part {value.imag:.3e}")
    return float(value.real)


def slope(bundle: BundleData, H: Optional[MetricField] = None) -> float:
    return degree(bundle, H) / bundle.rank


def projection_degree(Pi: EndoField, K: MetricField, bundle: BundleData) -> float:
    """
    Chern-Weil degree of a weakly holomorphic projection:
    (i / 2 pi) * int Tr(Pi Lambda F_K) - (1 / 2 pi) * int |dbar Pi|_K^2.
    """
    grid = bundle.grid
    idempotency = float(np.max(np.abs(Pi.values @ Pi.values - Pi.values)))
    selfadjointness = float(np.max(np.abs(Pi.values - adjoint_values(Pi.values, K.values))))
    if max(idempotency, selfadjointness) > IDEMPOTENCY_WARN:
        logger.warning(f"Projection residuals idempotency={idempotency:.2e}, "
                       f"self-adjointness={selfadjointness:.2e}; degree is unreliable")

    lambda_F = grid.lambda_contract(curvature_form(K, bundle))
    first = 1j / (2.0 * np.pi) * grid.integrate(trace(Pi.values @ lambda_F.values))
    dbar_pi = dbar_end(Pi, bundle)
    second = np.sum(pointwise_norm(dbar_pi, K.values) ** 2) * grid.cell_area / (2.0 * np.pi)
    return float(first.real - second)


def summand_degrees(bundle: BundleData, K: Optional[MetricField] = None) -> List[float]:
    """Degrees of the coordinate line factors, each through its projection"""
    K = K if K is not None else flat_reference_metric(bundle)
    return [projection_degree(summand_projection(bundle, K, [j]), K, bundle) for j in range(bundle.rank)]


# ----------------------------------------------------------------------
# relations between curvatures of K and K e^s
# ----------------------------------------------------------------------

def _relative_norm(diff: np.ndarray, ref: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(ref))), 1.0)
    return float(np.max(np.abs(diff))) / scale


def curvature_relations(s: EndoField, K: MetricField, bundle: BundleData) -> Dict[str, float]:
    """
    Residuals of the identities linking F_K and F_H for H = K e^s.

    With B = h^-1 partial_K h, h = e^s and the pointwise pairing
    <A, s> = Re Tr(A s^{*K}):

        adjoint:      partial_K s = (dbar_E s)^{*K}
        relative:     i Lambda (F_H - F_K) = partial_K^* B
        commutator:   Laplacian_dbar s - Laplacian_partial s = -[i Lambda F_K, s]
        pairing:      int <i Lambda (F_H - F_K), s> = <B, partial_K s>_{L2}
        bochner:      Laplacian |s|^2 = 4 <Laplacian_partial s, s> - 2 |d_K s|^2

    Returns:
        Dict of relative residuals keyed by identity name
    """
    grid = bundle.grid
    H = exp_metric(K, s)
    potential = connection_potential(K, bundle)

    dbar_s = dbar_end(s, bundle)
    partial_s = partial_k(s, K, bundle, potential)
    adjoint_residual = _relative_norm(partial_s.values - adjoint_values(dbar_s.values, K.values), partial_s.values)

    h = phi_of_s(EXP, s, K)
    B = EndoField(np.linalg.solve(h.values, partial_k(h, K, bundle, potential).values), FormDegree.DZ)
    lambda_F_K = grid.lambda_contract(curvature_form(K, bundle)).values
    lambda_F_H = grid.lambda_contract(curvature_form(H, bundle)).values
    relative = 1j * (lambda_F_H - lambda_F_K)
    relative_residual = _relative_norm(relative - partial_k_adjoint(B, bundle).values, relative)

    lap_partial = laplacian_partial(s, K, bundle).values
    lap_dbar = laplacian_dbar(s, K, bundle).values
    commutator_residual = _relative_norm(lap_dbar - lap_partial + commutator(1j * lambda_F_K, s.values), lap_partial)

    lhs = grid.integrate(np.real(trace(relative @ s.values)))
    rhs = 2.0 * grid.integrate(np.real(trace(B.values @ adjoint_values(partial_s.values, K.values))))
    pairing_residual = abs(lhs - rhs) / max(abs(lhs), 1.0)

    s_squared = np.real(trace(s.values @ s.values))
    lap_norm = grid.laplacian(s_squared).real
    d_k_sq = pointwise_norm(partial_s, K.values) ** 2 + pointwise_norm(dbar_s, K.values) ** 2
    bochner = 4.0 * np.real(trace(lap_partial @ s.values)) - 2.0 * d_k_sq
    bochner_residual = _relative_norm(lap_norm - bochner, lap_norm)

    return {
        "adjoint": adjoint_residual,
        "relative": relative_residual,
        "commutator": commutator_residual,
        "pairing": float(pairing_residual),
        "bochner": bochner_residual,
    }
