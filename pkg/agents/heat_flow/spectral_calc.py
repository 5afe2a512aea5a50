"""
Functional calculus for endomorphism fields that are self-adjoint with
respect to a metric K.

phi_of_s applies a scalar function to the eigenvalues of s in a K-unitary
eigenframe. Phi_of_s weights the eigenframe entries of a second field A by a
function of eigenvalue pairs: entry (i, j) of A, mapping eigenvector j to
eigenvector i, is multiplied by Phi(lambda_j, lambda_i).
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import expit

from .fields import EndoField, FormDegree, MetricField, dagger

logger = logging.getLogger(__name__)

DEGENERATE_GAP = 1e-6
PSI_SERIES_GAP = 1e-4
STEP_TAIL = 1e-9
FORM_FACTORS = {FormDegree.SCALAR: 1.0, FormDegree.DZ: 2.0, FormDegree.DZBAR: 2.0, FormDegree.AREA: 4.0}


@dataclass(frozen=True)
class ScalarFunction:
    """Scalar map with an optional known derivative"""

    func: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    tag: str = ""

    def __call__(self, x):
        return self.func(x)

    def prime(self, x):
        if self.derivative is not None:
            return self.derivative(x)
        x = np.asarray(x, dtype=float)
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        return (self.func(x + h) - self.func(x - h)) / (2.0 * h)


@dataclass(frozen=True)
class BivariateFunction:
    """
    Function of eigenvalue pairs with an explicit near-diagonal rule.

    `near_diagonal(u, v)` is used wherever |u - v| < gap_tol.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    near_diagonal: Callable[[np.ndarray, np.ndarray], np.ndarray]
    tag: str = ""
    gap_tol: float = DEGENERATE_GAP

    def __call__(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        near = np.abs(u - v) < self.gap_tol
        with np.errstate(all="ignore"):
            far_u = np.where(near, u + 1.0, u)
            off = self.func(far_u, v)
            on = self.near_diagonal(u, v)
        return np.where(near, on, off)


EXP = ScalarFunction(np.exp, np.exp, "exp")
LOG = ScalarFunction(np.log, lambda x: 1.0 / x, "log")
SQUARE = ScalarFunction(lambda x: np.asarray(x, dtype=float) ** 2, lambda x: 2.0 * np.asarray(x, dtype=float), "square")


def smoothed_step(center: float, width: float) -> ScalarFunction:
    """
    Logistic step equal to 1 below `center` and 0 above.

    Args:
        center: Midpoint of the ramp
        width: Length of the band where the step moves from 1 - STEP_TAIL to STEP_TAIL;
            at twice that distance from the center it is 0 or 1 to round-off

    Returns:
        ScalarFunction with analytic derivative
    """
    if width <= 0:
        raise ValueError(f"Step width must be positive, got {width}")
    scale = width / (2.0 * np.log((1.0 - STEP_TAIL) / STEP_TAIL))

    def step(x):
        return expit(-(np.asarray(x, dtype=float) - center) / scale)

    def step_prime(x):
        p = step(x)
        return -p * (1.0 - p) / scale

    return ScalarFunction(step, step_prime, f"step({center:.4g},{width:.4g})")


def diff_quotient(phi: ScalarFunction) -> BivariateFunction:
    """Difference quotient (phi(u) - phi(v)) / (u - v), equal to phi' on the diagonal"""

    def quotient(u, v):
        return (phi(u) - phi(v)) / (u - v)

    def diagonal(u, v):
        return phi.prime(0.5 * (u + v))

    return BivariateFunction(quotient, diagonal, f"d{phi.tag}")


def psi(u, v):
    """
    Weight (e^x - x - 1) / x^2 with x = v - u, equal to 1/2 on the diagonal.

    A series is used for |x| < 1e-4 where the closed form cancels.
    """
    x = np.asarray(v, dtype=float) - np.asarray(u, dtype=float)
    near = np.abs(x) < PSI_SERIES_GAP
    with np.errstate(all="ignore"):
        safe = np.where(near, 1.0, x)
        closed = (np.expm1(safe) - safe) / safe ** 2
    series = 0.5 + x / 6.0 + x ** 2 / 24.0 + x ** 3 / 120.0
    result = np.where(near, series, closed)
    return float(result) if result.ndim == 0 else result


def psi_scaled(ell, u, v):
    """ell * psi(ell u, ell v); nondecreasing in ell, tends to 1/(u - v) when u > v"""
    return ell * psi(ell * np.asarray(u, dtype=float), ell * np.asarray(v, dtype=float))


PSI = BivariateFunction(psi, psi, "psi", gap_tol=0.0)


# ----------------------------------------------------------------------
# K-unitary eigenframes
# ----------------------------------------------------------------------

def _values(x):
    if x is None:
        return None
    if isinstance(x, (EndoField, MetricField)):
        return x.values
    return np.asarray(x)


def k_frame(K) -> Tuple[np.ndarray, np.ndarray]:
    """Cholesky factor L with K = L L^dagger, and its inverse"""
    K = _values(K)
    hermitian = 0.5 * (K + dagger(K))
    L = np.linalg.cholesky(hermitian)
    return L, np.linalg.inv(L)


def k_eigh(s, K=None):
    """
    Eigen-decompose s, self-adjoint with respect to K, at every site.

    Returns:
        (eigenvalues ascending, frame E, E^-1) with s = E diag(lambda) E^-1 and
        E^dagger K E = identity
    """
    s = _values(s)
    if K is None:
        hermitian = 0.5 * (s + dagger(s))
        lam, W = np.linalg.eigh(hermitian)
        return lam, W, dagger(W)
    L, L_inv = k_frame(K)
    conjugated = dagger(L) @ s @ dagger(L_inv)
    conjugated = 0.5 * (conjugated + dagger(conjugated))
    lam, W = np.linalg.eigh(conjugated)
    return lam, dagger(L_inv) @ W, dagger(W) @ dagger(L)


def phi_of_s(phi: ScalarFunction, s, K=None) -> EndoField:
    """Apply phi to the eigenvalues of s in a K-unitary eigenframe"""
    lam, frame, frame_inv = k_eigh(s, K)
    values = (frame * phi(lam)[..., None, :]) @ frame_inv
    return EndoField(values)


def Phi_of_s(Phi: BivariateFunction, s, A, K=None) -> EndoField:  # noqa: N802
    """
    Eigenframe-weighted transform of A by a function of eigenvalue pairs.

    Args:
        Phi: Bivariate weight
        s: K-self-adjoint endomorphism field
        A: Endomorphism or endomorphism-valued form field
        K: Metric defining the eigenframe; identity when omitted

    Returns:
        EndoField with the form degree of A
    """
    degree = A.degree if isinstance(A, EndoField) else FormDegree.SCALAR
    lam, frame, frame_inv = k_eigh(s, K)
    weights = Phi(lam[..., None, :], lam[..., :, None])
    transformed = frame @ (weights * (frame_inv @ _values(A) @ frame)) @ frame_inv
    return EndoField(transformed, degree)


def adjoint_values(A: np.ndarray, K=None) -> np.ndarray:
    """K^-1 A^dagger K at every site"""
    if K is None:
        return dagger(A)
    K = _values(K)
    return np.linalg.solve(K, dagger(A) @ K)


def pointwise_norm(A, K=None, degree: Optional[FormDegree] = None) -> np.ndarray:
    """Pointwise |A|_K including the form factor of its degree"""
    if degree is None:
        degree = A.degree if isinstance(A, EndoField) else FormDegree.SCALAR
    values = _values(A)
    factor = FORM_FACTORS[degree]
    if values.ndim == 2:
        return np.sqrt(factor) * np.abs(values)
    product = values @ adjoint_values(values, K)
    squared = np.real(np.trace(product, axis1=-2, axis2=-1))
    return np.sqrt(factor * np.maximum(squared, 0.0))


def lp_norm(pointwise: np.ndarray, p: float, cell_area: float) -> float:
    if np.isinf(p):
        return float(np.max(pointwise))
    return float((np.sum(pointwise ** p) * cell_area) ** (1.0 / p))


def holder_norm_check(s, A, p: float, q: float, K, grid, Phi: Optional[BivariateFunction] = None):
    """
    Evaluate both sides of ||Phi(s)(A)||_p <= C ||s||_r ||A||_q with 1/p = 1/q + 1/r.

    C is the sampled supremum of max|Phi(lambda_j, lambda_i)| / |s|_K over the
    grid, which makes the pointwise bound hold and Holder finishes it.

    Returns:
        (lhs, rhs)
    """
    if not 1 <= p < q:
        raise ValueError(f"holder_norm_check needs 1 <= p < q, got p={p}, q={q}")
    Phi = Phi or diff_quotient(EXP)
    r = 1.0 / (1.0 / p - 1.0 / q)

    transformed = Phi_of_s(Phi, s, A, K)
    lhs = lp_norm(pointwise_norm(transformed, K), p, grid.cell_area)
    a_norm = lp_norm(pointwise_norm(A, K), q, grid.cell_area)
    if a_norm == 0.0:
        return lhs, 0.0

    lam, _, _ = k_eigh(s, K)
    weights = np.abs(Phi(lam[..., None, :], lam[..., :, None]))
    sup_weight = np.max(weights, axis=(-2, -1))
    s_pointwise = pointwise_norm(s, K, FormDegree.SCALAR)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s_pointwise > 0, sup_weight / s_pointwise, np.where(sup_weight > 0, np.inf, 0.0))
    constant = float(np.max(ratio))
    rhs = constant * lp_norm(s_pointwise, r, grid.cell_area) * a_norm
    return lhs, rhs
