"""
Discretized flat torus C/(Z + tau Z) with an optional cyclic orbifold action.

Coordinates are z = x1 + tau * x2 with (x1, x2) in [0, 1)^2 sampled on an
n1 x n2 grid. The Kahler form is omega = (i/2) dz ^ dz-bar, so the area of
the torus is Im(tau), |dz|^2 = |dz-bar|^2 = 2 and Lambda(dz ^ dz-bar) = -2i.

Derivatives are Fourier multipliers along each axis. Fields of nonzero
charge q are quasi-periodic in x2 with the theta factor of automorphy
exp(-2 pi i q z - pi i q tau); they are differentiated after dividing out a
Gaussian gauge that makes them periodic along that axis.
"""

import logging
from typing import Optional, Union

import numpy as np

from .fields import EndoField, FormDegree, FormField

logger = logging.getLogger(__name__)

SCHEMES = ("spectral", "fd2", "fd4")
ORBIFOLD_ORDERS = (1, 2, 4)
FORM_NORM_SQ = 2.0
MIN_SITES = 8
GREEN_MEAN_TOL = 1e-8


class GeometryError(ValueError):
    """Invalid grid parameters or a form-degree mismatch"""


def derivative_symbol(n: int, scheme: str) -> np.ndarray:
    """
    Fourier symbol of d/dx on n periodic sites of spacing 1/n.

    Args:
        n: Number of sites
        scheme: One of spectral, fd2, fd4

    Returns:
        Complex array in numpy FFT ordering
    """
    m = np.fft.fftfreq(n, d=1.0 / n)
    theta = 2.0 * np.pi * m / n
    if scheme == "spectral":
        symbol = 2j * np.pi * m
        if n % 2 == 0:
            symbol[n // 2] = 0.0
        return symbol
    if scheme == "fd2":
        return 1j * n * np.sin(theta)
    if scheme == "fd4":
        return 1j * n * (8.0 * np.sin(theta) - np.sin(2.0 * theta)) / 6.0
    raise GeometryError(f"Unknown derivative scheme: {scheme}")


class OrbifoldGrid:
    """
    Flat torus grid with derivative, contraction and integration operators.

    Grids are read-only after construction and safe to share between threads.
    """

    def __init__(self, n1: int, n2: int, tau: complex, k: int = 1, scheme: str = "spectral"):
        tau = complex(tau)
        if tau.imag <= 0:
            raise GeometryError(f"tau must have positive imaginary part, got {tau}")
        if n1 < MIN_SITES or n2 < MIN_SITES:
            raise GeometryError(f"Grid sizes must be at least {MIN_SITES}, got {n1}x{n2}")
        if k not in ORBIFOLD_ORDERS:
            raise GeometryError(f"Orbifold order must be one of {ORBIFOLD_ORDERS}, got {k}")
        if k == 2 and (n1 % 2 or n2 % 2):
            raise GeometryError("Order-2 action needs even grid sizes")
        if k == 4 and (n1 != n2 or abs(tau - 1j) > 1e-14):
            raise GeometryError("Order-4 action needs a square grid and tau = i")
        if scheme not in SCHEMES:
            raise GeometryError(f"Unknown derivative scheme: {scheme}")

        self.n1 = int(n1)
        self.n2 = int(n2)
        self.tau = tau
        self.k = int(k)
        self.scheme = scheme
        self.shape = (self.n1, self.n2)
        self.volume = tau.imag
        self.cell_area = self.volume / (self.n1 * self.n2)

        x1 = np.arange(self.n1) / self.n1
        x2 = np.arange(self.n2) / self.n2
        self.x1, self.x2 = np.meshgrid(x1, x2, indexing="ij")
        self.z = self.x1 + tau * self.x2

        self._symbol1 = derivative_symbol(self.n1, scheme)
        self._symbol2 = derivative_symbol(self.n2, scheme)
        self._freq1 = np.fft.fftfreq(self.n1, d=1.0 / self.n1)
        self._freq2 = np.fft.fftfreq(self.n2, d=1.0 / self.n2)

        s1 = self._symbol1[:, None]
        s2 = self._symbol2[None, :]
        dzbar = (tau * s1 - s2) / (2j * tau.imag)
        dz = (s2 - np.conj(tau) * s1) / (2j * tau.imag)
        self._laplacian_symbol = np.real(-4.0 * dz * dzbar)

        m1 = self._freq1[:, None]
        m2 = self._freq2[None, :]
        self._flow_rate = np.pi ** 2 * np.abs(m1 * tau - m2) ** 2 / tau.imag ** 2

        logger.debug(f"Built {self.n1}x{self.n2} grid, tau={tau}, k={k}, scheme={scheme}")

    def __repr__(self) -> str:
        return f"OrbifoldGrid(n1={self.n1}, n2={self.n2}, tau={self.tau}, k={self.k}, scheme={self.scheme!r})"

    # ------------------------------------------------------------------
    # derivatives
    # ------------------------------------------------------------------

    def _multiply_along(self, values: np.ndarray, axis: int, symbol: np.ndarray) -> np.ndarray:
        shape = [1] * values.ndim
        shape[axis] = symbol.shape[0]
        spectrum = np.fft.fft(values, axis=axis)
        return np.fft.ifft(spectrum * symbol.reshape(shape), axis=axis)

    def charge_gauge(self, charge) -> np.ndarray:
        """Gaussian gauge g_q making a charge-q field periodic in x2"""
        q = np.asarray(charge)
        return np.exp(-1j * np.pi * q * self.tau * self.x2 ** 2 - 2j * np.pi * q * self.x1 * self.x2)

    def partial_x1(self, values: np.ndarray) -> np.ndarray:
        return self._multiply_along(values, 0, self._symbol1)

    def partial_x2(self, values: np.ndarray, charges=None) -> np.ndarray:
        """
        d/dx2 of a field whose entries carry integer charges.

        Args:
            values: Array of shape (n1, n2) or (n1, n2, r, r)
            charges: None, an integer, or an r x r integer matrix

        Returns:
            Derivative array of the same shape
        """
        if charges is None or not np.any(charges):
            return self._multiply_along(values, 1, self._symbol2)

        if values.ndim == 2:
            q = int(charges)
            gauge = self.charge_gauge(q)
            periodic = values / gauge
            shift = -2j * np.pi * q * (self.tau * self.x2 + self.x1)
            return gauge * (self._multiply_along(periodic, 1, self._symbol2) + shift * periodic)

        q_matrix = np.broadcast_to(np.asarray(charges), values.shape[2:])
        out = np.empty(values.shape, dtype=complex)
        for q in np.unique(q_matrix):
            mask = q_matrix == q
            block = values[:, :, mask]
            if q == 0:
                out[:, :, mask] = self._multiply_along(block, 1, self._symbol2)
                continue
            gauge = self.charge_gauge(q)[..., None]
            periodic = block / gauge
            shift = (-2j * np.pi * q * (self.tau * self.x2 + self.x1))[..., None]
            out[:, :, mask] = gauge * (self._multiply_along(periodic, 1, self._symbol2) + shift * periodic)
        return out

    def _dzbar(self, values: np.ndarray, charges=None) -> np.ndarray:
        d1 = self.partial_x1(values)
        d2 = self.partial_x2(values, charges)
        return (self.tau * d1 - d2) / (2j * self.tau.imag)

    def _dz(self, values: np.ndarray, charges=None) -> np.ndarray:
        d1 = self.partial_x1(values)
        d2 = self.partial_x2(values, charges)
        return (d2 - np.conj(self.tau) * d1) / (2j * self.tau.imag)

    def _reflection_averaged(self, charges) -> bool:
        return self.k == 2 and charges is not None and bool(np.any(charges))

    def _charge_shift(self, values: np.ndarray, charges) -> np.ndarray:
        """2 pi i q x2, the reference connection term that makes d/dz covariant"""
        if values.ndim == 2:
            return 2j * np.pi * int(charges) * self.x2
        return 2j * np.pi * self.x2[..., None, None] * np.asarray(charges)

    def dzbar(self, values: np.ndarray, charges=None) -> np.ndarray:
        """
        Coefficient-level d/dz-bar.

        On order-2 grids charged entries use the average of the gauge
        derivative and its reflection, which anticommutes exactly with
        `rotate`.
        """
        if not self._reflection_averaged(charges):
            return self._dzbar(values, charges)
        reflected = self.rotate(self._dzbar(self.rotate(values, charges), charges), charges)
        return 0.5 * (self._dzbar(values, charges) - reflected)

    def dz(self, values: np.ndarray, charges=None) -> np.ndarray:
        """
        Coefficient-level d/dz.

        On order-2 grids the covariant combination d/dz + 2 pi i q x2 is
        averaged with its reflection, as in `dzbar`.
        """
        if not self._reflection_averaged(charges):
            return self._dz(values, charges)
        shift = self._charge_shift(values, charges)

        def covariant(v):
            return self._dz(v, charges) + shift * v

        reflected = self.rotate(covariant(self.rotate(values, charges)), charges)
        return 0.5 * (covariant(values) - reflected) - shift * values

    # ------------------------------------------------------------------
    # form-level operators
    # ------------------------------------------------------------------

    def apply_dbar(self, f: Union[FormField, EndoField, np.ndarray], charges=None):
        """
        Apply the del-bar operator.

        A 0-form maps to the (0,1) coefficient d f / d z-bar. A (1,0) form
        b dz maps to -(d b / d z-bar) dz ^ dz-bar.
        """
        values, degree, wrap = _unpack(f)
        if degree is FormDegree.SCALAR:
            return wrap(self.dzbar(values, charges), FormDegree.DZBAR)
        if degree is FormDegree.DZ:
            return wrap(-self.dzbar(values, charges), FormDegree.AREA)
        raise GeometryError(f"del-bar is not defined on degree {degree.value} here")

    def apply_partial(self, f: Union[FormField, EndoField, np.ndarray], charges=None):
        """
        Apply the del operator.

        A 0-form maps to the (1,0) coefficient d f / d z. A (0,1) form
        c dz-bar maps to (d c / d z) dz ^ dz-bar.
        """
        values, degree, wrap = _unpack(f)
        if degree is FormDegree.SCALAR:
            return wrap(self.dz(values, charges), FormDegree.DZ)
        if degree is FormDegree.DZBAR:
            return wrap(self.dz(values, charges), FormDegree.AREA)
        raise GeometryError(f"del is not defined on degree {degree.value} here")

    def lambda_contract(self, F: Union[FormField, EndoField]):
        """Contract a (1,1) form with the Kahler form: Lambda(c dz^dz-bar) = -2i c"""
        values, degree, wrap = _unpack(F)
        if degree is not FormDegree.AREA:
            raise GeometryError(f"Lambda expects a (1,1) form, got degree {degree.value}")
        return wrap(-2j * values, FormDegree.SCALAR)

    def integrate(self, f) -> complex:
        """
        Quadrature against the area form.

        Trailing axes beyond the grid are kept, so an endomorphism field
        integrates to an r x r matrix.
        """
        values, degree, _ = _unpack(f)
        if degree is not FormDegree.SCALAR:
            raise GeometryError(f"integrate expects a 0-form, got degree {degree.value}")
        total = np.sum(values, axis=(0, 1)) * self.cell_area
        if np.ndim(total) == 0:
            return complex(total)
        return total

    def mean(self, values: np.ndarray):
        return self.integrate(values) / self.volume

    # ------------------------------------------------------------------
    # Laplacian, Green operator and heat kernel
    # ------------------------------------------------------------------

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """Nonnegative Laplacian -4 d/dz d/dz-bar on periodic fields"""
        return -4.0 * self.dz(self.dzbar(values))

    def green_solve(self, rhs: Union[FormField, np.ndarray]) -> np.ndarray:
        """
        Solve Laplacian(u) = rhs with zero mean.

        Content of rhs on modes where the discrete symbol vanishes (the mean,
        and Nyquist modes under the spectral scheme) is projected out; a
        nonzero mean is logged.
        """
        values, _, _ = _unpack(rhs)
        mean = self.mean(values)
        if np.max(np.abs(mean)) > GREEN_MEAN_TOL:
            logger.warning(f"green_solve removed a nonzero mean {mean}")
        spectrum = np.fft.fft2(values, axes=(0, 1))
        symbol = self._laplacian_symbol
        symbol = symbol.reshape(symbol.shape + (1,) * (values.ndim - 2))
        resolved = symbol > 1e-12 * np.max(symbol)
        solution = np.where(resolved, spectrum / np.where(resolved, symbol, 1.0), 0.0)
        u = np.fft.ifft2(solution, axes=(0, 1))
        if np.isrealobj(values):
            u = u.real
        return u

    def flow_rate_symbol(self) -> np.ndarray:
        """Decay rates pi^2 |m1 tau - m2|^2 / Im(tau)^2 of the linear heat flow"""
        return self._flow_rate.copy()

    def stiffness(self) -> float:
        """Largest linear decay rate resolvable on the grid"""
        return float(np.max(self._flow_rate))

    def heat_kernel_sup(self, t: float) -> float:
        """
        Supremum of the heat kernel of the flow's linear part at time t.

        Args:
            t: Positive time

        Returns:
            (1/volume) * sum over grid modes of exp(-rate * t)
        """
        if t <= 0:
            raise GeometryError(f"heat_kernel_sup needs t > 0, got {t}")
        return float(np.sum(np.exp(-self._flow_rate * t)) / self.volume)

    # ------------------------------------------------------------------
    # cyclic action
    # ------------------------------------------------------------------

    def rotate(self, values: np.ndarray, charges=None) -> np.ndarray:
        """
        Pull back by the generator of the cyclic action: returns f(zeta * x).

        Charged entries wrapping across the tau-seam pick up the theta
        factor of automorphy.
        """
        if self.k == 1:
            return values.copy()
        if self.k == 4:
            if charges is not None and np.any(charges):
                raise GeometryError("Order-4 action is only defined for uncharged fields")
            swapped = np.swapaxes(values, 0, 1)
            return np.roll(swapped[:, ::-1], 1, axis=1)

        flipped = np.roll(values[::-1, ::-1], 1, axis=(0, 1))
        if charges is None or not np.any(charges):
            return flipped
        q = np.asarray(charges)
        wrapped = (np.arange(self.n2) > 0)[None, :]
        if values.ndim == 2:
            factor = np.exp(-2j * np.pi * q * self.z + 1j * np.pi * q * self.tau)
            return flipped * np.where(wrapped, factor, 1.0)
        z = self.z[..., None, None]
        factor = np.exp(-2j * np.pi * q * z + 1j * np.pi * q * self.tau)
        return flipped * np.where(wrapped[..., None, None], factor, 1.0)

    def group_project(self, f, weight: Optional[int] = None, isotropy: Optional[np.ndarray] = None,
                      charges=None):
        """
        Average a field over the cyclic orbit.

        Fixed points satisfy f(zeta x) = zeta^w rho f(x) rho^-1, where w is the
        form weight and rho the isotropy acting on endomorphism values.

        Args:
            f: FormField, EndoField or raw array
            weight: Rotation weight; taken from the form degree when omitted
            isotropy: r x r unitary of order k acting on endomorphism values
            charges: Integer charges of the entries

        Returns:
            Projected field of the same kind as f
        """
        values, degree, wrap = _unpack(f)
        if weight is None:
            weight = degree.weight
        if self.k == 1:
            return wrap(values.copy(), degree)

        zeta = np.exp(2j * np.pi / self.k)
        total = np.zeros(values.shape, dtype=complex)
        current = values
        for m in range(self.k):
            term = current
            if isotropy is not None and values.ndim == 4:
                rho_m = np.linalg.matrix_power(isotropy, m)
                term = np.linalg.inv(rho_m) @ current @ rho_m
            total += zeta ** (-m * weight) * term
            current = self.rotate(current, charges)
        return wrap(total / self.k, degree)

    def equivariance_residual(self, f, weight: Optional[int] = None, isotropy: Optional[np.ndarray] = None,
                              charges=None) -> float:
        values, degree, _ = _unpack(f)
        if self.k == 1:
            return 0.0
        projected, _, _ = _unpack(self.group_project(f, weight, isotropy, charges))
        return float(np.max(np.abs(projected - values)))


def build_grid(n1: int, n2: int, tau: complex, k: int = 1, scheme: str = "spectral") -> OrbifoldGrid:
    """Construct an OrbifoldGrid, validating the orbifold constraints"""
    return OrbifoldGrid(n1, n2, tau, k, scheme)


def _unpack(f):
    """Split a field into (values, degree, rewrap) so operators accept arrays too"""
    if isinstance(f, EndoField):
        return f.values, f.degree, lambda v, d: EndoField(v, d)
    if isinstance(f, FormField):
        return f.values, f.degree, lambda v, d: FormField(v, d)
    values = np.asarray(f)
    return values, FormDegree.SCALAR, lambda v, d: FormField(v, d) if d is not FormDegree.SCALAR else v
