"""
Holomorphic bundles over the torus grid and their metric fields.

A bundle is a direct sum of theta line bundles L_d, glued along the
x1-seam by the identity and along the tau-seam by the factor of automorphy
e_d(z) = exp(-2 pi i d z - pi i d tau). Entry (i, j) of an endomorphism
field then has charge d_i - d_j. The holomorphic structure is
del-bar + a, with `a` assembled from harmonic representatives of the
requested deformation classes.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .fields import EndoField, FormDegree, MetricField, dagger, trace
from .geometry import OrbifoldGrid
from .spectral_calc import EXP, adjoint_values, k_frame, lp_norm, phi_of_s, pointwise_norm

logger = logging.getLogger(__name__)

THETA_TERMS = 12
ISOTROPY_TOL = 1e-12
COCYCLE_TOL = 1e-12
EQUIVARIANCE_TOL = 1e-9


class BundleError(ValueError):
    """Inconsistent bundle data or corrupted metric input"""


# ----------------------------------------------------------------------
# theta functions and line bundle building blocks
# ----------------------------------------------------------------------

def theta_function(z: np.ndarray, tau: complex, level: int, characteristic: int = 0,
                   terms: int = THETA_TERMS) -> np.ndarray:
    """
    Level-m theta function with integer characteristic c:
    sum_n exp(pi i m (n + c/m)^2 tau + 2 pi i m (n + c/m) z).

    It is 1-periodic in z and picks up exp(-2 pi i m z - pi i m tau) under
    z -> z + tau, so it is a holomorphic section of L_m.
    """
    if level < 1:
        raise BundleError(f"Theta level must be positive, got {level}")
    shift = np.arange(-terms, terms + 1) + characteristic / level
    z = np.asarray(z)[..., None]
    exponent = 1j * np.pi * level * shift ** 2 * tau + 2j * np.pi * level * shift * z
    return np.sum(np.exp(exponent), axis=-1)


def gaussian_weight(grid: OrbifoldGrid, degree) -> np.ndarray:
    """Reference metric exp(-2 pi d Im(tau) x2^2) on L_d"""
    return np.exp(-2.0 * np.pi * np.asarray(degree) * grid.tau.imag * grid.x2 ** 2)


def section_basis(grid: OrbifoldGrid, charge: int, characteristic: int = 0) -> np.ndarray:
    """
    Smooth field with the factor of automorphy of charge q, unit sup norm.

    Holomorphic theta sections for q > 0, conjugated theta sections times the
    Gaussian weight for q < 0 (the harmonic (0,1) representatives), and
    constants for q = 0.
    """
    if charge == 0:
        return np.ones(grid.shape, dtype=complex)
    level = abs(charge)
    theta = theta_function(grid.z, grid.tau, level, characteristic % level)
    if charge > 0:
        basis = theta
    else:
        basis = np.conj(theta) * gaussian_weight(grid, level)
    norm = np.max(np.abs(basis) * np.sqrt(gaussian_weight(grid, charge)))
    return basis / norm


# ----------------------------------------------------------------------
# bundle data
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Deformation:
    """Amplitude of a harmonic (0,1) class in entry (row, col) of End(E)"""

    row: int
    col: int
    value: complex
    characteristic: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "Deformation":
        value = data["value"]
        if isinstance(value, (list, tuple)):
            value = complex(value[0], value[1])
        return cls(int(data["row"]), int(data["col"]), complex(value), int(data.get("characteristic", 0)))

    def to_dict(self) -> dict:
        return {"row": self.row, "col": self.col, "value": [self.value.real, self.value.imag],
                "characteristic": self.characteristic}


@dataclass(frozen=True)
class BundleData:
    """Rank, theta twists, isotropy and holomorphic structure of a bundle"""

    grid: OrbifoldGrid
    rank: int
    twist_degrees: Tuple[int, ...]
    isotropy: np.ndarray
    deformation: Tuple[Deformation, ...]
    a: EndoField
    charges: np.ndarray = field(repr=False)

    @property
    def topological_degree(self) -> int:
        return int(sum(self.twist_degrees))

    @property
    def topological_slope(self) -> float:
        return self.topological_degree / self.rank

    @property
    def is_deformed(self) -> bool:
        return bool(np.any(self.a.values))

    def seam_1(self, z: np.ndarray) -> np.ndarray:
        """Gluing along z -> z + 1 (identity in this gauge)"""
        eye = np.eye(self.rank, dtype=complex)
        return np.broadcast_to(eye, np.shape(z) + (self.rank, self.rank)).copy()

    def seam_tau(self, z: np.ndarray) -> np.ndarray:
        """Gluing along z -> z + tau: diag(exp(-2 pi i d z - pi i d tau))"""
        d = np.asarray(self.twist_degrees, dtype=float)
        z = np.asarray(z)[..., None]
        phases = np.exp(-2j * np.pi * d * z - 1j * np.pi * d * self.grid.tau)
        out = np.zeros(phases.shape + (self.rank,), dtype=complex)
        out[..., np.arange(self.rank), np.arange(self.rank)] = phases
        return out

    def cocycle_residual(self) -> float:
        """Relative mismatch of the two seam compositions around the corner"""
        z = self.grid.z
        around_tau_first = self.seam_1(z + self.grid.tau) @ self.seam_tau(z)
        around_one_first = self.seam_tau(z + 1.0) @ self.seam_1(z)
        scale = np.max(np.abs(around_one_first))
        return float(np.max(np.abs(around_tau_first - around_one_first)) / scale)

    def summary(self) -> dict:
        return {
            "rank": self.rank,
            "twist_degrees": list(self.twist_degrees),
            "degree": self.topological_degree,
            "slope": self.topological_slope,
            "deformation": [d.to_dict() for d in self.deformation],
            "orbifold_order": self.grid.k,
        }


def make_bundle(grid: OrbifoldGrid, rank: int, twist_degrees: Sequence[int],
                isotropy: Optional[np.ndarray] = None,
                background_a: Union[None, np.ndarray, Iterable] = None) -> BundleData:
    """
    Build a bundle from theta twists and an optional deformation.

    Args:
        grid: Base grid
        rank: Rank r
        twist_degrees: Integer degree of each line factor
        isotropy: r x r unitary with isotropy^k = identity; identity by default
        background_a: Constant r x r matrix of amplitudes, or Deformation
            entries (or their dict form)

    Returns:
        BundleData
    """
    if rank < 1:
        raise BundleError(f"Rank must be at least 1, got {rank}")
    if len(twist_degrees) != rank:
        raise BundleError(f"Expected {rank} twist degrees, got {len(twist_degrees)}")
    if any(float(d) != int(d) for d in twist_degrees):
        raise BundleError(f"Twist degrees must be integers, got {list(twist_degrees)}")
    twists = tuple(int(d) for d in twist_degrees)
    if grid.k == 4 and any(twists):
        raise BundleError("Order-4 orbifolds only carry untwisted factors")

    rho = np.eye(rank, dtype=complex) if isotropy is None else np.asarray(isotropy, dtype=complex)
    if rho.shape != (rank, rank):
        raise BundleError(f"Isotropy must be {rank}x{rank}, got shape {rho.shape}")
    unitary_residual = np.max(np.abs(rho @ dagger(rho) - np.eye(rank)))
    order_residual = np.max(np.abs(np.linalg.matrix_power(rho, grid.k) - np.eye(rank)))
    if unitary_residual > ISOTROPY_TOL or order_residual > ISOTROPY_TOL:
        raise BundleError(f"Isotropy must be unitary of order dividing {grid.k} "
                          f"(residuals {unitary_residual:.2e}, {order_residual:.2e})")

    d = np.asarray(twists)
    charges = d[:, None] - d[None, :]
    deformation = _parse_deformation(background_a, rank)

    a_values = np.zeros(grid.shape + (rank, rank), dtype=complex)
    for entry in deformation:
        if not (0 <= entry.row < rank and 0 <= entry.col < rank):
            raise BundleError(f"Deformation entry ({entry.row}, {entry.col}) outside rank {rank}")
        q = int(charges[entry.row, entry.col])
        if q > 0:
            raise BundleError(f"Deformation entry ({entry.row}, {entry.col}) has charge {q} > 0; "
                              "such classes vanish and the entry would be gauge-trivial")
        a_values[..., entry.row, entry.col] += entry.value * section_basis(grid, q, entry.characteristic)

    bundle = BundleData(grid, rank, twists, rho, deformation, EndoField(a_values, FormDegree.DZBAR), charges)

    residual = bundle.cocycle_residual()
    if residual > COCYCLE_TOL:
        raise BundleError(f"Seam cocycle violated, residual {residual:.3e}")
    if grid.k > 1 and deformation:
        eq_residual = grid.equivariance_residual(bundle.a, isotropy=rho, charges=charges)
        if eq_residual > EQUIVARIANCE_TOL:
            logger.warning(f"Deformation is not invariant under the orbifold action (residual {eq_residual:.2e})")

    logger.info(f"Built rank-{rank} bundle with twists {list(twists)}, degree {bundle.topological_degree}")
    return bundle


def _parse_deformation(background_a, rank: int) -> Tuple[Deformation, ...]:
    if background_a is None:
        return ()
    if isinstance(background_a, np.ndarray):
        if background_a.shape != (rank, rank):
            raise BundleError(f"Constant deformation must be {rank}x{rank}")
        return tuple(Deformation(i, j, complex(background_a[i, j]))
                     for i in range(rank) for j in range(rank) if background_a[i, j] != 0)
    entries = []
    for item in background_a:
        entries.append(item if isinstance(item, Deformation) else Deformation.from_dict(item))
    return tuple(entries)


# ----------------------------------------------------------------------
# metrics and endomorphisms
# ----------------------------------------------------------------------

def flat_reference_metric(bundle: BundleData) -> MetricField:
    """Block-diagonal Gaussian metric with constant curvature on each factor"""
    values = np.zeros(bundle.grid.shape + (bundle.rank, bundle.rank), dtype=complex)
    for j, d in enumerate(bundle.twist_degrees):
        values[..., j, j] = gaussian_weight(bundle.grid, d)
    return MetricField(values)


def exp_metric(K: MetricField, s: EndoField) -> MetricField:
    """The metric K e^s"""
    values = K.values @ phi_of_s(EXP, s, K).values
    return MetricField(values).symmetrized()


def relate_metrics(H: MetricField, K: MetricField) -> EndoField:
    """
    The K-self-adjoint s with H = K e^s.

    Raises:
        BundleError: If K^-1 H has a non-positive eigenvalue somewhere
    """
    L, L_inv = k_frame(K)
    conjugated = L_inv @ H.values @ dagger(L_inv)
    conjugated = 0.5 * (conjugated + dagger(conjugated))
    mu, W = np.linalg.eigh(conjugated)
    if np.min(mu) <= 0:
        site = np.unravel_index(np.argmin(np.min(mu, axis=-1)), mu.shape[:-1])
        raise BundleError(f"K^-1 H has non-positive spectrum at site {site}")
    frame = dagger(L_inv) @ W
    frame_inv = dagger(W) @ dagger(L)
    return EndoField((frame * np.log(mu)[..., None, :]) @ frame_inv)


def adjoint_wrt(A: EndoField, K: Optional[MetricField]) -> EndoField:
    """A^{*K}; one-forms switch between dz and dz-bar coefficients"""
    return EndoField(adjoint_values(A.values, K.values if K is not None else None), A.degree.conjugate)


def norm(f, p: float, K: Optional[MetricField], grid: OrbifoldGrid) -> float:
    """L^p norm (p = inf for the sup norm) of a scalar or endomorphism field"""
    pointwise = pointwise_norm(f, K.values if K is not None else None)
    return lp_norm(pointwise, p, grid.cell_area)


def l2_inner(f: EndoField, g: EndoField, K: Optional[MetricField], grid: OrbifoldGrid) -> complex:
    """Integral of Tr(f g^{*K}) times the form factor of the common degree"""
    if f.degree is not g.degree:
        raise BundleError(f"Cannot pair degree {f.degree.value} with {g.degree.value}")
    factor = {FormDegree.SCALAR: 1.0, FormDegree.DZ: 2.0, FormDegree.DZBAR: 2.0, FormDegree.AREA: 4.0}[f.degree]
    density = trace(f.values @ adjoint_values(g.values, K.values if K is not None else None))
    return factor * grid.integrate(density)


def sigma_field(H1: MetricField, H2: MetricField) -> np.ndarray:
    """Pointwise Tr(H1^-1 H2) + Tr(H2^-1 H1) - 2r"""
    r = H1.rank
    forward = np.real(trace(np.linalg.solve(H1.values, H2.values)))
    backward = np.real(trace(np.linalg.solve(H2.values, H1.values)))
    return forward + backward - 2.0 * r


def sigma_distance(H1: MetricField, H2: MetricField) -> float:
    return max(float(np.max(sigma_field(H1, H2))), 0.0)


# ----------------------------------------------------------------------
# reproducible random fields
# ----------------------------------------------------------------------

def random_periodic(grid: OrbifoldGrid, rng: np.random.Generator, mode_cutoff: int = 2,
                    shape: Tuple[int, ...] = ()) -> np.ndarray:
    """Complex trigonometric polynomial with modes |m1|, |m2| <= mode_cutoff"""
    modes = np.arange(-mode_cutoff, mode_cutoff + 1)
    count = modes.size
    coeffs = (rng.standard_normal((count, count) + shape) + 1j * rng.standard_normal((count, count) + shape))
    coeffs /= np.sqrt(2.0) * count
    phase1 = np.exp(2j * np.pi * grid.x1[..., None] * modes)
    phase2 = np.exp(2j * np.pi * grid.x2[..., None] * modes)
    return np.einsum("xya,xyb,ab...->xy...", phase1, phase2, coeffs)


def random_endomorphism(bundle: BundleData, rng: np.random.Generator, amplitude: float = 0.5,
                        mode_cutoff: int = 2, self_adjoint: bool = True, K: Optional[MetricField] = None,
                        trace_free: bool = False) -> EndoField:
    """
    Smooth random endomorphism with correct seam behavior and sup norm `amplitude`.

    Fields are projected onto invariants when the grid carries an orbifold action.
    """
    grid = bundle.grid
    K = K if K is not None else flat_reference_metric(bundle)
    r = bundle.rank
    values = random_periodic(grid, rng, mode_cutoff, (r, r))
    for i in range(r):
        for j in range(r):
            values[..., i, j] *= section_basis(grid, int(bundle.charges[i, j]))
    if grid.k > 1:
        values = grid.group_project(EndoField(values), isotropy=bundle.isotropy, charges=bundle.charges).values
    if self_adjoint:
        values = 0.5 * (values + adjoint_values(values, K.values))
    if trace_free:
        shift = grid.integrate(trace(values)) / (r * grid.volume)
        if self_adjoint:
            shift = shift.real
        values = values - shift * np.eye(r)
    sup = np.max(pointwise_norm(values, K.values, FormDegree.SCALAR))
    if sup > 0:
        values = values * (amplitude / sup)
    return EndoField(values)


def random_metric(bundle: BundleData, rng: np.random.Generator, amplitude: float = 0.3,
                  mode_cutoff: int = 2, base: Optional[MetricField] = None) -> MetricField:
    """base e^s for a random self-adjoint s of sup norm `amplitude`"""
    base = base if base is not None else flat_reference_metric(bundle)
    s = random_endomorphism(bundle, rng, amplitude, mode_cutoff, K=base)
    return exp_metric(base, s)


def summand_projection(bundle: BundleData, K: MetricField, indices: List[int]) -> EndoField:
    """K-orthogonal projection onto the span of the chosen line factors"""
    r = bundle.rank
    basis = np.zeros((r, len(indices)), dtype=complex)
    for col, idx in enumerate(indices):
        basis[idx, col] = 1.0
    gram = dagger(basis) @ K.values @ basis
    values = basis @ np.linalg.solve(gram, dagger(basis) @ K.values)
    return EndoField(values)
