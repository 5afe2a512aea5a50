"""
Field containers shared by the heat flow modules.

Every field lives on an n1 x n2 grid. Scalar fields carry values of shape
(n1, n2); endomorphism fields carry (n1, n2, r, r); metric fields are
endomorphism-shaped Hermitian positive-definite matrices in the holomorphic
frame of the bundle.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class FormDegree(str, Enum):
    """Form degree tag of a field component"""

    SCALAR = "0"
    DZ = "1,0"
    DZBAR = "0,1"
    AREA = "1,1"

    @property
    def weight(self) -> int:
        """Rotation weight picked up under the cyclic action"""
        return {"0": 0, "1,0": -1, "0,1": 1, "1,1": 0}[self.value]

    @property
    def conjugate(self) -> "FormDegree":
        """Degree after complex conjugation of the form part"""
        if self is FormDegree.DZ:
            return FormDegree.DZBAR
        if self is FormDegree.DZBAR:
            return FormDegree.DZ
        return self


@dataclass(frozen=True)
class FormField:
    """Scalar-valued form component on the grid."""

    values: np.ndarray
    degree: FormDegree = FormDegree.SCALAR

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class EndoField:
    """
    Endomorphism-valued field, optionally a form component.

    The values hold the coefficient of dz, dz-bar or dz^dz-bar according to
    `degree`, so a (0,1) field a stands for a * dz-bar.
    """

    values: np.ndarray
    degree: FormDegree = FormDegree.SCALAR

    @property
    def rank(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values: np.ndarray) -> "EndoField":
        return EndoField(values, self.degree)

    def __add__(self, other: "EndoField") -> "EndoField":
        _check_degree(self, other)
        return EndoField(self.values + other.values, self.degree)

    def __sub__(self, other: "EndoField") -> "EndoField":
        _check_degree(self, other)
        return EndoField(self.values - other.values, self.degree)

    def scale(self, factor) -> "EndoField":
        return EndoField(self.values * factor, self.degree)

    @classmethod
    def identity(cls, shape, rank: int) -> "EndoField":
        values = np.zeros(tuple(shape) + (rank, rank), dtype=complex)
        values[..., np.arange(rank), np.arange(rank)] = 1.0
        return cls(values)

    @classmethod
    def zeros(cls, shape, rank: int, degree: FormDegree = FormDegree.SCALAR) -> "EndoField":
        return cls(np.zeros(tuple(shape) + (rank, rank), dtype=complex), degree)


@dataclass(frozen=True)
class MetricField:
    """Per-site Hermitian positive-definite matrix H(x)."""

    values: np.ndarray
    notes: dict = field(default_factory=dict, compare=False)

    @property
    def rank(self) -> int:
        return self.values.shape[-1]

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.values - np.conj(np.swapaxes(self.values, -1, -2)))))

    def min_eigenvalue(self) -> float:
        hermitian = 0.5 * (self.values + np.conj(np.swapaxes(self.values, -1, -2)))
        return float(np.min(np.linalg.eigvalsh(hermitian)))

    def symmetrized(self) -> "MetricField":
        hermitian = 0.5 * (self.values + np.conj(np.swapaxes(self.values, -1, -2)))
        return MetricField(hermitian, dict(self.notes))


def _check_degree(a, b) -> None:
    if a.degree is not b.degree:
        raise ValueError(f"Degree mismatch: {a.degree.value} vs {b.degree.value}")


def dagger(values: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the two trailing axes"""
    return np.conj(np.swapaxes(values, -1, -2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def trace(values: np.ndarray) -> np.ndarray:
    return np.trace(values, axis1=-2, axis2=-1)
