"""
Tests for the orbifold torus grid
"""

import numpy as np
import pytest

from agents.heat_flow.bundle import random_periodic, section_basis
from agents.heat_flow.fields import FormDegree, FormField
from agents.heat_flow.geometry import GeometryError, build_grid


def test_integrate_constant_is_volume(skew_grid):
    assert abs(skew_grid.integrate(np.ones(skew_grid.shape)) - 0.8) < 1e-12


def test_integrate_keeps_matrix_axes(square_grid):
    field = np.broadcast_to(np.eye(2), square_grid.shape + (2, 2))
    assert np.allclose(square_grid.integrate(field), np.eye(2))


def test_spectral_derivative_is_exact_on_fourier_modes(skew_grid):
    f = np.exp(2j * np.pi * (skew_grid.x1 + 2 * skew_grid.x2))
    assert np.max(np.abs(skew_grid.partial_x1(f) - 2j * np.pi * f)) < 1e-10
    assert np.max(np.abs(skew_grid.partial_x2(f) - 4j * np.pi * f)) < 1e-10


def test_dzbar_of_x1_mode(skew_grid):
    tau = skew_grid.tau
    f = np.exp(2j * np.pi * skew_grid.x1)
    dbar = skew_grid.dzbar(f)
    expected = tau * 2j * np.pi * f / (2j * tau.imag)
    assert np.max(np.abs(dbar - expected)) < 1e-10


def test_integration_by_parts(skew_grid, rng):
    f = random_periodic(skew_grid, rng, 3)
    g = random_periodic(skew_grid, rng, 3)
    total = skew_grid.integrate(g * skew_grid.dzbar(f)) + skew_grid.integrate(f * skew_grid.dzbar(g))
    assert abs(total) < 1e-10


def test_kahler_identity(skew_grid, rng):
    f = random_periodic(skew_grid, rng, 3)
    a = random_periodic(skew_grid, rng, 3)
    lhs = 2.0 * skew_grid.integrate(skew_grid.dzbar(f) * np.conj(a))
    contracted = skew_grid.lambda_contract(skew_grid.apply_partial(FormField(a, FormDegree.DZBAR)))
    rhs = skew_grid.integrate(f * np.conj(-1j * contracted.values))
    assert abs(lhs - rhs) < 1e-10


def test_laplacian_is_nonnegative(skew_grid, rng):
    u = random_periodic(skew_grid, rng, 3).real
    assert skew_grid.integrate(u * skew_grid.laplacian(u)).real > 0


def test_green_solve_inverts_laplacian(skew_grid, rng):
    u = random_periodic(skew_grid, rng, 3).real
    solved = skew_grid.green_solve(skew_grid.laplacian(u).real)
    assert np.max(np.abs(solved - (u - skew_grid.mean(u).real))) < 1e-9


def test_green_solve_warns_on_mean(square_grid, caplog):
    square_grid.green_solve(np.ones(square_grid.shape))
    assert "nonzero mean" in caplog.text


def test_heat_kernel_sup_decreases(square_grid):
    values = [square_grid.heat_kernel_sup(t) for t in (0.01, 0.1, 1.0)]
    assert values[0] > values[1] > values[2] > 0
    # the constant mode survives
    assert square_grid.heat_kernel_sup(50.0) == pytest.approx(1.0 / square_grid.volume)
    with pytest.raises(GeometryError):
        square_grid.heat_kernel_sup(0.0)


def test_stiffness_matches_nyquist(small_grid):
    assert small_grid.stiffness() == pytest.approx(np.pi ** 2 * 128)


@pytest.mark.parametrize("args", [
    dict(n1=16, n2=16, tau=-1j),
    dict(n1=4, n2=16, tau=1j),
    dict(n1=16, n2=16, tau=1j, k=3),
    dict(n1=15, n2=16, tau=1j, k=2),
    dict(n1=16, n2=16, tau=0.5 + 1j, k=4),
    dict(n1=16, n2=16, tau=1j, scheme="fd6"),
])
def test_invalid_grids(args):
    with pytest.raises(GeometryError):
        build_grid(**args)


@pytest.mark.parametrize("k", [2, 4])
def test_group_project_is_idempotent(k, rng):
    grid = build_grid(16, 16, 1j, k=k)
    f = random_periodic(grid, rng, 3)
    once = grid.group_project(f, weight=0)
    twice = grid.group_project(once, weight=0)
    assert np.max(np.abs(once - twice)) < 1e-12
    assert grid.equivariance_residual(once, weight=0) < 1e-12


def test_order_four_rotation_cycles(rng):
    grid = build_grid(16, 16, 1j, k=4)
    f = random_periodic(grid, rng, 3)
    rotated = f
    for _ in range(4):
        rotated = grid.rotate(rotated)
    assert np.max(np.abs(rotated - f)) < 1e-14


@pytest.mark.parametrize("scheme, minimum", [("fd2", 1.9), ("fd4", 3.8)])
def test_finite_difference_order(scheme, minimum):
    errors = []
    for n in (32, 64):
        spectral = build_grid(n, n, 0.3 + 0.8j)
        grid = build_grid(n, n, 0.3 + 0.8j, scheme=scheme)
        f = np.exp(np.cos(2 * np.pi * grid.x1) + 0.5 * np.sin(2 * np.pi * (grid.x1 + grid.x2)))
        errors.append(np.max(np.abs(grid.dzbar(f) - spectral.dzbar(f))))
    assert np.log2(errors[0] / errors[1]) >= minimum


@pytest.mark.parametrize("k", [2, 4])
@pytest.mark.parametrize("weight", [-1, 1, 2])
def test_group_project_at_nonzero_weight(k, weight, rng):
    grid = build_grid(16, 16, 1j, k=k)
    f = random_periodic(grid, rng, 3)
    once = grid.group_project(f, weight=weight)
    zeta = np.exp(2j * np.pi / k)
    assert np.max(np.abs(grid.rotate(once) - zeta ** weight * once)) < 1e-12
    assert grid.equivariance_residual(once, weight=weight) < 1e-12


@pytest.mark.parametrize("k", [2, 4])
def test_group_project_commutes_with_dbar(k, rng):
    grid = build_grid(16, 16, 1j, k=k)
    f = random_periodic(grid, rng, 3)
    projected_first = grid.apply_dbar(grid.group_project(f, weight=0))
    differentiated_first = grid.group_project(grid.apply_dbar(f))
    assert differentiated_first.degree is FormDegree.DZBAR
    assert np.max(np.abs(projected_first.values - differentiated_first.values)) < 1e-10


@pytest.mark.parametrize("charge", [1, -1, 2])
def test_charged_derivatives_anticommute_with_reflection(charge, rng):
    grid = build_grid(12, 12, 1j, k=2)
    f = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)

    def covariant(v):
        return grid.dz(v, charge) + 2j * np.pi * charge * grid.x2 * v

    for operator in (lambda v: grid.dzbar(v, charge), covariant):
        lhs = operator(grid.rotate(f, charge))
        rhs = -grid.rotate(operator(f), charge)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(np.abs(rhs))


def test_reflection_averaged_dbar_annihilates_theta_section():
    grid = build_grid(24, 24, 1j, k=2)
    theta = section_basis(grid, 1)
    assert np.max(np.abs(grid.dzbar(theta, 1))) < 1e-3 * np.max(np.abs(theta))
