"""
Tests for functional calculus on self-adjoint endomorphism fields
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats
from scipy.linalg import expm

from agents.heat_flow.bundle import make_bundle, random_endomorphism, random_metric
from agents.heat_flow.fields import EndoField
from agents.heat_flow.geometry import build_grid
from agents.heat_flow.spectral_calc import (EXP, LOG, SQUARE, STEP_TAIL, Phi_of_s, diff_quotient, holder_norm_check,
                                            k_eigh, lp_norm, phi_of_s, pointwise_norm, psi, psi_scaled, smoothed_step)


def separated_field(grid, seed):
    bundle = make_bundle(grid, 2, [0, 0])
    s = random_endomorphism(bundle, np.random.default_rng(seed), amplitude=0.3)
    return EndoField(s.values + np.diag([-1.0, 1.0]))


def test_exponential_matches_scipy(square_grid, rng):
    bundle = make_bundle(square_grid, 3, [0, 0, 0])
    s = random_endomorphism(bundle, rng, amplitude=2.0)
    exp_s = phi_of_s(EXP, s).values
    for i, j in [(0, 0), (5, 17), (31, 2)]:
        assert np.max(np.abs(exp_s[i, j] - expm(s.values[i, j]))) < 1e-10


def test_k_eigh_frame_is_k_unitary(extension_bundle, rng):
    K = random_metric(extension_bundle, rng, 0.4)
    s = random_endomorphism(extension_bundle, rng, amplitude=1.0, K=K)
    lam, frame, frame_inv = k_eigh(s, K)
    rebuilt = (frame * lam[..., None, :]) @ frame_inv
    gram = np.conj(np.swapaxes(frame, -1, -2)) @ K.values @ frame
    assert np.max(np.abs(rebuilt - s.values)) < 1e-10
    assert np.max(np.abs(gram - np.eye(2))) < 1e-10


def test_log_inverts_exp(square_grid, rng):
    bundle = make_bundle(square_grid, 2, [0, 0])
    s = random_endomorphism(bundle, rng, amplitude=3.0)
    recovered = phi_of_s(LOG, phi_of_s(EXP, s))
    assert np.max(np.abs(recovered.values - s.values)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("phi", [EXP, SQUARE, smoothed_step(0.0, 0.5)], ids=["exp", "square", "step"])
def test_chain_rule(skew_grid, seed, phi):
    s = separated_field(skew_grid, seed)
    lhs = skew_grid.apply_dbar(phi_of_s(phi, s)).values
    rhs = Phi_of_s(diff_quotient(phi), s, skew_grid.apply_dbar(s)).values
    assert lp_norm(pointwise_norm(lhs - rhs), 2, skew_grid.cell_area) < 1e-7


def test_chain_rule_fd2_order():
    errors = []
    for n in (32, 64):
        grid = build_grid(n, n, 0.3 + 0.8j, scheme="fd2")
        f = np.exp(np.cos(2 * np.pi * grid.x1) + 0.5 * np.sin(2 * np.pi * (grid.x1 + grid.x2)))
        off = 0.2 * np.cos(2 * np.pi * grid.x2)
        values = np.empty(grid.shape + (2, 2), dtype=complex)
        values[..., 0, 0] = 0.3 * f - 1.0
        values[..., 1, 1] = 1.0 - 0.3 * f
        values[..., 0, 1] = off
        values[..., 1, 0] = off
        s = EndoField(values)
        lhs = grid.apply_dbar(phi_of_s(EXP, s)).values
        rhs = Phi_of_s(diff_quotient(EXP), s, grid.apply_dbar(s)).values
        errors.append(lp_norm(pointwise_norm(lhs - rhs), 2, grid.cell_area))
    assert np.log2(errors[0] / errors[1]) >= 1.9


def test_smoothed_step_band():
    step = smoothed_step(1.0, 0.4)
    assert step(0.8) == pytest.approx(1.0 - STEP_TAIL, abs=1e-15)
    assert step(1.2) == pytest.approx(STEP_TAIL, rel=1e-6)
    assert step(1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        smoothed_step(0.0, 0.0)


def test_smoothed_step_saturates_two_widths_out():
    step = smoothed_step(-1.0, 0.5)
    assert abs(step(-2.0) - 1.0) < 1e-15
    assert abs(step(0.0)) < 1e-15


def test_calculus_ignores_frame_choice_on_repeated_eigenvalues(rng):
    shape = (4, 4)
    gaussian = rng.normal(size=shape + (3, 3)) + 1j * rng.normal(size=shape + (3, 3))
    U, _ = np.linalg.qr(gaussian)
    U_dag = np.conj(np.swapaxes(U, -1, -2))
    mu = np.array([1.0, 1.0, 3.0])
    s = EndoField((U * mu) @ U_dag)

    expected = (U * np.exp(mu)) @ U_dag
    exp_s = phi_of_s(EXP, s).values
    assert np.max(np.abs(exp_s - expected)) < 1e-10 * np.max(np.abs(expected))

    A = rng.normal(size=shape + (3, 3)) + 1j * rng.normal(size=shape + (3, 3))
    Phi = diff_quotient(EXP)
    weights = Phi(mu[None, :], mu[:, None])
    expected = U @ (weights * (U_dag @ A @ U)) @ U_dag
    transformed = Phi_of_s(Phi, s, EndoField(A)).values
    assert np.max(np.abs(transformed - expected)) < 1e-10 * np.max(np.abs(expected))


def test_psi_special_values():
    assert psi(0.3, 0.3) == pytest.approx(0.5)
    assert psi(0.0, 1.0) == pytest.approx(np.e - 2.0)
    assert psi(2.0, 2.0 + 1e-6) == pytest.approx(0.5, rel=1e-5)


@given(floats(min_value=-30, max_value=30), floats(min_value=-30, max_value=30))
def test_psi_is_positive(u, v):
    assert psi(u, v) > 0


@given(floats(min_value=-3, max_value=3), floats(min_value=-3, max_value=3))
def test_psi_is_continuous_across_series_cutoff(u, v):
    x = v - u
    closed_side = psi(u, u + 1.01e-4)
    series_side = psi(u, u + 0.99e-4)
    assert abs(closed_side - series_side) < 1e-6
    assert psi(u, v) == pytest.approx(psi(0.0, x))


@given(floats(min_value=0.05, max_value=5), floats(min_value=-5, max_value=5))
def test_psi_scaled_is_nondecreasing(u, v):
    values = [psi_scaled(ell, u, v) for ell in (0.5, 1.0, 2.0, 4.0)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_psi_scaled_limit():
    assert psi_scaled(1000.0, 1.0, 0.0) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("p, q", [(1.0, 2.0), (1.0, 4.0), (2.0, 4.0)])
def test_holder_bound(square_grid, p, q):
    s = separated_field(square_grid, 11)
    bundle = make_bundle(square_grid, 2, [0, 0])
    A = random_endomorphism(bundle, np.random.default_rng(12), self_adjoint=False)
    lhs, rhs = holder_norm_check(s, A, p, q, None, square_grid)
    assert lhs <= rhs


def test_holder_rejects_bad_exponents(square_grid):
    s = separated_field(square_grid, 0)
    with pytest.raises(ValueError):
        holder_norm_check(s, s, 2.0, 2.0, None, square_grid)
