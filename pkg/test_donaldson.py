"""
Tests for the Donaldson functional, its variations and the Siu-type estimate
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats

from agents.heat_flow.bundle import exp_metric, random_endomorphism, random_metric
from agents.heat_flow.donaldson import (DonaldsonError, cross_check, mk_path, mk_spectral, mk_value,
                                        properness_probe, psi_profile, scalar_bound_violations,
                                        siu_estimate_check, siu_literature_bound, siu_lower_bound, variations)
from agents.heat_flow.fields import EndoField


def sample(bundle, seed, amplitude=0.6):
    rng = np.random.default_rng(seed)
    K = random_metric(bundle, rng, 0.3)
    s = random_endomorphism(bundle, rng, amplitude=amplitude, K=K, trace_free=True)
    return K, s


def five_point_second(f, t, delta):
    return (-f(t + 2 * delta) + 16 * f(t + delta) - 30 * f(t) + 16 * f(t - delta) - f(t - 2 * delta)) / (12 * delta ** 2)


def five_point_first(f, t, delta):
    return (f(t - 2 * delta) - 8 * f(t - delta) + 8 * f(t + delta) - f(t + 2 * delta)) / (12 * delta)


@pytest.mark.parametrize("seed", range(4))
def test_path_and_spectral_agree(extension_bundle, seed):
    K, s = sample(extension_bundle, seed)
    evaluation = cross_check(s, K, extension_bundle)
    assert evaluation.residual_vs_other < 1e-7
    assert evaluation.imag_residual < 1e-8


def test_mk_vanishes_at_base(extension_bundle, reference):
    assert mk_path(reference, reference, extension_bundle).value == pytest.approx(0.0, abs=1e-12)
    zero = EndoField(np.zeros_like(reference.values))
    assert mk_spectral(zero, reference, extension_bundle).value == 0.0


def test_mk_cocycle(extension_bundle):
    K, s = sample(extension_bundle, 5)
    J = random_metric(extension_bundle, np.random.default_rng(6), 0.3, base=K)
    H = exp_metric(K, s)
    direct = mk_path(H, K, extension_bundle).value
    split = mk_path(H, J, extension_bundle).value + mk_path(J, K, extension_bundle).value
    assert abs(direct - split) / max(1.0, abs(direct)) < 1e-7


def test_richardson_estimate_is_small(extension_bundle):
    K, s = sample(extension_bundle, 7)
    evaluation = mk_path(exp_metric(K, s), K, extension_bundle, path_points=16)
    assert evaluation.error_estimate < 1e-6


def test_mk_value_switches_on_trace(extension_bundle):
    K, s = sample(extension_bundle, 8)
    assert mk_value(exp_metric(K, s), K, extension_bundle).method == "spectral"
    shifted = EndoField(s.values + 0.1 * np.eye(2))
    assert mk_value(exp_metric(K, shifted), K, extension_bundle).method == "path"


def test_spectral_formula_requires_trace_free(extension_bundle):
    K, s = sample(extension_bundle, 9)
    with pytest.raises(DonaldsonError):
        mk_spectral(EndoField(s.values + 0.1 * np.eye(2)), K, extension_bundle)


@pytest.mark.parametrize("seed", range(4))
def test_variations_match_finite_differences(extension_bundle, seed):
    K, s = sample(extension_bundle, 100 + seed)
    t = float(np.random.default_rng(seed).uniform(0.2, 0.8))
    first, second = variations(s, K, extension_bundle, t)

    def mk_at(x):
        return mk_spectral(s.scale(x), K, extension_bundle).value

    assert second >= 0
    assert abs(five_point_second(mk_at, t, 1e-2) - second) / max(1.0, abs(second)) < 1e-6
    assert abs(five_point_first(mk_at, t, 1e-2) - first) / max(1.0, abs(first)) < 1e-6


def test_variations_of_zero_direction(extension_bundle, reference):
    zero = EndoField(np.zeros_like(reference.values))
    assert variations(zero, reference, extension_bundle, 0.5) == (0.0, 0.0)


@given(floats(min_value=-50, max_value=50))
def test_corrected_bound_holds(u):
    assert siu_lower_bound(u) <= psi_profile(u) + 1e-15


def test_corrected_bound_on_a_million_samples():
    samples = np.random.default_rng(0).uniform(-50.0, 50.0, 1_000_000)
    assert scalar_bound_violations(samples).size == 0


def test_literature_bound_fails_on_negative_interval():
    assert siu_literature_bound(-0.5) > psi_profile(-0.5)
    assert siu_literature_bound(2.0) <= psi_profile(2.0)
    violations = scalar_bound_violations(np.linspace(-2.0, 2.0, 4001), bound=siu_literature_bound)
    assert violations.size > 0
    assert np.all((violations > -0.9) & (violations < 0.0))


def test_psi_profile_at_zero():
    assert psi_profile(0.0) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_siu_estimate_margin(extension_bundle, seed):
    K, s = sample(extension_bundle, 200 + seed, amplitude=float(1 + seed))
    lhs, rhs, margin = siu_estimate_check(s, K, extension_bundle)
    assert margin >= -1e-9
    assert lhs > 0


def test_properness_on_bounded_history():
    t = np.linspace(0.0, 10.0, 50)
    sup_s = 1.0 - np.exp(-t)
    mk = -2.0 * (1.0 - np.exp(-t))
    result = properness_probe(sup_s, mk)
    assert result["proper"]
    assert result["C1"] >= 0 and result["C2"] >= 0
    assert np.all(sup_s <= result["C1"] + result["C2"] * mk + 1e-9)


def test_properness_fails_on_linear_growth():
    t = np.linspace(0.0, 10.0, 50)
    sup_s = np.pi / 2 * t
    mk = -np.pi ** 2 / 2 * t
    result = properness_probe(sup_s, mk)
    assert not result["proper"]
    assert result["C1"] > result["C1_half"]


def test_properness_on_empty_history():
    assert properness_probe([], [])["proper"]
