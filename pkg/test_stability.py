"""
Tests for the destabilizing-subsheaf probe
"""

import numpy as np
import pytest

from agents.heat_flow.bundle import flat_reference_metric, make_bundle
from agents.heat_flow.fields import EndoField
from agents.heat_flow.flow import FlowConfig, run_flow
from agents.heat_flow.lab import HeatFlowLab
from agents.heat_flow.stability import (FLOW_CONVERGED, FOUND, NO_BLOW_UP, NO_SEPARATION, StabilityError,
                                        destabilize_probe, eigen_flag, normalize, telescoping_degree,
                                        telescoping_residual)


def constant_endo(grid, diagonal):
    values = np.zeros(grid.shape + (len(diagonal), len(diagonal)), dtype=complex)
    values[...] = np.diag(diagonal)
    return EndoField(values)


def test_normalize_scales_to_unit_quartic_norm(split_bundle):
    K = flat_reference_metric(split_bundle)
    u, ell = normalize(constant_endo(split_bundle.grid, [-1.0, 1.0]), K, split_bundle.grid)
    assert ell == pytest.approx(np.sqrt(2.0))
    assert np.allclose(u.values[0, 0], np.diag([-1.0, 1.0]) / np.sqrt(2.0))


def test_normalize_rejects_zero(split_bundle):
    K = flat_reference_metric(split_bundle)
    with pytest.raises(StabilityError):
        normalize(constant_endo(split_bundle.grid, [0.0, 0.0]), K, split_bundle.grid)


def test_eigen_flag_of_constant_field(split_bundle):
    K = flat_reference_metric(split_bundle)
    flag = eigen_flag(constant_endo(split_bundle.grid, [-1.0, 1.0]), K, split_bundle)
    assert flag.separated
    assert flag.eigenvalues == pytest.approx([-1.0, 1.0])
    assert flag.ranks == [1]
    assert flag.constant_spectrum
    assert flag.trace_integral == pytest.approx(0.0, abs=1e-12)
    assert flag.residuals[0]["idempotency"] < 1e-8
    assert flag.residuals[0]["weak_holomorphy"] < 1e-8
    assert telescoping_residual(constant_endo(split_bundle.grid, [-1.0, 1.0]), flag, K, split_bundle.grid) < 1e-8


def test_eigen_flag_merges_close_eigenvalues(square_grid):
    bundle = make_bundle(square_grid, 3, [0, 0, 0])
    K = flat_reference_metric(bundle)
    flag = eigen_flag(constant_endo(square_grid, [-1.0, 0.99, 1.0]), K, bundle)
    assert flag.merged == [[1, 2]]
    assert flag.ranks == [1]
    assert len(flag.eigenvalues) == 2


def test_single_group_has_no_projection(split_bundle):
    K = flat_reference_metric(split_bundle)
    report = destabilize_probe(split_bundle, K, s=constant_endo(split_bundle.grid, [1.0, 1.01]))
    assert report.status == NO_SEPARATION
    assert not report.found


def test_telescoping_degree(split_bundle):
    K = flat_reference_metric(split_bundle)
    flag = eigen_flag(constant_endo(split_bundle.grid, [-1.0, 1.0]), K, split_bundle)
    assert telescoping_degree(flag, [1.0], 1.0) == pytest.approx(-1.0)
    assert telescoping_degree(flag, [0.0], 1.0) == pytest.approx(1.0)


def test_probe_with_explicit_direction(split_bundle):
    K = flat_reference_metric(split_bundle)
    report = destabilize_probe(split_bundle, K, s=constant_endo(split_bundle.grid, [-1.0, 1.0]))
    assert report.status == FOUND
    assert report.found
    assert report.deg_pi == pytest.approx(1.0, abs=1e-6)
    assert report.mu_pi >= report.mu_E
    assert report.W == pytest.approx(-1.0 / np.sqrt(2.0), abs=1e-6)
    assert report.weak_holo["residual"] < 1e-3
    assert report.to_dict()["status"] == FOUND


def test_probe_needs_a_direction(split_bundle):
    with pytest.raises(StabilityError):
        destabilize_probe(split_bundle, flat_reference_metric(split_bundle))


def test_probe_after_converged_flow(small_grid):
    bundle = make_bundle(small_grid, 1, [1])
    K = flat_reference_metric(bundle)
    trace = run_flow(K, bundle, FlowConfig(dt=1.0 / small_grid.stiffness(), t_max=0.01))
    assert destabilize_probe(bundle, K, trace_in=trace).status == FLOW_CONVERGED


def test_probe_on_short_run_is_inconclusive(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    K = flat_reference_metric(bundle)
    dt = 1.0 / small_grid.stiffness()
    trace = run_flow(K, bundle, FlowConfig(dt=dt, t_max=20 * dt))
    report = destabilize_probe(bundle, K, trace_in=trace)
    assert report.status == NO_BLOW_UP
    assert report.ell < 10.0


@pytest.mark.slow
def test_unstable_scenario_finds_destabilizing_summand(scenario_dir):
    lab = HeatFlowLab()
    result = lab.run_scenario(lab.load(scenario_dir / "unstable.json"), probe=True)
    probe = result["probe"]
    assert result["success"]
    assert probe["found"]
    assert abs(probe["deg_pi"] - 1.0) < 0.05
    assert probe["mu_pi"] >= probe["mu_E"]
    assert probe["W"] <= 1e-3
    assert probe["weak_holo"]["residual"] < 1e-3
    assert not result["summary"]["properness"]["proper"]
