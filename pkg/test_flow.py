"""
Tests for the heat flow integrators and run monitoring
"""

import logging

import numpy as np
import pandas as pd
import pytest

from agents.heat_flow.bundle import exp_metric, flat_reference_metric, make_bundle, random_metric, relate_metrics
from agents.heat_flow.fields import EndoField, MetricField
from agents.heat_flow.flow import (CONVERGED, DIVERGED, STABILITY_LIMITS, T_MAX_REACHED, TRACE_COLUMNS, FlowConfig,
                                   FlowError, c0_control_fit, dissipation_check, heat_kernel_comparison, heat_step,
                                   l21_bound_check, monotonicity_violations, renormalize_trace, run_flow)
from agents.heat_flow.donaldson import properness_probe, trace_integral
from agents.heat_flow.geometry import build_grid
from agents.heat_flow.lab import HeatFlowLab
from agents.heat_flow.scenario import load_scenario


def short_run(bundle, H0, steps=60, scheme="rk4", monitor_every=5):
    dt = 1.0 / bundle.grid.stiffness()
    config = FlowConfig(dt=dt, t_max=steps * dt, scheme=scheme, monitor_every=monitor_every)
    return run_flow(H0, bundle, config)


def test_config_rejects_unstable_step(small_grid):
    limit = STABILITY_LIMITS["rk4"] / small_grid.stiffness()
    with pytest.raises(ValueError, match="stability bound"):
        FlowConfig(dt=1.01 * limit).validate(small_grid)
    FlowConfig(dt=0.99 * limit).validate(small_grid)


@pytest.mark.parametrize("kwargs", [dict(scheme="leapfrog"), dict(dt=0.0), dict(t_max=-1.0), dict(monitor_every=0)])
def test_config_rejects_invalid_settings(small_grid, kwargs):
    with pytest.raises(ValueError):
        FlowConfig(**{"dt": 1e-4, **kwargs}).validate(small_grid)


def test_zero_step_is_identity(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    H = random_metric(bundle, np.random.default_rng(0))
    stepped = heat_step(H, bundle, 0.0)
    assert np.array_equal(stepped.values, H.values)
    assert stepped.notes["drift"] == 0.0
    with pytest.raises(ValueError):
        heat_step(H, bundle, -1e-3)


@pytest.mark.parametrize("d", [-1, 1, 2])
def test_hermitian_einstein_metric_is_fixed(small_grid, d):
    bundle = make_bundle(small_grid, 1, [d])
    K = flat_reference_metric(bundle)
    dt = 2.0 / small_grid.stiffness()
    H = K
    for _ in range(100):
        H = heat_step(H, bundle, dt, "rk4")
    assert np.max(np.abs(H.values - K.values)) < 1e-10


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("scheme", ["explicit-euler", "rk4"])
def test_monotonicity_and_conservation(small_grid, seed, scheme):
    bundle = make_bundle(small_grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
    H0 = random_metric(bundle, np.random.default_rng(seed), 0.4)
    trace = short_run(bundle, H0, scheme=scheme)
    assert trace.status == T_MAX_REACHED
    assert monotonicity_violations(trace, "M_K") < 1e-9
    assert monotonicity_violations(trace, "sup_dev") < 1e-9
    assert np.max(np.abs(trace.column("trace_int"))) < 1e-9 * small_grid.volume
    assert trace.rows[0].M_K == pytest.approx(0.0, abs=1e-12)


def test_heat_kernel_comparison_has_no_violations(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    H0 = random_metric(bundle, np.random.default_rng(4), 0.4)
    trace = short_run(bundle, H0, steps=80, monitor_every=4)
    comparisons = heat_kernel_comparison(trace, small_grid, lags=1, horizons=(1, 3, 6))
    assert comparisons
    assert not any(item["violated"] for item in comparisons)


def test_l21_bound_holds(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
    H0 = random_metric(bundle, np.random.default_rng(2), 0.4)
    trace = short_run(bundle, H0)
    for row in l21_bound_check(trace, bundle, H0):
        assert row["grad_sq"] <= row["bound"] * (1 + 1e-9) + 1e-12


def test_dissipation_matches_deviation(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
    H0 = random_metric(bundle, np.random.default_rng(3), 0.4)
    dt = 0.5 / small_grid.stiffness()
    trace = run_flow(H0, bundle, FlowConfig(dt=dt, t_max=200 * dt, monitor_every=2))
    # centered differences of M_K against -l2_dev^2
    assert np.median(dissipation_check(trace)) < 1e-2


def test_semi_implicit_needs_uncharged_bundle(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    H = random_metric(bundle, np.random.default_rng(0))
    with pytest.raises(FlowError):
        heat_step(H, bundle, 1e-3, "semi-implicit")


def test_semi_implicit_beyond_explicit_limit(small_grid):
    bundle = make_bundle(small_grid, 2, [0, 0], background_a=[{"row": 1, "col": 0, "value": [0.5, 0.0]}])
    H0 = random_metric(bundle, np.random.default_rng(5), 0.4)
    dt = 10.0 / small_grid.stiffness()
    trace = run_flow(H0, bundle, FlowConfig(dt=dt, t_max=50 * dt, scheme="semi-implicit", monitor_every=5))
    assert trace.status in (T_MAX_REACHED, CONVERGED)
    assert trace.rows[-1].sup_dev < trace.rows[0].sup_dev
    assert np.max(np.abs(trace.column("trace_int"))) < 1e-9


def test_renormalize_trace_removes_mean_trace(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    K = flat_reference_metric(bundle)
    H = random_metric(bundle, np.random.default_rng(1), 0.4)
    scaled = type(H)(H.values * np.exp(0.3))
    assert abs(trace_integral(relate_metrics(renormalize_trace(scaled, K, small_grid), K), small_grid)) < 1e-12


def test_divergence_is_reported(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0])
    H0 = random_metric(bundle, np.random.default_rng(0), 0.3)
    dt = 2.0 / small_grid.stiffness()
    trace = run_flow(H0, bundle, FlowConfig(dt=dt, t_max=400 * dt, monitor_every=10, divergence_cond=1.5))
    assert trace.status == DIVERGED
    assert trace.diverged_site is not None
    assert trace.last_valid is not None


def test_trace_csv_header(small_grid, tmp_path):
    bundle = make_bundle(small_grid, 1, [0])
    trace = short_run(bundle, random_metric(bundle, np.random.default_rng(0)), steps=20)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    assert path.read_text().splitlines()[0] == "t,M_K,sup_dev,l2_dev,trace_int,sigma_prev,c0_s"
    frame = pd.read_csv(path)
    assert list(frame.columns) == TRACE_COLUMNS
    assert len(frame) == len(trace.rows)


def test_reference_start_converges_immediately(small_grid):
    bundle = make_bundle(small_grid, 1, [1])
    trace = short_run(bundle, flat_reference_metric(bundle))
    assert trace.status == CONVERGED
    assert len(trace.rows) == 1


def test_c0_fit_on_synthetic_trace(small_grid):
    bundle = make_bundle(small_grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
    trace = short_run(bundle, random_metric(bundle, np.random.default_rng(8), 0.4))
    C1, C2, violation = c0_control_fit(trace)
    assert C2 >= 0
    assert violation <= 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("name", ["stable.json", "stable_k2.json"])
def test_stable_scenario_converges(scenario_dir, name):
    lab = HeatFlowLab()
    scenario = lab.load(scenario_dir / name)
    result = lab.run_scenario(scenario)
    trace = result["trace"]
    summary = result["summary"]
    assert result["status"] == CONVERGED
    assert np.all(trace.column("l2_dev")[-10:] < 1e-6)
    assert summary["properness"]["proper"]
    assert summary["c0_fit"]["max_violation"] <= 1e-9
    assert summary["checks"]["mk_increase"] < 1e-9
    assert summary["checks"]["sup_dev_increase"] < 1e-9
    assert summary["checks"]["trace_int_max"] < 1e-9 * scenario.build_grid().volume
    assert summary["checks"]["heat_kernel_violations"] == 0
    assert summary["checks"]["equivariance_max"] < 1e-9
    assert properness_probe(trace.column("c0_s"), trace.column("M_K"))["proper"]


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_monotonicity_on_fine_grid(seed):
    grid = build_grid(64, 64, 1j)
    bundle = make_bundle(grid, 2, [1, 0], background_a=[{"row": 1, "col": 0, "value": [0.7, 0.0]}])
    trace = short_run(bundle, random_metric(bundle, np.random.default_rng(seed), 0.4), steps=40)
    assert monotonicity_violations(trace, "M_K") < 1e-9
    assert monotonicity_violations(trace, "sup_dev") < 1e-9
    assert np.max(np.abs(trace.column("trace_int"))) < 1e-9 * grid.volume


def test_single_mode_decays_at_heat_rate(small_grid):
    bundle = make_bundle(small_grid, 1, [0])
    K = flat_reference_metric(bundle)
    s0 = (0.1 * np.cos(2 * np.pi * small_grid.x1))[..., None, None].astype(complex)
    H = exp_metric(K, EndoField(s0))
    dt = 1.0 / small_grid.stiffness()
    steps = 100
    for _ in range(steps):
        H = heat_step(H, bundle, dt, "rk4")
    rate = small_grid.flow_rate_symbol()[1, 0]
    assert rate == pytest.approx(np.pi ** 2)
    s_t = relate_metrics(H, K).values
    expected = np.exp(-rate * steps * dt) * s0
    assert np.max(np.abs(s_t - expected)) < 1e-4 * np.max(np.abs(s0))


def test_charged_step_stays_equivariant(scenario_dir):
    scenario = load_scenario(scenario_dir / "stable_k2.json")
    grid = scenario.build_grid()
    bundle = scenario.build_bundle(grid)
    H0 = scenario.initial_metric(bundle)
    H1 = heat_step(H0, bundle, 1.0 / grid.stiffness())
    h = np.linalg.solve(flat_reference_metric(bundle).values, H1.values)
    assert grid.equivariance_residual(EndoField(h), isotropy=bundle.isotropy, charges=bundle.charges) < 1e-9


def test_broken_equivariance_is_logged(scenario_dir, caplog):
    scenario = load_scenario(scenario_dir / "stable_k2.json")
    grid = scenario.build_grid()
    bundle = scenario.build_bundle(grid)
    values = scenario.initial_metric(bundle).values.copy()
    values[3, 5] *= 1.05
    dt = 1.0 / grid.stiffness()
    with caplog.at_level(logging.WARNING, logger="agents.heat_flow.flow"):
        trace = run_flow(MetricField(values), bundle, FlowConfig(dt=dt, t_max=2 * dt, monitor_every=1))
    assert "broke equivariance" in caplog.text
    assert trace.rows[-1].equivariance > 1e-9
