"""
Heat Flow Lab Package

This package contains the discretized orbifold torus, bundles with theta
twists, Chern-Weil curvature, the Donaldson functional, the heat flow
integrators and the destabilization probe.
"""

from .config import Config
from .geometry import OrbifoldGrid, build_grid
from .bundle import BundleData, make_bundle, flat_reference_metric, relate_metrics, exp_metric
from .chern import curvature, degree, slope, lambda_constant, projection_degree
from .donaldson import mk_path, mk_spectral, mk_value, variations, properness_probe
from .flow import FlowConfig, FlowTrace, heat_step, run_flow
from .stability import destabilize_probe
from .scenario import Scenario, ScenarioError, load_scenario
from .verify import InvariantSuite
from .lab import HeatFlowLab

__all__ = [
    "Config",
    "OrbifoldGrid",
    "build_grid",
    "BundleData",
    "make_bundle",
    "flat_reference_metric",
    "relate_metrics",
    "exp_metric",
    "curvature",
    "degree",
    "slope",
    "lambda_constant",
    "projection_degree",
    "mk_path",
    "mk_spectral",
    "mk_value",
    "variations",
    "properness_probe",
    "FlowConfig",
    "FlowTrace",
    "heat_step",
    "run_flow",
    "destabilize_probe",
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "InvariantSuite",
    "HeatFlowLab",
]
