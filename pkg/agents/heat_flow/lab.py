"""
Main heat flow lab implementation
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import scipy
from scipy.optimize import linprog

from .bundle import flat_reference_metric, summand_projection
from .chern import degree, lambda_constant, projection_degree, slope, summand_degrees
from .config import Config
from .donaldson import properness_probe
from .flow import (DIVERGED, c0_control_fit, dissipation_check, heat_kernel_comparison, l21_bound_check,
                   monotonicity_violations, run_flow)
from .geometry import build_grid
from .scenario import Scenario, load_scenario
from .stability import destabilize_probe
from .verify import DEFAULT_GRID_SIZE, InvariantSuite

logger = logging.getLogger(__name__)

DEFAULT_TRACE_NAME = "trace.csv"
DEFAULT_SUMMARY_NAME = "summary.json"
DEFAULT_PROBE_NAME = "probe.json"


def _jsonable(value):
    """Convert numpy scalars, arrays and complex numbers for json.dump"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class HeatFlowLab:
    """
    Orchestrates scenario runs, destabilization probes, degree tables and
    the invariant suite.
    """

    def __init__(self, config: Optional[Config] = None):
        """
        Initialize the lab.

        Args:
            config: Configuration object (will create default if not provided)
        """
        self.config = config or Config()
        logger.info("Heat flow lab initialized successfully")

    def load(self, path) -> Scenario:
        return load_scenario(path, self.config)

    def run_scenario(self, scenario: Scenario, seed: Optional[int] = None, out_dir=None,
                     probe: bool = False) -> Dict[str, Any]:
        """
        Run the flow of a scenario and post-process the trace.

        Args:
            scenario: Validated scenario
            seed: Overrides the scenario's initial-metric seed
            out_dir: Directory for the trace CSV and JSON reports; nothing is written when None
            probe: Attach a destabilization probe report

        Returns:
            Dict containing the run results
        """
        logger.info(f"Running scenario {scenario.name!r}")
        try:
            grid = scenario.build_grid()
            bundle = scenario.build_bundle(grid)
            flow_config = scenario.flow_config()
            H0 = scenario.initial_metric(bundle, seed)
            trace = run_flow(H0, bundle, flow_config, K=H0)

            properness = properness_probe(trace.column("c0_s"), trace.column("M_K"))
            C1, C2, violation = c0_control_fit(trace)
            kernel = heat_kernel_comparison(trace, grid)
            l21_rows = l21_bound_check(trace, bundle, H0)
            dissipation = dissipation_check(trace)
            checks = {
                "mk_increase": monotonicity_violations(trace, "M_K"),
                "sup_dev_increase": monotonicity_violations(trace, "sup_dev"),
                "trace_int_max": float(np.max(np.abs(trace.column("trace_int")))) if trace.rows else 0.0,
                "heat_kernel_samples": len(kernel),
                "heat_kernel_violations": sum(item["violated"] for item in kernel),
                "l21_violations": sum(row["grad_sq"] > row["bound"] * (1 + 1e-9) + 1e-12 for row in l21_rows),
                "dissipation_median": float(np.median(dissipation)) if dissipation.size else None,
                "equivariance_max": float(np.max(trace.column("equivariance"))) if trace.rows else 0.0,
            }

            probe_report = None
            if probe:
                probe_config = self.config.get_probe_config()
                probe_report = destabilize_probe(bundle, H0, trace_in=trace,
                                                 ell_threshold=probe_config["ell_threshold"],
                                                 gap_tol=probe_config["gap_tol"])

            summary = {
                "scenario": scenario.name,
                "settings": scenario.to_dict(),
                "lab_config": self.config.to_dict(),
                "seed": seed if seed is not None else scenario.initial.get("seed"),
                "created": datetime.now().isoformat(timespec="seconds"),
                "grid": repr(grid),
                "bundle": bundle.summary(),
                "flow": flow_config.to_dict(),
                **trace.summary(),
                "properness": properness,
                "c0_fit": {"C1": C1, "C2": C2, "max_violation": violation},
                "checks": checks,
            }
            paths = {}
            if out_dir is not None:
                paths = self.write_outputs(out_dir, scenario, trace, summary, probe_report)

            return {
                "success": trace.status != DIVERGED or probe,
                "status": trace.status,
                "summary": summary,
                "trace": trace,
                "probe": probe_report.to_dict() if probe_report else None,
                "paths": paths,
            }

        except Exception as e:
            logger.error(f"Error running scenario {scenario.name!r}: {e}")
            return {"success": False, "error": str(e)}

    def write_outputs(self, out_dir, scenario: Scenario, trace, summary: Dict[str, Any],
                      probe_report=None) -> Dict[str, str]:
        """
        Write the trace CSV, the run summary and the optional probe report.

        File names come from the scenario's outputs block when present.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs = scenario.outputs
        paths = {
            "trace": str(out / outputs.get("trace", DEFAULT_TRACE_NAME)),
            "summary": str(out / outputs.get("report", DEFAULT_SUMMARY_NAME)),
        }
        trace.write_csv(paths["trace"])
        with open(paths["summary"], "w") as handle:
            json.dump(_jsonable(summary), handle, indent=2, sort_keys=True)
        if probe_report is not None:
            paths["probe"] = str(out / outputs.get("probe", DEFAULT_PROBE_NAME))
            with open(paths["probe"], "w") as handle:
                json.dump(_jsonable(probe_report.to_dict()), handle, indent=2, sort_keys=True)
        logger.info(f"Wrote outputs to {out}")
        return paths

    def degree_table(self, scenario: Scenario) -> Dict[str, Any]:
        """
        Degree, slope and lambda of the scenario bundle.

        Returns:
            Dict with the bundle invariants and per-summand degrees
        """
        try:
            grid = scenario.build_grid()
            bundle = scenario.build_bundle(grid)
            K = flat_reference_metric(bundle)
            table = {
                "success": True,
                "rank": bundle.rank,
                "degree": degree(bundle, K),
                "topological_degree": bundle.topological_degree,
                "slope": slope(bundle, K),
                "lambda": lambda_constant(bundle),
                "volume": grid.volume,
                "summands": [],
            }
            if bundle.rank > 1:
                for index, value in enumerate(summand_degrees(bundle, K)):
                    table["summands"].append({"index": index, "twist": bundle.twist_degrees[index], "degree": value})
                if bundle.is_deformed:
                    # the deformation couples the factors; report the sub-line-bundle degree chain instead
                    chain = []
                    for stop in range(1, bundle.rank):
                        Pi = summand_projection(bundle, K, list(range(stop)))
                        chain.append({"indices": list(range(stop)), "degree": projection_degree(Pi, K, bundle)})
                    table["projection_chain"] = chain
            return table

        except Exception as e:
            logger.error(f"Error computing degree table: {e}")
            return {"success": False, "error": str(e)}

    def verify(self, n: int = DEFAULT_GRID_SIZE, profile: str = "spectral", seed: int = 0,
               tolerance_scale: Optional[float] = None) -> Dict[str, Any]:
        """
        Run the invariant suite.

        Returns:
            Dict with all_passed, the residual table and the failing check names
        """
        scale = self.config.tolerance_scale if tolerance_scale is None else tolerance_scale
        try:
            suite = InvariantSuite(n=n, profile=profile, seed=seed, tolerance_scale=scale)
            results = suite.run()
            return {
                "success": suite.all_passed,
                "all_passed": suite.all_passed,
                "table": suite.table(),
                "failed": [r.name for r in results if not r.passed],
            }
        except Exception as e:
            logger.error(f"Error running invariant suite: {e}")
            return {"success": False, "error": str(e)}

    def health_check(self) -> Dict[str, Any]:
        """Perform a health check of the numerical backends"""
        logger.info("Performing health check")

        health_status = {
            "overall": "healthy",
            "components": {}
        }

        # Check spectral derivatives
        try:
            grid = build_grid(16, 16, 1j)
            f = np.exp(2j * np.pi * grid.x1)
            error = float(np.max(np.abs(grid.partial_x1(f) - 2j * np.pi * f)))
            health_status["components"]["numerics"] = {
                "status": "healthy" if error < 1e-10 else "unhealthy",
                "details": f"numpy {np.__version__}, FFT derivative error {error:.1e}"
            }
        except Exception as e:
            health_status["components"]["numerics"] = {
                "status": "unhealthy",
                "details": str(e)
            }

        # Check linear programming
        try:
            result = linprog(c=[1.0], bounds=[(1.0, None)], method="highs")
            health_status["components"]["linear_programming"] = {
                "status": "healthy" if result.success else "unhealthy",
                "details": f"scipy {scipy.__version__} HiGHS" if result.success else result.message
            }
        except Exception as e:
            health_status["components"]["linear_programming"] = {
                "status": "unhealthy",
                "details": str(e)
            }

        # Check thread override
        health_status["components"]["threads"] = {
            "status": "healthy" if self.config.is_thread_override_configured() else "disabled",
            "details": f"HEATFLOW_THREADS={self.config.threads}" if self.config.is_thread_override_configured()
            else "Library default thread pools"
        }

        # Determine overall health
        component_statuses = [comp["status"] for comp in health_status["components"].values()]
        if "unhealthy" in component_statuses:
            health_status["overall"] = "unhealthy"
        elif "disabled" in component_statuses:
            health_status["overall"] = "partially_healthy"

        return health_status
