"""
Scenario files: grid, bundle, flow, initial metric and output settings.

Scenarios are JSON documents with a versioned schema:

    {
      "schema_version": 1,
      "name": "stable-rank2",
      "grid": {"n1": 16, "n2": 16, "tau": [0.0, 1.0], "k": 1, "scheme": "spectral"},
      "bundle": {"rank": 2, "twists": [1, 0], "isotropy": "trivial",
                 "deformation": [{"row": 1, "col": 0, "value": [1.0, 0.0]}]},
      "flow": {"dt": 0.002, "t_max": 20.0, "scheme": "rk4", "monitor_every": 10, "stop_tol": 1e-6},
      "initial": {"kind": "random", "seed": 0, "amplitude": 0.3, "mode_cutoff": 2},
      "outputs": {"trace": "trace.csv", "report": "summary.json"}
    }
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .bundle import BundleData, flat_reference_metric, make_bundle, random_metric
from .config import Config
from .fields import MetricField
from .flow import INTEGRATORS, STABILITY_LIMITS, FlowConfig
from .geometry import ORBIFOLD_ORDERS, SCHEMES, OrbifoldGrid, build_grid

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INITIAL_KINDS = ("reference", "random", "file")


class ScenarioError(ValueError):
    """Malformed scenario, naming the offending field"""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


def _require(block: Dict[str, Any], key: str, path: str):
    if key not in block:
        raise ScenarioError(f"{path}.{key}", "missing required field")
    return block[key]


def _as_int(value, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ScenarioError(path, f"must be at least {minimum}, got {value}")
    return value


def _as_float(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(path, f"expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(path, f"must be positive, got {value}")
    return float(value)


def _as_complex(value, path: str) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(_as_float(value[0], f"{path}[0]"), _as_float(value[1], f"{path}[1]"))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(_as_float(value, path))
    raise ScenarioError(path, f"expected [re, im], got {value!r}")


@dataclass
class Scenario:
    """Validated scenario blocks"""

    name: str
    grid: Dict[str, Any]
    bundle: Dict[str, Any]
    flow: Dict[str, Any]
    initial: Dict[str, Any]
    outputs: Dict[str, Any] = field(default_factory=dict)
    source: Optional[Path] = None

    def build_grid(self, scheme: Optional[str] = None) -> OrbifoldGrid:
        g = self.grid
        return build_grid(g["n1"], g["n2"], g["tau"], g["k"], scheme or g["scheme"])

    def build_bundle(self, grid: OrbifoldGrid) -> BundleData:
        b = self.bundle
        return make_bundle(grid, b["rank"], b["twists"], b["isotropy"], b["deformation"])

    def flow_config(self) -> FlowConfig:
        return FlowConfig(**self.flow)

    def initial_metric(self, bundle: BundleData, seed: Optional[int] = None) -> MetricField:
        """
        Build H0 from the initial block.

        Args:
            bundle: Bundle the metric lives on
            seed: Overrides the scenario seed when given

        Returns:
            MetricField
        """
        init = self.initial
        reference = flat_reference_metric(bundle)
        if init["kind"] == "reference":
            return reference
        if init["kind"] == "file":
            path = Path(init["path"])
            if self.source is not None and not path.is_absolute():
                path = self.source.parent / path
            values = np.load(path)
            expected = bundle.grid.shape + (bundle.rank, bundle.rank)
            if values.shape != expected:
                raise ScenarioError("initial.path", f"array shape {values.shape} does not match {expected}")
            return MetricField(values.astype(complex)).symmetrized()
        rng = np.random.default_rng(init["seed"] if seed is None else seed)
        return random_metric(bundle, rng, init["amplitude"], init["mode_cutoff"], base=reference)

    def to_dict(self) -> dict:
        grid = dict(self.grid)
        grid["tau"] = [grid["tau"].real, grid["tau"].imag]
        bundle = dict(self.bundle)
        if bundle["isotropy"] is None:
            bundle["isotropy"] = "trivial"
        else:
            bundle["isotropy"] = {"diagonal": [[z.real, z.imag] for z in np.diag(bundle["isotropy"])]}
        bundle["deformation"] = [d if isinstance(d, dict) else d.to_dict() for d in bundle["deformation"]]
        return {"schema_version": SCHEMA_VERSION, "name": self.name, "grid": grid, "bundle": bundle,
                "flow": self.flow, "initial": self.initial, "outputs": self.outputs}


def _parse_grid(block: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    merged = {**defaults, **block}
    n1 = _as_int(merged["n1"], "grid.n1", minimum=8)
    n2 = _as_int(merged["n2"], "grid.n2", minimum=8)
    tau = _as_complex(merged["tau"], "grid.tau")
    if tau.imag <= 0:
        raise ScenarioError("grid.tau", f"imaginary part must be positive, got {tau}")
    k = _as_int(merged["k"], "grid.k")
    if k not in ORBIFOLD_ORDERS:
        raise ScenarioError("grid.k", f"must be one of {ORBIFOLD_ORDERS}, got {k}")
    if k == 2 and (n1 % 2 or n2 % 2):
        raise ScenarioError("grid.k", "order 2 needs even grid sizes")
    if k == 4 and (n1 != n2 or abs(tau - 1j) > 1e-14):
        raise ScenarioError("grid.k", "order 4 needs a square grid and tau = i")
    scheme = merged["scheme"]
    if scheme not in SCHEMES:
        raise ScenarioError("grid.scheme", f"must be one of {SCHEMES}, got {scheme!r}")
    return {"n1": n1, "n2": n2, "tau": tau, "k": k, "scheme": scheme}


def _parse_isotropy(value, rank: int):
    if value is None or value == "trivial":
        return None
    if isinstance(value, dict) and "diagonal" in value:
        entries = value["diagonal"]
        if not isinstance(entries, list) or len(entries) != rank:
            raise ScenarioError("bundle.isotropy.diagonal", f"expected {rank} entries")
        return np.diag([_as_complex(e, f"bundle.isotropy.diagonal[{i}]") for i, e in enumerate(entries)])
    raise ScenarioError("bundle.isotropy", f"expected 'trivial' or {{'diagonal': [...]}}, got {value!r}")


def _parse_bundle(block: Dict[str, Any]) -> Dict[str, Any]:
    rank = _as_int(_require(block, "rank", "bundle"), "bundle.rank", minimum=1)
    twists = _require(block, "twists", "bundle")
    if not isinstance(twists, list) or len(twists) != rank:
        raise ScenarioError("bundle.twists", f"expected a list of {rank} integers")
    twists = [_as_int(d, f"bundle.twists[{i}]") for i, d in enumerate(twists)]
    isotropy = _parse_isotropy(block.get("isotropy"), rank)
    deformation = []
    for i, entry in enumerate(block.get("deformation", []) or []):
        path = f"bundle.deformation[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(path, "expected an object with row, col, value")
        row = _as_int(_require(entry, "row", path), f"{path}.row", minimum=0)
        col = _as_int(_require(entry, "col", path), f"{path}.col", minimum=0)
        if row >= rank or col >= rank:
            raise ScenarioError(path, f"entry ({row}, {col}) outside rank {rank}")
        value = _as_complex(_require(entry, "value", path), f"{path}.value")
        characteristic = _as_int(entry.get("characteristic", 0), f"{path}.characteristic", minimum=0)
        deformation.append({"row": row, "col": col, "value": [value.real, value.imag],
                            "characteristic": characteristic})
    return {"rank": rank, "twists": twists, "isotropy": isotropy, "deformation": deformation}


def _parse_flow(block: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    merged = {**defaults, **block}
    unknown = set(merged) - set(FlowConfig.__dataclass_fields__)
    if unknown:
        raise ScenarioError(f"flow.{sorted(unknown)[0]}", "unknown field")
    if merged["scheme"] not in INTEGRATORS:
        raise ScenarioError("flow.scheme", f"must be one of {INTEGRATORS}, got {merged['scheme']!r}")
    parsed = dict(merged)
    parsed["dt"] = _as_float(merged["dt"], "flow.dt", positive=True)
    parsed["t_max"] = _as_float(merged["t_max"], "flow.t_max", positive=True)
    parsed["stop_tol"] = _as_float(merged["stop_tol"], "flow.stop_tol", positive=True)
    parsed["monitor_every"] = _as_int(merged["monitor_every"], "flow.monitor_every", minimum=1)
    if "converge_rows" in merged:
        parsed["converge_rows"] = _as_int(merged["converge_rows"], "flow.converge_rows", minimum=1)
    if not isinstance(merged.get("renormalize", False), bool):
        raise ScenarioError("flow.renormalize", "expected true or false")
    return parsed


def _parse_initial(block: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    merged = {**defaults, **block}
    kind = merged.get("kind")
    if kind not in INITIAL_KINDS:
        raise ScenarioError("initial.kind", f"must be one of {INITIAL_KINDS}, got {kind!r}")
    if kind == "file":
        return {"kind": kind, "path": str(_require(block, "path", "initial"))}
    if kind == "reference":
        return {"kind": kind}
    return {
        "kind": kind,
        "seed": _as_int(merged["seed"], "initial.seed", minimum=0),
        "amplitude": _as_float(merged["amplitude"], "initial.amplitude"),
        "mode_cutoff": _as_int(merged["mode_cutoff"], "initial.mode_cutoff", minimum=0),
    }


def _check_time_step(scenario: Scenario) -> None:
    flow = scenario.flow
    stiffness = scenario.build_grid().stiffness()
    limit = STABILITY_LIMITS[flow["scheme"]]
    if flow["dt"] * stiffness > limit:
        raise ScenarioError("flow.dt", f"dt * stiffness = {flow['dt'] * stiffness:.3g} exceeds the {flow['scheme']} "
                                       f"stability bound {limit}; use dt <= {limit / stiffness:.3g}")


def parse_scenario(data: Dict[str, Any], config=None, source: Optional[Path] = None) -> Scenario:
    """
    Validate a decoded scenario document.

    Raises:
        ScenarioError: Naming the first offending field
    """
    config = config or Config()
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    for key in ("grid", "bundle", "flow", "initial", "outputs"):
        if key in data and not isinstance(data[key], dict):
            raise ScenarioError(key, "expected an object")

    scenario = Scenario(
        name=str(data.get("name", source.stem if source else "scenario")),
        grid=_parse_grid(data.get("grid", {}), config.default_grid),
        bundle=_parse_bundle(_require(data, "bundle", "<root>")),
        flow=_parse_flow(data.get("flow", {}), config.default_flow),
        initial=_parse_initial(data.get("initial", {}), config.default_initial),
        outputs=dict(data.get("outputs", {})),
        source=source,
    )
    _check_time_step(scenario)
    return scenario


def load_scenario(path, config=None) -> Scenario:
    """
    Read and validate a scenario file.

    Raises:
        ScenarioError: On unreadable JSON (with line and column) or invalid fields
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(str(path), f"cannot read file: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path.name}:{e.lineno}:{e.colno}", e.msg) from e
    scenario = parse_scenario(data, config, path)
    logger.info(f"Loaded scenario {scenario.name!r} from {path}")
    return scenario
