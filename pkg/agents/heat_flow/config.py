"""
Configuration module for the heat flow lab
"""

import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_override() -> Optional[int]:
    """Pin BLAS/FFT thread pools before numpy is imported"""
    value = os.getenv("HEATFLOW_THREADS")
    if not value:
        return None
    for name in THREAD_VARIABLES:
        os.environ.setdefault(name, value)
    return int(value) if value.isdigit() else None


_apply_thread_override()


class Config:
    """Configuration class for the heat flow lab"""

    def __init__(self, tolerance_scale: float = 1.0):
        self.threads_raw = os.getenv("HEATFLOW_THREADS")
        self.threads = int(self.threads_raw) if self.threads_raw and self.threads_raw.isdigit() else None
        self.tolerance_scale = tolerance_scale

        # Defaults used when a scenario omits a block
        self.default_grid = {"n1": 32, "n2": 32, "tau": [0.0, 1.0], "k": 1, "scheme": "spectral"}
        self.default_flow = {"dt": 5e-4, "t_max": 1.0, "scheme": "rk4", "monitor_every": 10,
                             "stop_tol": 1e-6, "renormalize": False}
        self.default_initial = {"kind": "random", "seed": 0, "amplitude": 0.3, "mode_cutoff": 2}
        self.ell_threshold = 10.0
        self.gap_tol = 0.05

        self._validate_config()

    def _validate_config(self) -> None:
        """Validate configuration values"""
        invalid_configs = []
        if self.threads_raw and (self.threads is None or self.threads < 1):
            invalid_configs.append(f"HEATFLOW_THREADS={self.threads_raw}")
        if self.tolerance_scale < 0:
            invalid_configs.append(f"tolerance_scale={self.tolerance_scale}")

        if invalid_configs:
            raise ValueError(f"Invalid configuration: {', '.join(invalid_configs)}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {
            "threads": self.threads,
            "tolerance_scale": self.tolerance_scale,
            "default_grid": self.default_grid,
            "default_flow": self.default_flow,
            "default_initial": self.default_initial,
            "ell_threshold": self.ell_threshold,
            "gap_tol": self.gap_tol,
        }

    def get_probe_config(self) -> Dict[str, Any]:
        """Get destabilization probe settings"""
        return {
            "ell_threshold": self.ell_threshold,
            "gap_tol": self.gap_tol,
        }

    def is_thread_override_configured(self) -> bool:
        """Check if a thread count override is in effect"""
        return self.threads is not None
