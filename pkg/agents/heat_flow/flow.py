"""
Time integration of the heat flow dH/dt = -(i/2) H (Lambda F_H - lambda I).

Writing dH/dt = H X with X = -(i/2)(Lambda F_H - lambda I), X is H-self-adjoint
and every scheme advances H by right-multiplication with an exponential of an
H-self-adjoint field, which keeps H Hermitian positive-definite and makes the
change of int Tr(s) exactly dt * int Tr(X).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .bundle import BundleData, flat_reference_metric, relate_metrics, sigma_field, sigma_distance
from .chern import curvature, dbar_end, lambda_constant
from .donaldson import mk_spectral, mk_value, trace_integral
from .fields import EndoField, MetricField
from .geometry import OrbifoldGrid
from .spectral_calc import EXP, lp_norm, phi_of_s, pointwise_norm

logger = logging.getLogger(__name__)

INTEGRATORS = ("explicit-euler", "rk4", "semi-implicit")
STABILITY_LIMITS = {"explicit-euler": 2.0, "rk4": 2.78, "semi-implicit": np.inf}
TRACE_COLUMNS = ["t", "M_K", "sup_dev", "l2_dev", "trace_int", "sigma_prev", "c0_s"]
RK4_NODES = (0.0, 0.5, 0.5, 1.0)
RK4_WEIGHTS = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)
EQUIVARIANCE_TOL = 1e-9

CONVERGED = "converged"
T_MAX_REACHED = "t_max_reached"
DIVERGED = "diverged"


class FlowError(RuntimeError):
    """Integration failure, carrying the offending site when known"""

    def __init__(self, message: str, site: Optional[Tuple[int, ...]] = None):
        super().__init__(message)
        self.site = site


@dataclass
class FlowConfig:
    """Integrator settings for run_flow"""

    dt: float = 1e-3
    t_max: float = 1.0
    scheme: str = "rk4"
    monitor_every: int = 10
    stop_tol: float = 1e-6
    renormalize: bool = False
    converge_rows: int = 10
    divergence_cond: float = 1e12
    keep_snapshots: bool = True

    def validate(self, grid: OrbifoldGrid) -> None:
        """
        Check the settings against the grid.

        Raises:
            ValueError: On invalid settings or a time step beyond the stability bound
        """
        if self.scheme not in INTEGRATORS:
            raise ValueError(f"Unknown integrator {self.scheme!r}; expected one of {INTEGRATORS}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.monitor_every < 1 or self.converge_rows < 1:
            raise ValueError("monitor_every and converge_rows must be at least 1")
        product = self.dt * grid.stiffness()
        limit = STABILITY_LIMITS[self.scheme]
        if product > limit:
            raise ValueError(f"dt * stiffness = {product:.3g} exceeds the {self.scheme} stability bound {limit}; "
                             f"use dt <= {limit / grid.stiffness():.3g} or the semi-implicit scheme")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowRow:
    t: float
    M_K: float
    sup_dev: float
    l2_dev: float
    trace_int: float
    sigma_prev: float
    c0_s: float
    ell: float = 0.0
    drift: float = 0.0
    equivariance: float = 0.0


@dataclass
class FlowTrace:
    """Monitor rows, terminal status and retained states of one run"""

    rows: List[FlowRow] = field(default_factory=list)
    status: str = T_MAX_REACHED
    message: str = ""
    snapshots: List[Tuple[float, MetricField]] = field(default_factory=list)
    last_valid: Optional[MetricField] = None
    diverged_site: Optional[Tuple[int, ...]] = None
    steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=[*TRACE_COLUMNS, "ell", "drift", "equivariance"])

    def write_csv(self, path) -> None:
        self.to_dataframe()[TRACE_COLUMNS].to_csv(path, index=False, float_format="%.17g")

    def s_history(self, K: MetricField) -> List[EndoField]:
        return [relate_metrics(H, K) for _, H in self.snapshots]

    def summary(self) -> dict:
        final = self.rows[-1] if self.rows else None
        return {
            "status": self.status,
            "message": self.message,
            "steps": self.steps,
            "rows": len(self.rows),
            "final": asdict(final) if final else None,
            "diverged_site": list(self.diverged_site) if self.diverged_site else None,
        }


# ----------------------------------------------------------------------
# single steps
# ----------------------------------------------------------------------

def velocity(H: MetricField, bundle: BundleData, lam: complex) -> EndoField:
    """X = -(i/2)(Lambda F_H - lambda I), so that dH/dt = H X"""
    lambda_F = curvature(H, bundle, lam).lambda_F.values
    return EndoField(-0.5j * (lambda_F - lam * np.eye(bundle.rank)))


def _exp_step(H: MetricField, Y: EndoField) -> MetricField:
    return MetricField(H.values @ phi_of_s(EXP, Y, H).values)


def _transport(H: MetricField, shift: EndoField, k: EndoField) -> EndoField:
    """Move an H e^shift - self-adjoint velocity back to an H-self-adjoint one"""
    half = shift.scale(0.5)
    P = phi_of_s(EXP, half, H).values
    P_inv = phi_of_s(EXP, half.scale(-1.0), H).values
    return EndoField(P @ k.values @ P_inv)


def _rk4_exponent(H: MetricField, bundle: BundleData, dt: float, lam: complex) -> EndoField:
    total = None
    previous = None
    for node, weight in zip(RK4_NODES, RK4_WEIGHTS):
        if previous is None:
            k = velocity(H, bundle, lam)
        else:
            shift = previous.scale(node * dt)
            k = _transport(H, shift, velocity(_exp_step(H, shift), bundle, lam))
        total = k.scale(weight) if total is None else total + k.scale(weight)
        previous = k
    return total.scale(dt)


def _semi_implicit_exponent(H: MetricField, bundle: BundleData, dt: float, lam: complex) -> EndoField:
    if np.any(bundle.charges):
        raise FlowError("The semi-implicit scheme needs equal twist degrees on every factor")
    grid = bundle.grid
    K0 = flat_reference_metric(bundle)
    h = np.linalg.solve(K0.values, H.values)
    X = velocity(H, bundle, lam).values
    rate = grid.flow_rate_symbol()[..., None, None]
    filtered = np.fft.ifft2(np.fft.fft2(h @ (dt * X), axes=(0, 1)) / (1.0 + dt * rate), axes=(0, 1))
    return EndoField(np.linalg.solve(h, filtered))


def _check_positive(H: MetricField) -> None:
    if not np.all(np.isfinite(H.values)):
        site = tuple(int(i) for i in np.argwhere(~np.isfinite(H.values))[0][:2])
        raise FlowError("Metric became non-finite", site)
    eigenvalues = np.linalg.eigvalsh(H.values)
    if np.min(eigenvalues) <= 0:
        site = np.unravel_index(np.argmin(np.min(eigenvalues, axis=-1)), eigenvalues.shape[:-1])
        raise FlowError("Metric lost positivity", tuple(int(i) for i in site))


def renormalize_trace(H: MetricField, K: MetricField, grid: OrbifoldGrid) -> MetricField:
    """Scale H by e^{-c} so that int Tr(log(K^-1 H)) = 0"""
    s = relate_metrics(H, K)
    c = trace_integral(s, grid) / (H.rank * grid.volume)
    return MetricField(H.values * np.exp(-c), dict(H.notes))


def heat_step(H: MetricField, bundle: BundleData, dt: float, scheme: str = "rk4",
              lam: Optional[complex] = None) -> MetricField:
    """
    Advance the flow by one step.

    Args:
        H: Current metric
        bundle: Bundle data
        dt: Time step; 0 returns H unchanged
        scheme: explicit-euler, rk4 or semi-implicit
        lam: Hermitian-Einstein constant; computed from the bundle when omitted

    Returns:
        New MetricField with notes["drift"] holding the symmetrization size

    Raises:
        ValueError: If dt < 0 or the scheme is unknown
        FlowError: If the new metric is not positive-definite
    """
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if scheme not in INTEGRATORS:
        raise ValueError(f"Unknown integrator {scheme!r}")
    if dt == 0:
        return MetricField(H.values.copy(), {"drift": 0.0})
    lam = lambda_constant(bundle) if lam is None else lam

    if scheme == "explicit-euler":
        exponent = velocity(H, bundle, lam).scale(dt)
    elif scheme == "rk4":
        exponent = _rk4_exponent(H, bundle, dt, lam)
    else:
        exponent = _semi_implicit_exponent(H, bundle, dt, lam)

    raw = _exp_step(H, exponent)
    new = raw.symmetrized()
    drift = float(np.max(np.abs(new.values - raw.values)))
    _check_positive(new)
    return MetricField(new.values, {"drift": drift})


# ----------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------

def _reproject(H: MetricField, bundle: BundleData) -> Tuple[MetricField, float]:
    """Project K0^-1 H onto invariant endomorphisms; returns the projected metric and the correction size"""
    grid = bundle.grid
    K0 = flat_reference_metric(bundle)
    h = np.linalg.solve(K0.values, H.values)
    projected = grid.group_project(EndoField(h), isotropy=bundle.isotropy, charges=bundle.charges).values
    correction = float(np.max(np.abs(projected - h)))
    return MetricField(K0.values @ projected).symmetrized(), correction


def _condition(H: MetricField, K: MetricField) -> Tuple[float, Tuple[int, ...]]:
    s = relate_metrics(H, K)
    eigenvalues = np.linalg.eigvalsh(0.5 * (s.values + np.conj(np.swapaxes(s.values, -1, -2))))
    spread = eigenvalues[..., -1] - eigenvalues[..., 0]
    site = np.unravel_index(np.argmax(spread), spread.shape)
    return float(np.exp(np.max(spread))), tuple(int(i) for i in site)


def monitor_row(t: float, H: MetricField, K: MetricField, bundle: BundleData, lam: complex,
                previous: Optional[MetricField], drift: float = 0.0, equivariance: float = 0.0) -> FlowRow:
    grid = bundle.grid
    report = curvature(H, bundle, lam)
    s = relate_metrics(H, K)
    pointwise = pointwise_norm(s, K.values)
    return FlowRow(
        t=t,
        M_K=mk_value(H, K, bundle).value,
        sup_dev=report.sup_dev,
        l2_dev=report.l2_dev,
        trace_int=trace_integral(s, grid),
        sigma_prev=sigma_distance(previous, H) if previous is not None else 0.0,
        c0_s=float(np.max(pointwise)),
        ell=lp_norm(pointwise, 4, grid.cell_area),
        drift=drift,
        equivariance=equivariance,
    )


def run_flow(H0: MetricField, bundle: BundleData, config: FlowConfig, K: Optional[MetricField] = None) -> FlowTrace:
    """
    Integrate the flow from H0 until convergence, t_max or divergence.

    Args:
        H0: Initial metric
        bundle: Bundle data
        config: Integrator settings
        K: Background metric for M_K and s; defaults to H0

    Returns:
        FlowTrace with monitor rows and the terminal status
    """
    grid = bundle.grid
    config.validate(grid)
    K = H0 if K is None else K
    lam = lambda_constant(bundle)
    trace_out = FlowTrace()

    H = H0
    t = 0.0
    step = 0
    below = 0
    drift = 0.0
    equivariance = 0.0
    previous = None
    total_steps = int(round(config.t_max / config.dt))
    logger.info(f"Starting {config.scheme} flow: dt={config.dt}, t_max={config.t_max}, {total_steps} steps")

    while True:
        if step % config.monitor_every == 0:
            cond, site = _condition(H, K)
            if cond > config.divergence_cond:
                trace_out.status = DIVERGED
                trace_out.message = f"cond(K^-1 H) = {cond:.3e} at site {site}"
                trace_out.diverged_site = site
                logger.warning(f"Flow diverged at t={t:.4g}: {trace_out.message}")
                break
            row = monitor_row(t, H, K, bundle, lam, previous, drift, equivariance)
            trace_out.rows.append(row)
            if config.keep_snapshots:
                trace_out.snapshots.append((t, H))
            previous = H
            logger.debug(f"t={t:.4g} M_K={row.M_K:.6g} sup_dev={row.sup_dev:.3e} l2_dev={row.l2_dev:.3e}")

            if row.l2_dev < config.stop_tol:
                below += 1
                if below >= config.converge_rows or len(trace_out.rows) == 1:
                    trace_out.status = CONVERGED
                    trace_out.message = f"l2_dev below {config.stop_tol:g} at t={t:.4g}"
                    break
            else:
                below = 0
        if step >= total_steps:
            trace_out.status = T_MAX_REACHED
            trace_out.message = f"t_max={config.t_max} reached"
            break

        trace_out.last_valid = H
        try:
            H_next = heat_step(H, bundle, config.dt, config.scheme, lam)
        except FlowError as e:
            trace_out.status = DIVERGED
            trace_out.message = str(e)
            trace_out.diverged_site = e.site
            logger.warning(f"Flow diverged at t={t:.4g}: {e}")
            break
        drift = max(drift, H_next.notes.get("drift", 0.0))
        if grid.k > 1:
            H_next, correction = _reproject(H_next, bundle)
            if correction > EQUIVARIANCE_TOL and equivariance <= EQUIVARIANCE_TOL:
                logger.warning(f"Step at t={t:.4g} broke equivariance by {correction:.3e}; "
                               "projected back onto invariant metrics")
            equivariance = max(equivariance, correction)
        if config.renormalize or config.scheme == "semi-implicit":
            H_next = renormalize_trace(H_next, K, grid)
        H = H_next
        step += 1
        t = step * config.dt

    trace_out.steps = step
    trace_out.last_valid = H if trace_out.status != DIVERGED else trace_out.last_valid
    logger.info(f"Flow finished with status {trace_out.status} after {step} steps ({trace_out.message})")
    return trace_out


# ----------------------------------------------------------------------
# post-processing of recorded runs
# ----------------------------------------------------------------------

def c0_control_fit(trace_in: FlowTrace, s_history: Optional[List[EndoField]] = None,
                   K: Optional[MetricField] = None, grid: Optional[OrbifoldGrid] = None):
    """
    Fit sup|s_t| <= C1 + C2 * || |s_t|^2 ||_{L2}^{1/2} over a run.

    Returns:
        (C1, C2, max_violation); max_violation <= 0 certifies the bound
    """
    if s_history is not None:
        pointwise = [pointwise_norm(s, K.values if K is not None else None) for s in s_history]
        y = np.array([np.max(p) for p in pointwise])
        x = np.array([lp_norm(p, 4, grid.cell_area) for p in pointwise])
    else:
        y = trace_in.column("c0_s")
        x = trace_in.column("ell")
    if y.size == 0:
        return 0.0, 0.0, 0.0
    if np.ptp(x) > 0:
        design = np.column_stack([np.ones_like(x), x])
        coeffs, *_ = np.linalg.lstsq(design, y, rcond=None)
        C2 = max(float(coeffs[1]), 0.0)
    else:
        C2 = 0.0
    C1 = float(np.max(y - C2 * x))
    violation = float(np.max(y - C1 - C2 * x))
    return C1, C2, violation


def heat_kernel_comparison(trace_in: FlowTrace, grid: OrbifoldGrid, lags: int = 1, horizons=(1, 2)) -> List[Dict]:
    """
    Compare sup sigma(H_{t+t'}, H_{t+t'+tau}) with c(t') * int sigma(H_t, H_{t+tau}).

    tau and t' are multiples of the snapshot spacing given by `lags` and
    `horizons`.

    Returns:
        One dict per sampled (t, tau, t') with lhs, rhs and a violation flag
    """
    snaps = trace_in.snapshots
    results = []
    for i in range(len(snaps)):
        for horizon in horizons:
            j = i + horizon
            if j + lags >= len(snaps):
                continue
            t, H_t = snaps[i]
            _, H_t_tau = snaps[i + lags]
            t_later, H_later = snaps[j]
            _, H_later_tau = snaps[j + lags]
            t_prime = t_later - t
            lhs = float(np.max(sigma_field(H_later, H_later_tau)))
            rhs = grid.heat_kernel_sup(t_prime) * float(np.real(grid.integrate(sigma_field(H_t, H_t_tau))))
            results.append({"t": t, "tau": snaps[i + lags][0] - t, "t_prime": t_prime,
                            "lhs": lhs, "rhs": rhs, "violated": lhs > rhs + 1e-12})
    return results


def l21_bound_check(trace_in: FlowTrace, bundle: BundleData, K: MetricField) -> List[Dict]:
    """
    Track ||partial_K s_t||_{L2} against (1 + sqrt(2) sup|s_t|) times the quadratic part of M_K.

    The quadratic part dominates int |dbar s|^2 / (1 + sqrt(2)|s|) pointwise,
    so each row satisfies grad^2 <= bound.
    """
    grid = bundle.grid
    rows = []
    for (t, H), s in zip(trace_in.snapshots, trace_in.s_history(K)):
        if not np.any(s.values):
            rows.append({"t": t, "grad_sq": 0.0, "bound": 0.0})
            continue
        grad_sq = float(np.sum(pointwise_norm(dbar_end(s, bundle), K.values) ** 2) * grid.cell_area)
        quadratic = mk_spectral(s, K, bundle).extras["quadratic"]
        c0 = float(np.max(pointwise_norm(s, K.values)))
        rows.append({"t": t, "grad_sq": grad_sq, "bound": (1.0 + np.sqrt(2.0) * c0) * quadratic})
    return rows


def dissipation_check(trace_in: FlowTrace) -> np.ndarray:
    """Relative mismatch between the M_K slope and -l2_dev^2 at interior rows"""
    t = trace_in.column("t")
    mk = trace_in.column("M_K")
    l2 = trace_in.column("l2_dev")
    if t.size < 3:
        return np.array([])
    slope = (mk[2:] - mk[:-2]) / (t[2:] - t[:-2])
    expected = -l2[1:-1] ** 2
    return np.abs(slope - expected) / np.maximum(np.abs(expected), 1e-300)


def monotonicity_violations(trace_in: FlowTrace, column: str) -> float:
    """Largest increase between consecutive rows of a column"""
    values = trace_in.column(column)
    if values.size < 2:
        return 0.0
    return float(max(np.max(np.diff(values)), 0.0))
