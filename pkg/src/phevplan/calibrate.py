"""Least-squares calibration of efficiencies and the fuel curve from traces.

Efficiencies are modelled per slot as a linear function of seven speed and
acceleration features; the fuel map is a quadratic in engine output.  Both
fits solve column-scaled normal equations.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .model import FuelCurve, VehicleParams, drivetrain_power_arrays

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "speed", "batt_power", "engine_charge_power", "engine_output", "fuel_rate")
FEATURE_NAMES = ("v2", "v", "a_plus2", "a_plus", "a_minus2", "a_minus", "bias")
TARGETS = ("discharge", "regen", "engine_charge")
RIDGE = 1e-10
# physical range of each efficiency target
_RANGES = {"discharge": (1.0, math.inf), "regen": (0.0, 1.0), "engine_charge": (0.0, 1.0)}


class CalibrationError(ValueError):
    pass


class TraceFormatError(CalibrationError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ObdTrace:
    """Measured trace, one record per slot.

    ``batt_power`` is positive while the battery discharges and negative
    while it charges.  ``engine_charge_power`` is the power the battery
    receives from the engine.
    """

    t: np.ndarray
    speed: np.ndarray
    batt_power: np.ndarray
    engine_charge_power: np.ndarray
    engine_output: np.ndarray
    fuel_rate: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in TRACE_COLUMNS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise CalibrationError(f"column {name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        if n == 0:
            raise CalibrationError("empty trace")
        if np.any(self.speed < 0):
            raise CalibrationError(f"negative speed at row {int(np.argmax(self.speed < 0))}")
        if np.any(np.diff(self.t) <= 0):
            raise CalibrationError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def prev_speed(self) -> np.ndarray:
        # the first record has no predecessor; treat it as steady
        return np.concatenate([self.speed[:1], self.speed[:-1]])

    def loads(self, params: VehicleParams = VehicleParams()):
        """Drivetrain ``(P+, P-)`` per record on a flat road."""
        _, pp, pm = drivetrain_power_arrays(self.speed, 0.0, self.prev_speed, params)
        return pp, pm


def load_trace(path) -> ObdTrace:
    """Read a CSV trace with header ``t,speed,batt_power,engine_charge_power,
    engine_output,fuel_rate``.  Errors name the offending line."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("empty trace")
        header = [h.strip() for h in header]
        if tuple(header) != TRACE_COLUMNS:
            raise TraceFormatError(
                f"expected header {','.join(TRACE_COLUMNS)}, got {','.join(header)}", 1
            )
        rows = []
        last_t = -math.inf
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise TraceFormatError(f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}", line)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise TraceFormatError(f"not a number ({exc})", line) from None
            if not all(math.isfinite(v) for v in vals):
                raise TraceFormatError("non-finite value", line)
            if vals[1] < 0:
                raise TraceFormatError(f"negative speed {vals[1]}", line)
            if vals[0] <= last_t:
                raise TraceFormatError("timestamps must be strictly increasing", line)
            last_t = vals[0]
            rows.append(vals)
    if not rows:
        raise TraceFormatError("empty trace")
    cols = np.array(rows).T
    return ObdTrace(*cols)


def features(speed, prev_speed) -> np.ndarray:
    """Design matrix with columns ``v^2, v, a+^2, a+, a-^2, a-, 1``."""
    v = np.asarray(speed, dtype=float)
    a = v - np.asarray(prev_speed, dtype=float)
    ap, am = np.maximum(a, 0.0), np.maximum(-a, 0.0)
    return np.column_stack([v * v, v, ap * ap, ap, am * am, am, np.ones_like(v)])


def least_squares(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS via column-scaled normal equations, with a tiny ridge fallback.

    Raises ``CalibrationError`` when the design matrix is rank deficient.
    """
    n, k = x.shape
    if n < k:
        raise CalibrationError(f"need at least {k} usable rows, got {n}")
    scale = np.linalg.norm(x, axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(x / scale) < k:
        raise CalibrationError(
            "design matrix is rank deficient; collect data with more varied speed and acceleration"
        )
    xs = x / scale
    gram, rhs = xs.T @ xs, xs.T @ y
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError:
        factor = linalg.cho_factor(gram + RIDGE * np.eye(k))
    beta = linalg.cho_solve(factor, rhs)
    # one refinement step recovers the accuracy lost to squaring the condition
    beta += linalg.cho_solve(factor, xs.T @ (y - xs @ beta))
    return beta / scale


@dataclass(frozen=True)
class EffRegression:
    target: str
    coeffs: np.ndarray
    rows_used: int
    residual_rms: float

    def predict(self, speed, prev_speed) -> np.ndarray:
        lo, hi = _RANGES[self.target]
        return np.clip(features(speed, prev_speed) @ self.coeffs, lo, hi)


def efficiency_samples(trace: ObdTrace, target: str, params: VehicleParams = VehicleParams()):
    """Per-record efficiency ratios for ``target`` and the rows they came from.

    Discharge uses electric-only records (battery out, engine off),
    ``eta_d = P_B / P+``.  Regen uses ``eta_r = -P_B / P-`` on braking
    records.  Engine charging uses ``eta_e = u_B / (Q - P+)`` wherever the
    engine produced more than the load.
    """
    if target not in TARGETS:
        raise CalibrationError(f"unknown target {target!r}; expected one of {TARGETS}")
    pp, pm = trace.loads(params)
    if target == "discharge":
        rows = (pp > 0) & (trace.batt_power > 0) & (trace.engine_output <= 0)
        ratio = trace.batt_power[rows] / pp[rows]
    elif target == "regen":
        rows = (pm > 0) & (trace.batt_power < 0)
        ratio = -trace.batt_power[rows] / pm[rows]
    else:
        surplus = trace.engine_output - pp
        rows = (surplus > 0) & (trace.engine_charge_power > 0)
        ratio = trace.engine_charge_power[rows] / surplus[rows]
    return np.flatnonzero(rows), ratio


def fit_efficiency(
    trace: ObdTrace, target: str, params: VehicleParams = VehicleParams()
) -> EffRegression:
    idx, ratio = efficiency_samples(trace, target, params)
    lo, hi = _RANGES[target]
    clipped = np.clip(ratio, lo, hi)
    n_out = int(np.count_nonzero(clipped != ratio))
    if n_out:
        log.warning("%s: %d of %d ratios outside [%g, %g] were clamped", target, n_out, len(ratio), lo, hi)
    x = features(trace.speed[idx], trace.prev_speed[idx])
    # a feature that never fires (e.g. acceleration while braking on a flat
    # road) is unidentifiable; it gets a zero coefficient
    live = np.any(x != 0, axis=0)
    if not live.all():
        dead = [FEATURE_NAMES[i] for i in np.flatnonzero(~live)]
        log.info("%s: features %s never occur and are fixed at 0", target, dead)
    coeffs = np.zeros(x.shape[1])
    coeffs[live] = least_squares(x[:, live], clipped)
    rms = float(np.sqrt(np.mean((x @ coeffs - clipped) ** 2)))
    return EffRegression(target, coeffs, len(idx), rms)


def fit_fuel(q, fuel, rtol: float = 1e-9) -> FuelCurve:
    """Quadratic least-squares fuel curve through ``(Q, fuel)`` pairs.

    The fit must be convex and nondecreasing over the observed range, and its
    coefficients non-negative up to ``rtol`` round-off.
    """
    q = np.asarray(q, dtype=float)
    fuel = np.asarray(fuel, dtype=float)
    if q.shape != fuel.shape:
        raise CalibrationError("Q and fuel arrays differ in length")
    keep = q > 0
    q, fuel = q[keep], fuel[keep]
    if np.unique(q).size < 3:
        raise CalibrationError("need at least 3 distinct engine outputs Q > 0")
    x = np.column_stack([q * q, q, np.ones_like(q)])
    g2, g1, g0 = least_squares(x, fuel)
    tol = rtol * max(1.0, float(np.abs(fuel).max()))
    if g2 < -tol:
        raise CalibrationError(f"fitted fuel curve is not convex (gamma2={g2:.3g})")
    if 2 * g2 * q.min() + g1 < -tol:
        raise CalibrationError("fitted fuel curve decreases over the observed range")
    if g1 < -tol or g0 < -tol:
        raise CalibrationError(
            f"fitted coefficients must be non-negative (gamma1={g1:.3g}, gamma0={g0:.3g})"
        )
    return FuelCurve(max(g2, 0.0), max(g1, 0.0), max(g0, 0.0))


def fit_fuel_from_trace(trace: ObdTrace) -> FuelCurve:
    on = trace.engine_output > 0
    return fit_fuel(trace.engine_output[on], trace.fuel_rate[on])


def synthetic_trace(
    speed,
    lam_d,
    lam_r,
    mu_e,
    curve: FuelCurve,
    charge_power=0.0,
    params: VehicleParams = VehicleParams(),
    noise: float = 0.0,
    rng=None,
) -> ObdTrace:
    """Trace generated from known coefficients.

    Accelerating or cruising records alternate between electric-only driving
    (odd index) and engine driving that also charges the battery with
    ``charge_power`` (even index).  ``noise`` adds Gaussian noise to every
    efficiency ratio.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    speed = np.asarray(speed, dtype=float)
    n = speed.size
    prev = np.concatenate([speed[:1], speed[:-1]])
    x = features(speed, prev)
    _, pp, pm = drivetrain_power_arrays(speed, 0.0, prev, params)

    def eta(coeffs):
        return x @ np.asarray(coeffs, dtype=float) + noise * rng.standard_normal(n)

    eta_d, eta_r, eta_e = eta(lam_d), eta(lam_r), eta(mu_e)
    charge = np.broadcast_to(np.asarray(charge_power, dtype=float), (n,))
    electric = (np.arange(n) % 2 == 1) & (pp > 0)
    engine_on = (pp > 0) & ~electric
    u = np.where(engine_on, charge, 0.0)
    q = np.where(engine_on, pp + u, 0.0)
    batt = np.where(electric, eta_d * pp, 0.0) - np.where(pm > 0, eta_r * pm, 0.0) - eta_e * u
    fuel = np.asarray(curve(q))
    return ObdTrace(np.arange(n, dtype=float), speed, batt, eta_e * u, q, fuel)


__all__ = [
    "CalibrationError",
    "EffRegression",
    "FEATURE_NAMES",
    "ObdTrace",
    "TRACE_COLUMNS",
    "TraceFormatError",
    "efficiency_samples",
    "features",
    "fit_efficiency",
    "fit_fuel",
    "fit_fuel_from_trace",
    "least_squares",
    "load_trace",
    "synthetic_trace",
]
