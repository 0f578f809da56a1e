"""Vehicle load, fuel curve and the one-slot transition of each drive mode.

Power and per-slot energy share one unit: a slot lasts one time unit, so the
SoC and fuel bookkeeping below adds power terms directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Mode(str, enum.Enum):
    EV = "EV"
    CE = "CE"
    CS = "CS"
    AP = "AP"


# Tie-break / fallback priority: battery-favouring modes first.
MODE_PRIORITY = (Mode.EV, Mode.AP, Mode.CS, Mode.CE)


class InfeasibleModeError(ValueError):
    """A mode cannot be applied in the current state."""


class EVInfeasibleError(InfeasibleModeError):
    pass


class FuelExhaustedError(InfeasibleModeError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    """Road-load parameters. Defaults are the Chevrolet Volt values."""

    mass_kg: float = 1721.0
    gravity_m_s2: float = 9.81
    air_density_kg_m3: float = 1.226
    frontal_area_m2: float = 2.202
    drag_coeff: float = 0.28
    rolling_coeff: float = 0.01
    base_load_w: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.mass_kg <= 0:
            raise ValueError("mass_kg must be > 0")


@dataclass(frozen=True)
class ProfileStep:
    speed_m_s: float
    grade_rad: float = 0.0
    prev_speed_m_s: float = 0.0

    def __post_init__(self):
        if self.speed_m_s < 0 or self.prev_speed_m_s < 0:
            raise ValueError("speeds must be non-negative")


@dataclass(frozen=True)
class SlotCoeffs:
    """Efficiency coefficients and limits of one slot.

    ``engine_charge_cap_w`` is the most engine power that can go to the
    battery; ``ap_split`` is the largest share of the load the motor may
    carry in AP mode.
    """

    eta_r: float = 1.0
    eta_d: float = 1.0
    eta_e: float = 1.0
    engine_charge_cap_w: float = 0.0
    ap_split: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta_r <= 1:
            raise ValueError(f"eta_r must lie in (0, 1], got {self.eta_r}")
        if not self.eta_d >= 1:
            raise ValueError(f"eta_d must be >= 1, got {self.eta_d}")
        if not 0 < self.eta_e <= 1:
            raise ValueError(f"eta_e must lie in (0, 1], got {self.eta_e}")
        if not self.engine_charge_cap_w >= 0:
            raise ValueError("engine_charge_cap_w must be >= 0")
        if not 0 <= self.ap_split <= 1:
            raise ValueError(f"ap_split must lie in [0, 1], got {self.ap_split}")


@dataclass(frozen=True)
class FuelCurve:
    """Quadratic fuel map ``F(Q) = gamma2*Q**2 + gamma1*Q + gamma0`` for Q > 0.

    The engine burns nothing when off, so ``F(0) = 0`` whatever ``gamma0`` is.
    """

    gamma2: float
    gamma1: float
    gamma0: float = 0.0

    def __post_init__(self):
        if self.gamma2 < 0 or self.gamma1 < 0 or self.gamma0 < 0:
            raise ValueError("fuel curve coefficients must be non-negative")

    def __call__(self, q):
        return fuel_of(q, self)

    def per_unit(self, q):
        return per_unit_cost(q, self)

    def slope_bound(self, q_max: float) -> float:
        """Largest derivative of F on (0, q_max]."""
        return 2.0 * self.gamma2 * q_max + self.gamma1

    @property
    def tangent_point(self) -> float:
        """Q* where the line through the origin touches F; ``inf`` if never."""
        if self.gamma0 == 0:
            return 0.0
        if self.gamma2 == 0:
            return math.inf
        return math.sqrt(self.gamma0 / self.gamma2)

    @property
    def min_per_unit(self) -> float:
        """Infimum of F(Q)/Q over Q > 0."""
        qs = self.tangent_point
        if math.isinf(qs):
            return self.gamma1
        return 2.0 * self.gamma2 * qs + self.gamma1

    def envelope(self, q):
        """Convex envelope of F on [0, inf), equal to F at 0 and for Q >= Q*."""
        q = np.asarray(q, dtype=float)
        qs = self.tangent_point
        if math.isinf(qs):
            return self.gamma1 * q
        return self.min_per_unit * q + self.gamma2 * np.maximum(q - qs, 0.0) ** 2


@dataclass(frozen=True)
class VehicleState:
    soc: float
    fuel: float


@dataclass(frozen=True)
class ModeSet:
    ev: bool = True
    ce: bool = True
    cs: bool = True
    ap: bool = True

    def __post_init__(self):
        if not (self.ev or self.ce or self.cs or self.ap):
            raise ValueError("at least one drive mode must be available")

    def __contains__(self, mode) -> bool:
        return getattr(self, Mode(mode).value.lower())

    def available(self) -> tuple[Mode, ...]:
        """Available modes in priority order."""
        return tuple(m for m in MODE_PRIORITY if m in self)

    def without(self, mode) -> "ModeSet":
        flags = {m.value.lower(): (m in self and m != Mode(mode)) for m in Mode}
        return ModeSet(**flags)

    @classmethod
    def only(cls, *modes) -> "ModeSet":
        wanted = {Mode(m) for m in modes}
        return cls(**{m.value.lower(): m in wanted for m in Mode})


@dataclass(frozen=True)
class Transition:
    mode: Mode
    r: float
    s: float
    u: float
    engine_output: float
    fuel_used: float
    soc_before: float
    next_soc: float


def drivetrain_power(step: ProfileStep, params: VehicleParams = VehicleParams()):
    """Return ``(P, P_plus, P_minus)`` for one profile step, in watts."""
    return drivetrain_power_arrays(
        step.speed_m_s, step.grade_rad, step.prev_speed_m_s, params
    )


def drivetrain_power_arrays(speed, grade, prev_speed, params=VehicleParams()):
    """Vectorised road-load equation; accepts scalars or arrays."""
    v = np.asarray(speed, dtype=float)
    alpha = np.asarray(grade, dtype=float)
    accel = v - np.asarray(prev_speed, dtype=float)
    m, g = params.mass_kg, params.gravity_m_s2
    power = (
        params.air_density_kg_m3 * params.drag_coeff * params.frontal_area_m2 * v**3 / 2.0
        + m * g * np.sin(alpha) * v
        + m * g * params.rolling_coeff * v
        + m * v * accel
        + params.base_load_w
    )
    p_plus = np.maximum(power, 0.0)
    p_minus = -np.minimum(power, 0.0)
    if power.ndim == 0:
        return float(power), float(p_plus), float(p_minus)
    return power, p_plus, p_minus


def fuel_of(q, curve: FuelCurve):
    """Fuel burned at engine output ``q`` (zero when the engine is off)."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr < 0):
        raise ValueError("engine output must be non-negative")
    f = np.where(
        q_arr > 0, curve.gamma2 * q_arr**2 + curve.gamma1 * q_arr + curve.gamma0, 0.0
    )
    return float(f) if f.ndim == 0 else f


def per_unit_cost(q, curve: FuelCurve):
    """``F(q)/q``; undefined at ``q = 0``."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr <= 0):
        raise ValueError("per-unit fuel cost is undefined for q <= 0")
    f = curve.gamma2 * q_arr + curve.gamma1 + curve.gamma0 / q_arr
    return float(f) if f.ndim == 0 else f


def ev_feasible(soc: float, p_plus: float, eta_d: float, b_lo: float) -> bool:
    return p_plus <= (soc - b_lo) / eta_d


def _regen(soc, p_minus, eta_r, b_hi):
    return max(0.0, min(p_minus, (b_hi - soc) / eta_r))


def step_mode(
    state: VehicleState,
    mode,
    p_plus: float,
    p_minus: float,
    coeffs: SlotCoeffs,
    bounds: tuple[float, float],
    curve: FuelCurve,
) -> Transition:
    """Apply one slot of ``mode`` with the greedy controls of that mode.

    Raises ``EVInfeasibleError`` when EV cannot carry the whole load and
    ``FuelExhaustedError`` when the tank cannot cover the fuel needed.
    """
    mode = Mode(mode)
    b_lo, b_hi = bounds
    soc = state.soc
    eta_r, eta_d, eta_e = coeffs.eta_r, coeffs.eta_d, coeffs.eta_e

    r = _regen(soc, p_minus, eta_r, b_hi)
    s = u = 0.0
    if mode is Mode.EV:
        if not ev_feasible(soc, p_plus, eta_d, b_lo):
            raise EVInfeasibleError(
                f"EV needs {p_plus:g} but battery offers {(soc - b_lo) / eta_d:g}"
            )
        s = p_plus
        q = 0.0
    elif mode is Mode.CE:
        q = p_plus
    elif mode is Mode.CS:
        u = max(0.0, min(coeffs.engine_charge_cap_w, (b_hi - soc - eta_r * r) / eta_e))
        q = p_plus + u
    else:
        s = max(0.0, min(coeffs.ap_split * p_plus, (soc - b_lo) / eta_d))
        q = p_plus - s

    next_soc = soc + eta_r * r + eta_e * u - eta_d * s
    # absorb round-off at the bounds
    next_soc = min(max(next_soc, b_lo), b_hi)
    fuel = fuel_of(q, curve)
    if fuel > state.fuel:
        raise FuelExhaustedError(f"needs {fuel:g} fuel, tank holds {state.fuel:g}")
    return Transition(mode, r, s, u, q, fuel, soc, next_soc)
