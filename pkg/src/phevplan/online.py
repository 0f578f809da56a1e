"""Threshold-based online drive-mode selection.

Decisions use only the current state and the current slot.  Modes are tried
in the order EV -> AP -> CS -> CE; AP and CS are taken when their normalised
fuel cost is at or below a threshold, or when the cheaper fallbacks are
missing from the vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .dmop import ModeSchedule, TripInstance
from .model import (
    FuelCurve,
    InfeasibleModeError,
    Mode,
    ModeSet,
    SlotCoeffs,
    Transition,
    VehicleState,
    ev_feasible,
    fuel_of,
    per_unit_cost,
    step_mode,
)


class NoFeasibleMode(InfeasibleModeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    theta_ap: float
    theta_cs: float
    competitive_ratio: float = math.nan
    kappa: float = math.nan

    def __post_init__(self):
        if not (self.theta_ap > 0 and self.theta_cs > 0):
            raise ValueError("thresholds must be positive")


def compute_thresholds(
    f_min: float,
    f_max: float,
    eta_d_min: float,
    eta_e_min: float,
    eta_e_max: float,
) -> Thresholds:
    """Thresholds balancing the worst cases of running early vs late on fuel."""
    if not (0 < f_min <= f_max):
        raise ValueError(f"need 0 < f_min <= f_max, got {f_min}, {f_max}")
    if not (eta_d_min >= 1 and 0 < eta_e_min <= eta_e_max <= 1):
        raise ValueError("efficiency extrema out of range")
    kappa = max(1.0, 1.0 / (eta_e_max * eta_d_min))
    theta_cs = math.sqrt(f_max * f_min / (kappa * eta_d_min * eta_e_max))
    theta_ap = theta_cs * eta_d_min * eta_e_min
    cr = math.sqrt(kappa * f_max * eta_e_max / (f_min * eta_d_min)) / eta_e_min
    return Thresholds(theta_ap, theta_cs, cr, kappa)


@dataclass(frozen=True)
class BoundEstimate:
    """Running minimum and maximum of the per-unit fuel cost."""

    f_min_hat: float = math.inf
    f_max_hat: float = -math.inf
    samples: int = 0

    @property
    def empty(self) -> bool:
        return self.samples == 0


def update_bounds(est: BoundEstimate, q: float, curve: FuelCurve) -> BoundEstimate:
    """Fold the per-unit cost at engine output ``q`` into the estimate.

    Engine-off observations (``q <= 0``) carry no information and are skipped.
    """
    if q <= 0:
        return est
    f = per_unit_cost(q, curve)
    if est.empty:
        return BoundEstimate(f, f, 1)
    return BoundEstimate(min(est.f_min_hat, f), max(est.f_max_hat, f), est.samples + 1)


def _normalized(fuel: float, energy: float) -> float:
    # no engine energy drawn means no fuel is burnt either
    return 0.0 if energy <= 0 else fuel / energy


def choose_mode(
    soc: float,
    p_plus: float,
    p_minus: float,
    coeffs: SlotCoeffs,
    bounds: tuple[float, float],
    curve: FuelCurve,
    thresholds: Thresholds,
    modes: ModeSet,
) -> Mode:
    b_lo, b_hi = bounds
    r = min(p_minus, (b_hi - soc) / coeffs.eta_r)
    s_cand = min(coeffs.ap_split * p_plus, (soc - b_lo) / coeffs.eta_d)
    u_cand = min(
        coeffs.engine_charge_cap_w, (b_hi - soc - coeffs.eta_r * r) / coeffs.eta_e
    )
    s_cand, u_cand = max(s_cand, 0.0), max(u_cand, 0.0)

    if modes.ev and ev_feasible(soc, p_plus, coeffs.eta_d, b_lo):
        return Mode.EV
    if modes.ap:
        q_ap = p_plus - s_cand
        cost_ap = _normalized(fuel_of(q_ap, curve), q_ap)
        if cost_ap <= thresholds.theta_ap or not (modes.cs and modes.ce):
            return Mode.AP
    if modes.cs:
        cost_cs = _normalized(
            fuel_of(p_plus + u_cand, curve), p_plus + coeffs.eta_e * u_cand
        )
        if cost_cs <= thresholds.theta_cs or not modes.ce:
            return Mode.CS
    if modes.ce:
        return Mode.CE
    raise NoFeasibleMode("no available drive mode can serve this slot")


def online_step(
    state: VehicleState,
    p_plus: float,
    p_minus: float,
    coeffs: SlotCoeffs,
    bounds: tuple[float, float],
    curve: FuelCurve,
    thresholds: Thresholds,
    modes: ModeSet = ModeSet(),
) -> Transition:
    """One online decision, realised with the greedy per-mode controls."""
    mode = choose_mode(
        state.soc, p_plus, p_minus, coeffs, bounds, curve, thresholds, modes
    )
    return step_mode(state, mode, p_plus, p_minus, coeffs, bounds, curve)


@dataclass
class OnlineController:
    """Online controller for one trip.

    With ``thresholds=None`` the thresholds are rebuilt each slot from the
    per-unit costs and efficiency extrema seen so far; the current slot's
    load is folded in before deciding.
    """

    bounds: tuple[float, float]
    curve: FuelCurve
    modes: ModeSet
    state: VehicleState
    thresholds: Optional[Thresholds] = None
    estimate: BoundEstimate = BoundEstimate()
    eta_d_min: float = math.inf
    eta_e_min: float = math.inf
    eta_e_max: float = -math.inf

    @classmethod
    def for_instance(cls, instance: TripInstance, thresholds=None) -> "OnlineController":
        return cls(
            instance.bounds,
            instance.curve,
            instance.modes,
            VehicleState(instance.b0, instance.g0),
            thresholds,
        )

    def current_thresholds(self) -> Thresholds:
        if self.thresholds is not None:
            return self.thresholds
        if self.estimate.empty or self.estimate.f_min_hat <= 0:
            # nothing observed yet: any engine mode is as good as the next
            return Thresholds(math.inf, math.inf)
        return compute_thresholds(
            self.estimate.f_min_hat,
            self.estimate.f_max_hat,
            self.eta_d_min,
            self.eta_e_min,
            self.eta_e_max,
        )

    def step(self, p_plus: float, p_minus: float, coeffs: SlotCoeffs) -> Transition:
        self.eta_d_min = min(self.eta_d_min, coeffs.eta_d)
        self.eta_e_min = min(self.eta_e_min, coeffs.eta_e)
        self.eta_e_max = max(self.eta_e_max, coeffs.eta_e)
        if self.thresholds is None:
            self.estimate = update_bounds(self.estimate, p_plus, self.curve)
        tr = online_step(
            self.state, p_plus, p_minus, coeffs, self.bounds, self.curve,
            self.current_thresholds(), self.modes,
        )
        if self.thresholds is None:
            self.estimate = update_bounds(self.estimate, tr.engine_output, self.curve)
        self.state = VehicleState(tr.next_soc, self.state.fuel - tr.fuel_used)
        return tr


def iter_online(instance: TripInstance, thresholds=None) -> Iterator[Transition]:
    ctl = OnlineController.for_instance(instance, thresholds)
    for t in range(instance.horizon):
        yield ctl.step(
            float(instance.p_plus[t]), float(instance.p_minus[t]), instance.coeffs(t)
        )


def run_online(instance: TripInstance, thresholds=None) -> ModeSchedule:
    """Replay the online controller over a whole trip."""
    return ModeSchedule(tuple(iter_online(instance, thresholds)), instance.b0, instance.g0)


def instance_thresholds(instance: TripInstance) -> Thresholds:
    """Thresholds from the exact per-unit cost range of the instance.

    Engine output can be any value in ``(0, max_t(P+_t + C_t)]``; the
    per-unit cost is taken over that whole range.
    """
    f_min, f_max = per_unit_range(instance)
    return compute_thresholds(
        f_min,
        f_max,
        float(instance.eta_d.min()),
        float(instance.eta_e.min()),
        float(instance.eta_e.max()),
    )


def per_unit_range(instance: TripInstance) -> tuple[float, float]:
    """Infimum and supremum of ``F(Q)/Q`` over the instance's engine range."""
    curve = instance.curve
    if curve.gamma0 > 0:
        raise ValueError("per-unit cost is unbounded near Q = 0 when gamma0 > 0")
    q_hi = float((instance.p_plus + instance.charge_cap).max())
    if q_hi <= 0:
        raise ValueError("instance never runs the engine")
    return curve.gamma1, per_unit_cost(q_hi, curve)


def decisions(transitions: Iterable[Transition]) -> list[Mode]:
    return [tr.mode for tr in transitions]
