"""Exact drive-mode optimisation over a trip.

The dynamic program is a forward label-setting pass over a uniform SoC grid.
Each grid cell keeps one label: the cheapest way found to reach that cell,
together with the exact (unsnapped) SoC it reaches.  Transitions are always
computed from exact SoC values, so every schedule the DP returns is genuinely
feasible; the grid only decides which labels compete with each other.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import (
    MODE_PRIORITY,
    FuelCurve,
    InfeasibleModeError,
    Mode,
    ModeSet,
    ProfileStep,
    SlotCoeffs,
    Transition,
    VehicleParams,
    VehicleState,
    drivetrain_power_arrays,
    step_mode,
)

DEFAULT_LEVELS = 201
BRUTE_FORCE_MAX_T = 10
# tolerance for SoC comparisons (terminal requirement, cell ties)
SOC_TOL = 1e-9


class Infeasible(Exception):
    """No schedule satisfies the constraints."""


def _as_slot_array(name, value, horizon):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(horizon, float(arr))
    if arr.shape != (horizon,):
        raise ValueError(f"{name} has length {arr.shape[0]}, expected T={horizon}")
    return arr


@dataclass
class TripInstance:
    """Everything a DMOP solver needs about one trip.

    Per-slot arrays may be given as scalars, which are broadcast over the
    horizon.  ``terminal_soc`` asks for a final SoC of at least that value.
    """

    p_plus: np.ndarray
    p_minus: np.ndarray
    curve: FuelCurve
    b_lo: float
    b_hi: float
    b0: float
    g0: float = math.inf
    eta_r: np.ndarray = 1.0
    eta_d: np.ndarray = 1.0
    eta_e: np.ndarray = 1.0
    charge_cap: np.ndarray = 0.0
    beta: np.ndarray = 0.0
    modes: ModeSet = field(default_factory=ModeSet)
    terminal_soc: Optional[float] = None

    def __post_init__(self):
        self.p_plus = np.atleast_1d(np.asarray(self.p_plus, dtype=float))
        horizon = self.p_plus.shape[0]
        if horizon < 1:
            raise ValueError("horizon T must be >= 1")
        self.p_minus = _as_slot_array("p_minus", self.p_minus, horizon)
        for name in ("eta_r", "eta_d", "eta_e", "charge_cap", "beta"):
            setattr(self, name, _as_slot_array(name, getattr(self, name), horizon))
        if np.any(self.p_plus < 0) or np.any(self.p_minus < 0):
            raise ValueError("p_plus and p_minus must be non-negative")
        if np.any((self.p_plus > 0) & (self.p_minus > 0)):
            raise ValueError("a slot cannot have both p_plus and p_minus positive")
        if not self.b_lo <= self.b0 <= self.b_hi:
            raise ValueError(f"B0={self.b0} outside [{self.b_lo}, {self.b_hi}]")
        if self.g0 < 0:
            raise ValueError("G0 must be >= 0")
        self._coeffs = tuple(
            SlotCoeffs(
                float(self.eta_r[t]),
                float(self.eta_d[t]),
                float(self.eta_e[t]),
                float(self.charge_cap[t]),
                float(self.beta[t]),
            )
            for t in range(horizon)
        )

    @classmethod
    def from_profile(
        cls,
        speed: Sequence[float],
        grade: Sequence[float] | float = 0.0,
        params: VehicleParams = VehicleParams(),
        initial_speed: float = 0.0,
        **kwargs,
    ) -> "TripInstance":
        speed = np.asarray(speed, dtype=float)
        if np.any(speed < 0):
            raise ValueError("speeds must be non-negative")
        prev = np.concatenate([[initial_speed], speed[:-1]])
        grade = np.broadcast_to(np.asarray(grade, dtype=float), speed.shape)
        _, p_plus, p_minus = drivetrain_power_arrays(speed, grade, prev, params)
        return cls(p_plus=p_plus, p_minus=p_minus, **kwargs)

    @property
    def horizon(self) -> int:
        return self.p_plus.shape[0]

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.b_lo, self.b_hi)

    def coeffs(self, t: int) -> SlotCoeffs:
        return self._coeffs[t]

    def step(self, state: VehicleState, t: int, mode) -> Transition:
        return step_mode(
            state,
            mode,
            float(self.p_plus[t]),
            float(self.p_minus[t]),
            self._coeffs[t],
            self.bounds,
            self.curve,
        )

    def with_(self, **changes) -> "TripInstance":
        return replace(self, **changes)

    def slice(self, start: int, stop: int) -> "TripInstance":
        """Sub-trip over slots ``start:stop`` (initial state unchanged)."""
        sl = slice(start, stop)
        return replace(
            self,
            p_plus=self.p_plus[sl],
            p_minus=self.p_minus[sl],
            eta_r=self.eta_r[sl],
            eta_d=self.eta_d[sl],
            eta_e=self.eta_e[sl],
            charge_cap=self.charge_cap[sl],
            beta=self.beta[sl],
        )


@dataclass(frozen=True)
class SocGrid:
    b_lo: float
    b_hi: float
    n: int = DEFAULT_LEVELS

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a SoC grid needs at least 2 levels")
        if not self.b_hi > self.b_lo:
            raise ValueError("b_hi must exceed b_lo")

    @classmethod
    def for_instance(cls, instance: TripInstance, n: int = DEFAULT_LEVELS) -> "SocGrid":
        return cls(instance.b_lo, instance.b_hi, n)

    @property
    def delta(self) -> float:
        return (self.b_hi - self.b_lo) / (self.n - 1)

    @property
    def levels(self) -> np.ndarray:
        lv = np.linspace(self.b_lo, self.b_hi, self.n)
        lv[0], lv[-1] = self.b_lo, self.b_hi
        return lv

    def nearest(self, soc: float) -> int:
        i = int(round((soc - self.b_lo) / self.delta))
        return min(max(i, 0), self.n - 1)

    def floor(self, soc: float) -> int:
        """Highest level not above ``soc`` (within round-off)."""
        i = int(math.floor((soc - self.b_lo) / self.delta + 1e-9))
        return min(max(i, 0), self.n - 1)


@dataclass(frozen=True)
class ModeSchedule:
    transitions: tuple[Transition, ...]
    initial_soc: float
    g0: float = math.inf

    @property
    def total_fuel(self) -> float:
        return float(sum(tr.fuel_used for tr in self.transitions))

    @property
    def final_soc(self) -> float:
        if not self.transitions:
            return self.initial_soc
        return self.transitions[-1].next_soc

    @property
    def modes(self) -> tuple[Mode, ...]:
        return tuple(tr.mode for tr in self.transitions)

    @property
    def fuel_remaining(self) -> float:
        return self.g0 - self.total_fuel

    def mode_ratios(self) -> dict[str, float]:
        n = max(len(self.transitions), 1)
        return {m.value: sum(tr.mode is m for tr in self.transitions) / n for m in Mode}

    def __len__(self):
        return len(self.transitions)


def simulate_modes(instance: TripInstance, modes: Sequence) -> ModeSchedule:
    """Apply a fixed mode sequence with the greedy per-mode controls."""
    if len(modes) != instance.horizon:
        raise ValueError("need one mode per slot")
    state = VehicleState(instance.b0, instance.g0)
    out = []
    for t, mode in enumerate(modes):
        if Mode(mode) not in instance.modes:
            raise InfeasibleModeError(f"mode {Mode(mode).value} is disabled")
        tr = instance.step(state, t, mode)
        out.append(tr)
        state = VehicleState(tr.next_soc, state.fuel - tr.fuel_used)
    return ModeSchedule(tuple(out), instance.b0, instance.g0)


def solve_step(
    b_prev: float,
    b_target: float,
    p_plus: float,
    p_minus: float,
    coeffs: SlotCoeffs,
    bounds: tuple[float, float],
    curve: FuelCurve,
    modes: ModeSet = ModeSet(),
    delta: float = 0.0,
):
    """Cheapest mode moving the SoC from ``b_prev`` to within ``delta/2`` of
    ``b_target``.

    Returns ``(engine_output, mode)``, or ``(inf, None)`` if no available mode
    lands there.
    """
    best = (math.inf, None)
    best_fuel = math.inf
    state = VehicleState(b_prev, math.inf)
    for mode in modes.available():
        try:
            tr = step_mode(state, mode, p_plus, p_minus, coeffs, bounds, curve)
        except InfeasibleModeError:
            continue
        if abs(tr.next_soc - b_target) > delta / 2 + SOC_TOL:
            continue
        if tr.fuel_used < best_fuel:
            best_fuel = tr.fuel_used
            best = (tr.engine_output, mode)
    return best


def _forward_layers(instance: TripInstance, grid: SocGrid):
    """Run the label-setting DP; return per-slot label layers.

    A layer maps cell index -> (cost, soc, parent cell, transition).
    """
    start = grid.nearest(instance.b0)
    layers = [{start: (0.0, instance.b0, None, None)}]
    available = instance.modes.available()
    g0 = instance.g0
    for t in range(instance.horizon):
        nxt: dict[int, tuple] = {}
        for cell, (cost, soc, _, _) in layers[-1].items():
            state = VehicleState(soc, math.inf)
            for mode in available:
                try:
                    tr = instance.step(state, t, mode)
                except InfeasibleModeError:
                    continue
                new_cost = cost + tr.fuel_used
                if new_cost > g0:
                    continue
                j = grid.nearest(tr.next_soc)
                inc = nxt.get(j)
                if (
                    inc is None
                    or new_cost < inc[0] - 1e-12
                    or (new_cost <= inc[0] + 1e-12 and tr.next_soc > inc[1] + SOC_TOL)
                ):
                    nxt[j] = (new_cost, tr.next_soc, cell, tr)
        layers.append(nxt)
        if not nxt:
            break
    return layers


def _backtrack(instance, layers, cell) -> ModeSchedule:
    out = []
    for t in range(len(layers) - 1, 0, -1):
        _, _, parent, tr = layers[t][cell]
        out.append(tr)
        cell = parent
    return ModeSchedule(tuple(reversed(out)), instance.b0, instance.g0)


def _pick_final(layers, terminal):
    best_cell, best = None, None
    for cell, label in layers[-1].items():
        if terminal is not None and label[1] < terminal - SOC_TOL:
            continue
        if best is None or label[0] < best[0] - 1e-12 or (
            label[0] <= best[0] + 1e-12 and label[1] > best[1]
        ):
            best_cell, best = cell, label
    return best_cell


def solve_dmop_dp(
    instance: TripInstance, grid: Optional[SocGrid] = None
) -> ModeSchedule:
    """Minimum-fuel schedule over the SoC grid.

    Raises ``Infeasible`` if no schedule stays within the fuel budget (and
    reaches the terminal SoC, when one is required).
    """
    grid = grid or SocGrid.for_instance(instance)
    layers = _forward_layers(instance, grid)
    if len(layers) != instance.horizon + 1:
        raise Infeasible("no feasible drive-mode sequence")
    cell = _pick_final(layers, instance.terminal_soc)
    if cell is None:
        raise Infeasible("terminal SoC unreachable within the fuel budget")
    return _backtrack(instance, layers, cell)


def dp_cost_row(instance: TripInstance, grid: SocGrid) -> np.ndarray:
    """Least fuel to finish with SoC at least each grid level.

    Entry ``j`` is the DP cost of the instance with terminal requirement
    ``levels[j]``; ``inf`` where unreachable.  One DP pass yields the row.
    """
    layers = _forward_layers(instance, grid)
    row = np.full(grid.n, math.inf)
    if len(layers) != instance.horizon + 1:
        return row
    levels = grid.levels
    for cost, soc, _, _ in layers[-1].values():
        reach = levels <= soc + SOC_TOL
        row[reach] = np.minimum(row[reach], cost)
    return row


def brute_force_dmop(
    instance: TripInstance, terminal_tol: float = SOC_TOL
) -> ModeSchedule:
    """Exact optimum by enumerating every mode sequence (T <= 10)."""
    horizon = instance.horizon
    if horizon > BRUTE_FORCE_MAX_T:
        raise ValueError(
            f"horizon {horizon} too large for enumeration (max {BRUTE_FORCE_MAX_T})"
        )
    available = instance.modes.available()
    terminal = instance.terminal_soc
    best_cost = math.inf
    best_path: Optional[list] = None
    path: list[Transition] = []

    def visit(t, soc, cost):
        nonlocal best_cost, best_path
        if t == horizon:
            if terminal is not None and soc < terminal - terminal_tol:
                return
            if cost < best_cost - 1e-12:
                best_cost, best_path = cost, list(path)
            return
        state = VehicleState(soc, math.inf)
        for mode in available:
            try:
                tr = instance.step(state, t, mode)
            except InfeasibleModeError:
                continue
            new_cost = cost + tr.fuel_used
            if new_cost > instance.g0:
                continue
            path.append(tr)
            visit(t + 1, tr.next_soc, new_cost)
            path.pop()

    visit(0, instance.b0, 0.0)
    if best_path is None:
        raise Infeasible("no feasible drive-mode sequence")
    return ModeSchedule(tuple(best_path), instance.b0, instance.g0)


def enumerate_mode_sequences(modes: ModeSet, horizon: int):
    """All mode sequences over the available modes, in priority order."""
    return itertools.product(modes.available(), repeat=horizon)


def cs_benchmark(instance: TripInstance) -> ModeSchedule:
    """Charge-sustaining all the time: the no-optimisation baseline."""
    return simulate_modes(instance, [Mode.CS] * instance.horizon)


__all__ = [
    "DEFAULT_LEVELS",
    "Infeasible",
    "ModeSchedule",
    "SocGrid",
    "TripInstance",
    "brute_force_dmop",
    "cs_benchmark",
    "dp_cost_row",
    "enumerate_mode_sequences",
    "simulate_modes",
    "solve_dmop_dp",
    "solve_step",
    "MODE_PRIORITY",
]
