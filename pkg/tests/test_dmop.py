import math

import numpy as np
import pytest

from gen import random_trip
from phevplan.dmop import (
    Infeasible,
    SocGrid,
    TripInstance,
    brute_force_dmop,
    cs_benchmark,
    dp_cost_row,
    enumerate_mode_sequences,
    simulate_modes,
    solve_dmop_dp,
    solve_step,
)
from phevplan.model import FuelCurve, InfeasibleModeError, Mode, ModeSet, SlotCoeffs, VehicleParams

CURVE = FuelCurve(0.01, 0.1, 0.05)


def _trip(p_plus, p_minus=0.0, **kw):
    base = dict(curve=CURVE, b_lo=0.0, b_hi=10.0, b0=5.0, eta_r=0.9, eta_d=1.1,
                eta_e=0.8, charge_cap=2.0, beta=0.5)
    base.update(kw)
    return TripInstance(np.atleast_1d(np.asarray(p_plus, float)), p_minus, **base)


def _tolerance(inst, grid):
    return 2 * grid.delta * inst.curve.slope_bound(float(np.max(inst.p_plus + inst.charge_cap)))


def test_instance_validation():
    with pytest.raises(ValueError):
        _trip([1.0, 2.0], p_minus=[0.5, 0.0])
    with pytest.raises(ValueError):
        _trip([1.0], b0=11.0)
    with pytest.raises(ValueError):
        _trip([1.0, 2.0], eta_r=[0.9, 0.9, 0.9])
    with pytest.raises(ValueError):
        _trip([-1.0])


def test_from_profile_uses_road_load():
    inst = TripInstance.from_profile([20.0, 10.0], 0.0, VehicleParams(), initial_speed=20.0,
                                     curve=CURVE, b_lo=0.0, b_hi=1e6, b0=0.0)
    assert inst.p_plus[0] == pytest.approx(6400.2, abs=0.1)
    assert inst.p_minus[1] > 0 and inst.p_plus[1] == 0


def test_grid_helpers():
    g = SocGrid(0.0, 10.0, 11)
    assert g.delta == 1.0
    assert g.nearest(3.4) == 3 and g.nearest(3.6) == 4
    assert g.floor(3.9999) == 3 and g.floor(4.0) == 4
    with pytest.raises(ValueError):
        SocGrid(0.0, 10.0, 1)


def test_solve_step_examples():
    ev = SlotCoeffs(eta_d=1.25)
    assert solve_step(4.0, 2.75, 1.0, 0.0, ev, (2.0, 10.0), CURVE) == (0.0, Mode.EV)
    q, mode = solve_step(3.0, 3.0, 0.0, 0.0, SlotCoeffs(), (0.0, 10.0), CURVE)
    assert q == 0.0 and mode is Mode.EV
    assert solve_step(0.0, 10.0, 1.0, 0.0, SlotCoeffs(), (0.0, 10.0), CURVE) == (math.inf, None)


def test_idle_trip_costs_nothing():
    sched = solve_dmop_dp(_trip([0.0]))
    assert sched.total_fuel == 0.0 and sched.modes == (Mode.EV,)


def test_no_fuel_and_no_charge_is_infeasible():
    inst = _trip([5.0, 5.0], b0=1.0, g0=0.0, charge_cap=0.0, beta=0.0)
    with pytest.raises(Infeasible):
        solve_dmop_dp(inst)
    with pytest.raises(Infeasible):
        brute_force_dmop(inst)


def test_terminal_requirement():
    inst = _trip([1.0, 1.0, 1.0], b0=2.0, terminal_soc=6.0)
    sched = solve_dmop_dp(inst, SocGrid(0, 10, 201))
    assert sched.final_soc >= 6.0 - 1e-9
    free = solve_dmop_dp(inst.with_(terminal_soc=None), SocGrid(0, 10, 201))
    assert free.total_fuel <= sched.total_fuel
    with pytest.raises(Infeasible):
        solve_dmop_dp(inst.with_(terminal_soc=10.0, charge_cap=0.0))


def test_brute_force_limits_and_ev_cs_only():
    with pytest.raises(ValueError):
        brute_force_dmop(_trip(np.ones(11)))
    inst = _trip([3.0, 1.0, 4.0, 2.0], b0=3.0, modes=ModeSet.only("EV", "CS"))
    best = math.inf
    for seq in enumerate_mode_sequences(inst.modes, 4):
        try:
            best = min(best, simulate_modes(inst, seq).total_fuel)
        except InfeasibleModeError:
            pass
    assert len(list(enumerate_mode_sequences(inst.modes, 4))) == 16
    assert brute_force_dmop(inst).total_fuel == pytest.approx(best, abs=1e-12)


def test_single_slot_brute_force_matches_step_minimum():
    inst = _trip([3.0], b0=2.0)
    fuels = []
    for mode in inst.modes.available():
        try:
            fuels.append(simulate_modes(inst, [mode]).total_fuel)
        except InfeasibleModeError:
            pass
    assert brute_force_dmop(inst).total_fuel == pytest.approx(min(fuels))


def test_dp_matches_brute_force_within_grid_error():
    rng = np.random.default_rng(7)
    for _ in range(40):
        inst = random_trip(rng, 2, 5)
        grid = SocGrid(0, 10, 201)
        bf = brute_force_dmop(inst).total_fuel
        dp = solve_dmop_dp(inst, grid)
        assert abs(dp.total_fuel - bf) <= _tolerance(inst, grid)
        # the returned schedule is a genuine replay
        replay = simulate_modes(inst, dp.modes)
        assert replay.total_fuel == pytest.approx(dp.total_fuel, abs=1e-12)


def test_mode_availability_is_respected():
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_trip(rng, modes=ModeSet(ev=True, ce=False, cs=True, ap=False))
        try:
            sched = solve_dmop_dp(inst, SocGrid(0, 10, 101))
        except Infeasible:
            continue
        assert set(sched.modes) <= {Mode.EV, Mode.CS}


def test_cost_row_is_monotone_in_terminal_level():
    rng = np.random.default_rng(5)
    inst = random_trip(rng, 3, 3)
    row = dp_cost_row(inst, SocGrid(0, 10, 21))
    finite = row[np.isfinite(row)]
    assert np.all(np.diff(finite) >= -1e-12)
    assert row[0] == pytest.approx(solve_dmop_dp(inst, SocGrid(0, 10, 21)).total_fuel)


def test_benchmark_never_beats_optimum():
    rng = np.random.default_rng(9)
    for _ in range(20):
        inst = random_trip(rng)
        assert cs_benchmark(inst).total_fuel >= brute_force_dmop(inst).total_fuel - 1e-12


def test_schedule_summary():
    sched = simulate_modes(_trip([1.0, 0.0, 2.0, 3.0]), ["EV", "EV", "CS", "CE"])
    assert sched.mode_ratios() == {"EV": 0.5, "CE": 0.25, "CS": 0.25, "AP": 0.0}
    assert len(sched) == 4 and sched.final_soc == sched.transitions[-1].next_soc
    with pytest.raises(ValueError):
        simulate_modes(_trip([1.0, 2.0]), ["EV"])
