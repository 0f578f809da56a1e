import numpy as np
import pytest

from gen import random_trip
from phevplan.convex import residuals
from phevplan.dmop import Infeasible, SocGrid, TripInstance, brute_force_dmop, simulate_modes, solve_dmop_dp
from phevplan.model import FuelCurve, Mode, ModeSet
from phevplan.convex import solve_convex
from phevplan.relax import (
    canonical_fractions,
    MODE_KEYS,
    build_cdmop,
    integral_point,
    mode_fractions,
    round_modes,
    solve_cdmop,
)

CURVE = FuelCurve(0.01, 0.1, 0.05)


def _trip(p_plus, **kw):
    base = dict(curve=CURVE, b_lo=0.0, b_hi=10.0, b0=5.0, eta_r=0.9, eta_d=1.1,
                eta_e=0.8, charge_cap=2.0, beta=0.5)
    base.update(kw)
    return TripInstance(np.asarray(p_plus, float), 0.0, **base)


def test_idle_slot_relaxes_to_zero():
    frac, sched = solve_cdmop(_trip([0.0]))
    assert frac.objective == pytest.approx(0.0, abs=1e-6)
    assert frac["x_ev"][0] == pytest.approx(1.0, abs=1e-4)
    assert sched.modes == (Mode.EV,) and sched.total_fuel == 0.0


def test_integral_points_are_feasible_and_round_to_themselves():
    rng = np.random.default_rng(11)
    for _ in range(15):
        inst = random_trip(rng, 2, 5)
        sched = brute_force_dmop(inst)
        point = integral_point(inst, sched)
        prog = build_cdmop(inst)
        assert residuals(prog, point.x) < 1e-7
        # the relaxed objective never exceeds the true fuel at the same point
        assert point.objective <= sched.total_fuel + 1e-9
        assert round_modes(point, inst).modes == sched.modes


def test_rounding_is_scale_invariant():
    rng = np.random.default_rng(2)
    inst = random_trip(rng, 4, 4)
    frac, sched = solve_cdmop(inst)
    scaled = frac.x.copy()
    for key in MODE_KEYS.values():
        scaled[frac.layout[key]] *= 3.0
    frac2 = type(frac)(scaled, frac.objective, frac.lower_bound, frac.residual,
                       frac.rel_gap, frac.status, frac.layout)
    assert round_modes(frac2, inst).modes == sched.modes


def test_rounding_follows_largest_fraction():
    rng = np.random.default_rng(4)
    inst = random_trip(rng, 3, 3)
    frac, sched = solve_cdmop(inst)
    for t, tr in enumerate(sched.transitions):
        fr = mode_fractions(frac, t)
        top = max(fr[m] for m in inst.modes.available())
        # the chosen mode is the largest fraction unless it was unrunnable
        if fr[tr.mode] < top - 1e-9:
            with pytest.raises(Exception):
                simulate_modes(inst.slice(t, t + 1).with_(b0=sched.transitions[t - 1].next_soc if t else inst.b0),
                               [max(inst.modes.available(), key=lambda m: fr[m])])


def test_infeasible_relaxation():
    inst = _trip([50.0, 50.0], b0=0.5, g0=0.01, modes=ModeSet.only("EV", "CS", "AP"))
    with pytest.raises(Infeasible):
        solve_cdmop(inst)


def test_sandwich_against_optimum():
    rng = np.random.default_rng(21)
    for _ in range(20):
        inst = random_trip(rng, 2, 5)
        try:
            frac, sched = solve_cdmop(inst)
        except Infeasible:
            continue
        opt = brute_force_dmop(inst).total_fuel
        assert frac.lower_bound <= opt + 1e-6
        assert opt <= sched.total_fuel + 1e-9
        assert frac.kkt_residual < 1e-4


def test_terminal_constraint_enters_relaxation():
    inst = _trip([1.0, 1.0, 1.0], b0=2.0, terminal_soc=6.0)
    frac, _ = solve_cdmop(inst)
    free, _ = solve_cdmop(inst.with_(terminal_soc=None))
    assert frac["b"][-1] >= 6.0 - 1e-5
    assert free.objective <= frac.objective + 1e-6
    dp = solve_dmop_dp(inst, SocGrid(0, 10, 401)).total_fuel
    assert frac.lower_bound <= dp + 1e-6


def test_canonical_fractions_keep_the_point_feasible():
    rng = np.random.default_rng(31)
    for _ in range(20):
        inst = random_trip(rng, 2, 5)
        prog = build_cdmop(inst)
        frac = solve_convex(prog)
        canon = canonical_fractions(frac, inst)
        assert residuals(prog, canon.x) <= frac.residual + 1e-8
        assert prog.objective(canon.x) == pytest.approx(frac.objective, abs=1e-9)
