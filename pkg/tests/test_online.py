import math

import numpy as np
import pytest

from gen import ratio_trip, random_trip
from oracles import rel_err, thresholds_by_logs
from phevplan.dmop import TripInstance, brute_force_dmop
from phevplan.model import FuelCurve, Mode, ModeSet, SlotCoeffs, VehicleState, per_unit_cost
from phevplan.online import (
    BoundEstimate,
    OnlineController,
    Thresholds,
    choose_mode,
    compute_thresholds,
    instance_thresholds,
    iter_online,
    per_unit_range,
    run_online,
    update_bounds,
)

CURVE = FuelCurve(0.02, 0.1, 0.0)


def test_threshold_examples():
    th = compute_thresholds(0.3, 0.3, 1.0, 1.0, 1.0)
    assert th.competitive_ratio == pytest.approx(1.0)
    assert th.theta_ap == pytest.approx(0.3) and th.theta_cs == pytest.approx(0.3)
    th = compute_thresholds(1.0, 4.0, 1.0, 1.0, 1.0)
    assert th.theta_cs == pytest.approx(2.0) and th.competitive_ratio == pytest.approx(2.0)
    th = compute_thresholds(1.0, 1.0, 1.0, 0.5, 0.5)
    assert th.kappa == pytest.approx(2.0) and th.competitive_ratio == pytest.approx(2.0)


def test_thresholds_agree_with_log_form():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f_min = rng.uniform(0.05, 1)
        args = (f_min, f_min * rng.uniform(1, 5), rng.uniform(1, 1.5))
        e_lo = rng.uniform(0.3, 1)
        args += (e_lo, rng.uniform(e_lo, 1))
        th = compute_thresholds(*args)
        ap, cs, cr = thresholds_by_logs(*args)
        assert rel_err(th.theta_ap, ap) < 1e-12
        assert rel_err(th.theta_cs, cs) < 1e-12
        assert rel_err(th.competitive_ratio, cr) < 1e-12


def test_threshold_validation():
    with pytest.raises(ValueError):
        compute_thresholds(2.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        compute_thresholds(1.0, 2.0, 0.9, 1.0, 1.0)
    with pytest.raises(ValueError):
        Thresholds(0.0, 1.0)


def test_ev_has_priority():
    th = Thresholds(1e-9, 1e-9)
    mode = choose_mode(5.0, 1.0, 0.0, SlotCoeffs(), (0, 10), CURVE, th, ModeSet())
    assert mode is Mode.EV


def test_cheap_engine_prefers_assist_then_charge():
    coeffs = SlotCoeffs(engine_charge_cap_w=2.0, ap_split=0.5)
    generous = Thresholds(1e9, 1e9)
    stingy = Thresholds(1e-9, 1e-9)
    assert choose_mode(1.0, 5.0, 0.0, coeffs, (0, 10), CURVE, generous, ModeSet()) is Mode.AP
    assert choose_mode(1.0, 5.0, 0.0, coeffs, (0, 10), CURVE, stingy, ModeSet()) is Mode.CE
    only_cs = ModeSet.only("CS", "CE")
    assert choose_mode(1.0, 5.0, 0.0, coeffs, (0, 10), CURVE, generous, only_cs) is Mode.CS


def test_update_bounds_skips_engine_off():
    est = update_bounds(BoundEstimate(), 0.0, CURVE)
    assert est.empty
    est = update_bounds(est, 2.0, CURVE)
    est = update_bounds(est, 5.0, CURVE)
    assert est.samples == 2
    assert est.f_min_hat == pytest.approx(per_unit_cost(2.0, CURVE))
    assert est.f_max_hat == pytest.approx(per_unit_cost(5.0, CURVE))


def test_controller_is_causal():
    # decisions on a prefix do not depend on later slots
    rng = np.random.default_rng(8)
    inst = random_trip(rng, 6, 6)
    full = [tr.mode for tr in iter_online(inst)]
    prefix = [tr.mode for tr in iter_online(inst.slice(0, 3))]
    assert full[:3] == prefix


def test_streaming_matches_batch():
    rng = np.random.default_rng(9)
    inst = random_trip(rng, 5, 5)
    ctl = OnlineController.for_instance(inst)
    trs = [ctl.step(float(inst.p_plus[t]), float(inst.p_minus[t]), inst.coeffs(t))
           for t in range(inst.horizon)]
    assert tuple(trs) == run_online(inst).transitions
    assert ctl.state == VehicleState(trs[-1].next_soc, inst.g0 - sum(t.fuel_used for t in trs))


def test_per_unit_range_requires_no_idle_cost():
    inst = TripInstance(np.array([1.0]), 0.0, FuelCurve(0.01, 0.1, 0.5), 0.0, 5.0, 0.0)
    with pytest.raises(ValueError):
        per_unit_range(inst)


def test_competitive_ratio_holds():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(150):
        inst = ratio_trip(rng, t_max=5)
        try:
            th = instance_thresholds(inst)
        except ValueError:
            continue
        opt = brute_force_dmop(inst.with_(terminal_soc=None)).total_fuel
        online = run_online(inst, th).total_fuel
        if opt <= 1e-12:
            assert online <= 1e-12
            continue
        assert online <= th.competitive_ratio * opt * (1 + 1e-9)
        worst = max(worst, online / opt)
    assert worst >= 1.0 - 1e-12
