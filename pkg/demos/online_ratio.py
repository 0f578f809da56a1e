"""The online controller against the offline optimum.

The online controller sees one slot at a time.  In the setting where its
guarantee applies (no braking, empty battery at the start, full battery
required at the end, no idle fuel), its cost never exceeds the competitive
ratio times the optimum.  We draw random trips, measure the ratio actually
achieved and compare it with the guarantee.

    python3 demos/online_ratio.py
"""

import numpy as np

from phevplan import (
    FuelCurve,
    Infeasible,
    ModeSet,
    TripInstance,
    brute_force_dmop,
    instance_thresholds,
    run_online,
)


def ratio_trip(rng):
    T = int(rng.integers(1, 7))
    b_hi = float(rng.uniform(1, 10))
    return TripInstance(
        p_plus=rng.uniform(0, 6, T), p_minus=0.0,
        curve=FuelCurve(rng.uniform(0, 0.2), rng.uniform(0.05, 0.3), 0.0),
        b_lo=0.0, b_hi=b_hi, b0=0.0, eta_r=1.0,
        eta_d=rng.uniform(1, 1.3, T), eta_e=rng.uniform(0.6, 1, T),
        charge_cap=rng.uniform(0, 6, T), beta=rng.uniform(0, 1, T),
        modes=ModeSet(ev=True, ce=bool(rng.random() < 0.7), cs=True, ap=bool(rng.random() < 0.7)),
        terminal_soc=b_hi,
    )


rng = np.random.default_rng(0)
achieved, guaranteed = [], []
while len(achieved) < 300:
    trip = ratio_trip(rng)
    try:
        opt = brute_force_dmop(trip).total_fuel
    except Infeasible:
        continue
    th = instance_thresholds(trip)
    online = run_online(trip, th).total_fuel
    if opt > 0:
        achieved.append(online / opt)
        guaranteed.append(th.competitive_ratio)

achieved, guaranteed = np.array(achieved), np.array(guaranteed)
print(f"{len(achieved)} trips")
print(f"achieved ratio   median {np.median(achieved):.3f}   worst {achieved.max():.3f}")
print(f"guaranteed ratio median {np.median(guaranteed):.3f}   smallest {guaranteed.min():.3f}")
print(f"slack (guarantee / achieved) never below {np.min(guaranteed / achieved):.3f}")
