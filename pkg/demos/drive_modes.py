"""How much fuel does the mode choice save on one trip?

The sample trip starts in town, runs a highway stretch and ends in town.
We compare four controllers on it: always charge-sustaining (the usual
factory default), the online threshold controller, the convex relaxation
rounded to modes, and the exact dynamic program.  Then we vary the charge
the battery starts with.

    python3 demos/drive_modes.py
"""

import numpy as np

from phevplan import SocGrid, cs_benchmark, run_online, solve_cdmop, solve_dmop_dp
from phevplan.samples import sample_instance


def ratios(schedule):
    return "  ".join(f"{k} {v:4.0%}" for k, v in schedule.mode_ratios().items())


trip = sample_instance(b0=2.0)
grid = SocGrid.for_instance(trip, 1001)

print(f"Trip of {trip.horizon} slots, battery starts at {trip.b0} of {trip.b_hi}\n")
results = {
    "always CS": cs_benchmark(trip),
    "online": run_online(trip),
    "relax + round": solve_cdmop(trip)[1],
    "optimal (DP)": solve_dmop_dp(trip, grid),
}
bound = solve_cdmop(trip)[0].lower_bound
for name, sched in results.items():
    print(f"{name:>14}: fuel {sched.total_fuel:7.3f}   {ratios(sched)}")
print(f"{'lower bound':>14}: fuel {bound:7.3f}")

best = results["optimal (DP)"]
print("\nOptimal modes per slot:", " ".join(m.value for m in best.modes))
print("Load per slot:          ", " ".join(f"{p:.1f}" for p in trip.p_plus))

# More charge at the start means less fuel; charge-sustaining wastes most of it.
print("\nInitial SoC   optimal   always CS   saving")
for b0 in np.linspace(0, 10, 6):
    t = trip.with_(b0=float(b0))
    opt = solve_dmop_dp(t, grid).total_fuel
    cs = cs_benchmark(t).total_fuel
    print(f"{b0:11.1f}   {opt:7.3f}   {cs:9.3f}   {1 - opt / cs:6.1%}")
