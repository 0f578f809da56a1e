"""Choosing a route together with the drive modes.

Part one: two routes from S to D, a short highway with heavy loads and a
longer stop-and-go city route.  With an empty battery the engine has to
work anyway and the highway is cheaper.  With a charged battery the city
route runs almost entirely on electricity and wins.

Part two: a diamond where fuel prices differ and one node sells charge.
The exact stop-budget dynamic program is compared with the convex
relaxation, which gives a lower bound and a rounded plan.

    python3 demos/path_planning.py
"""

import numpy as np

from phevplan import SocGrid, solve_cppdm, solve_ppdm_dp, solve_uppdm
from phevplan.samples import diamond_network, highway_city_network

print("Initial SoC   route     fuel")
for b0 in np.linspace(0, 10, 11):
    plan = solve_uppdm(highway_city_network(b0=float(b0)))
    print(f"{b0:11.1f}   {plan.route:7}  {plan.cost:6.3f}")

net = diamond_network()
exact = solve_ppdm_dp(net, SocGrid(net.b_lo, net.b_hi, 21))
bound, approx = solve_cppdm(net)
print(f"\nDiamond network, at most {net.stop_budget} stops")
print(f"  exact DP      {exact.route:8} cost {exact.cost:.4f}")
print(f"  relaxation    {'':8} bound {bound:.4f}")
print(f"  rounded plan  {approx.route:8} cost {approx.cost:.4f}")
for st in exact.stops:
    print(f"  stop at {st.node}: buy {st.refill:.3f} fuel, "
          f"SoC {st.soc_before:.1f} -> {st.soc_after:.1f}, pay {st.cost:.4f}")
