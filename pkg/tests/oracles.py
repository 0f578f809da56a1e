"""Independent reference computations used as test oracles.

Nothing here calls into the solver code paths it checks; formulas are
re-derived in a different arithmetic form where that matters.
"""

import math

import numpy as np

TOL = 1e-9


def road_load(v, a, grade, mass=1721.0, g=9.81, rho=1.226, area=2.202, kd=0.28, kr=0.01, c0=0.0):
    """Road-load power written term by term: drag, grade, rolling,
    inertia, accessories."""
    drag = 0.5 * rho * kd * area * v ** 3
    climb = mass * g * math.sin(grade) * v
    rolling = mass * g * kr * v
    inertia = mass * v * a
    return drag + climb + rolling + inertia + c0


def thresholds_by_logs(f_min, f_max, eta_d_min, eta_e_min, eta_e_max):
    """Thresholds and ratio evaluated in log space."""
    log_kappa = max(0.0, -(math.log(eta_e_max) + math.log(eta_d_min)))
    log_cs = 0.5 * (math.log(f_max) + math.log(f_min) - log_kappa
                    - math.log(eta_d_min) - math.log(eta_e_max))
    log_ap = log_cs + math.log(eta_d_min) + math.log(eta_e_min)
    log_cr = 0.5 * (log_kappa + math.log(f_max) + math.log(eta_e_max)
                    - math.log(f_min) - math.log(eta_d_min)) - math.log(eta_e_min)
    return math.exp(log_ap), math.exp(log_cs), math.exp(log_cr)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def plan_departures(plan):
    """Fuel on departure from each stop, keyed by stop index."""
    return [s.arrival_fuel + s.refill for s in plan.stops]


def fuel_between(plan, i_stop, j_stop):
    """Planned fuel burned from stop ``i_stop`` to stop ``j_stop`` (or to
    the destination when ``j_stop`` is None), walking the legs."""
    stop_nodes = [s.node for s in plan.stops]
    # stops occur in route order; locate each stop's leg index
    positions, k = [], 0
    for node in stop_nodes:
        while plan.legs[k].src != node:
            k += 1
        positions.append(k)
    start = positions[i_stop]
    stop = positions[j_stop] if j_stop is not None else len(plan.legs)
    return sum(leg.fuel_budget for leg in plan.legs[start:stop])


def refill_rule_violations(plan, network, tol=1e-9):
    """Stops that buy fuel yet break the fill-up or arrive-empty rule.

    After buying at ``u``: if the next stop (or the destination) is no
    dearer, the vehicle arrives there empty; if it is dearer, the vehicle
    left ``u`` with a full tank.
    """
    bad = []
    prices = {v: s.g for v, s in network.stations.items()}
    deps = plan_departures(plan)
    for i, st in enumerate(plan.stops):
        if st.refill <= tol:
            continue
        nxt = i + 1 if i + 1 < len(plan.stops) else None
        arrival = deps[i] - fuel_between(plan, i, nxt)
        if nxt is None or prices[plan.stops[nxt].node] <= prices[st.node]:
            if abs(arrival) > tol:
                bad.append((st.node, "should arrive empty", arrival))
        elif abs(deps[i] - network.g_cap) > tol:
            bad.append((st.node, "should leave full", deps[i]))
    return bad


def resource_violations(plan, network, tol=1e-9):
    """Tank, battery and stop-budget checks on a plan."""
    bad = []
    counted = [s for s in plan.stops if not (network.free_charging and s.refill <= tol)]
    if len(counted) > network.stop_budget:
        bad.append(("stops", len(counted)))
    fuel = plan.fuel_profile()
    if min(fuel) < -tol or max(fuel) > network.g_cap + tol:
        bad.append(("fuel", min(fuel), max(fuel)))
    for st in plan.stops:
        if st.arrival_fuel + st.refill > network.g_cap + tol:
            bad.append(("overfill", st.node))
        if st.refill < -tol or st.soc_after < st.soc_before - tol:
            bad.append(("negative purchase", st.node))
        if st.soc_after - st.soc_before > network.stations[st.node].E + tol:
            bad.append(("charge cap", st.node))
    for leg in plan.legs:
        for tr in leg.schedule.transitions:
            if not network.b_lo - tol <= tr.next_soc <= network.b_hi + tol:
                bad.append(("soc", leg.edge))
        if leg.schedule.total_fuel > leg.fuel_budget + tol:
            bad.append(("budget", leg.edge))
    # between legs the SoC rises by at most the node's charge cap
    for a, b in zip(plan.legs, plan.legs[1:]):
        if b.start_soc > a.end_soc + network.stations[a.dst].E + 1e-6:
            bad.append(("soc jump", a.dst))
    if plan.nodes and (plan.nodes[0] != network.source or plan.nodes[-1] != network.dest):
        bad.append(("endpoints", plan.nodes))
    return bad


def per_path_minimum(network, grid, tables, path_fuel):
    """Least fuel over every simple path, each solved separately."""
    best = math.inf
    for path in network.simple_paths():
        best = min(best, path_fuel(network, path, tables, grid))
    return best


def is_nonincreasing(values, tol=1e-9):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= tol))
