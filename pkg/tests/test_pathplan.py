import math

import numpy as np
import pytest

from gen import oracle_networks
from oracles import refill_rule_violations, per_path_minimum, resource_violations
from phevplan.dmop import Infeasible, SocGrid, TripInstance
from phevplan.model import FuelCurve, ModeSet
from phevplan.pathplan import (
    Edge,
    InstanceTooLarge,
    RoadNetwork,
    Station,
    brute_force_ppdm,
    build_augmented_graph,
    edge_cost_table,
    gas_levels,
    network_cost_tables,
    path_dp_fuel,
    solve_cppdm,
    solve_ppdm_dp,
    solve_uppdm,
)
from phevplan.samples import diamond_network, highway_city_network

LINEAR = FuelCurve(0.0, 1.0, 0.0)


def _engine_only(load, b_hi=1.0):
    """One slot that only the engine can serve; fuel equals the load."""
    return TripInstance(np.array([float(load)]), 0.0, LINEAR, 0.0, b_hi, 0.0,
                        charge_cap=0.0, beta=0.0)


def _net(stations, edges, src="S", dst="D", b_hi=1.0, **kw):
    base = dict(g_cap=10.0, g0=0.0, b0=0.0, b_lo=0.0, b_hi=b_hi)
    base.update(kw)
    return RoadNetwork(stations, edges, src, dst, **base)


def test_zero_load_edge_is_free():
    inst = TripInstance(np.zeros(3), 0.0, LINEAR, 0.0, 10.0, 0.0)
    tab = edge_cost_table(Edge("a", "b", inst), SocGrid(0, 10, 6), refine=2)
    assert np.all(np.diag(tab.z) == 0.0)


def test_single_slot_charge_by_hand():
    inst = TripInstance(np.array([1.0]), 0.0, LINEAR, 0.0, 10.0, 0.0,
                        eta_e=1.0, charge_cap=2.0, modes=ModeSet.only("CS", "CE"))
    tab = edge_cost_table(Edge("a", "b", inst), SocGrid(0, 10, 11), refine=2)
    for j in range(9):
        assert tab.z[j, j + 2] == pytest.approx(3.0)
    for j in range(8):
        assert math.isinf(tab.z[j, j + 3])


def test_table_is_closed_under_starting_higher():
    rng = np.random.default_rng(0)
    for net in oracle_networks(rng, 5):
        for tab in network_cost_tables(net, SocGrid(0, net.b_hi, 5), refine=3):
            assert np.all(tab.z[1:] <= tab.z[:-1])


def test_augmented_graph_counts_and_filters():
    one = _net([Station("S")], [], src="S", dst="S")
    g = build_augmented_graph(one, SocGrid(0, 1, 3), [])
    assert g.n_nodes == 5
    heavy = _net([Station("S"), Station("D")], [Edge("S", "D", _engine_only(12.0))])
    g = build_augmented_graph(heavy, SocGrid(0, 1, 3))
    assert not any(info is not None for info in g.info.values())


def test_free_charging_compresses_to_the_top_level():
    inst = TripInstance(np.zeros(1), 0.0, LINEAR, 0.0, 10.0, 0.0)
    net = _net([Station("S"), Station("D", E=10.0)], [Edge("S", "D", inst)], b_hi=10.0)
    grid = SocGrid(0, 10, 3)
    g = build_augmented_graph(net, grid)
    heads = {b for (a, b), info in g.info.items() if info is not None}
    assert heads == {g.node("D", 2)}


def test_parallel_routes_pick_the_cheaper():
    net = _net([Station("S"), Station("D")],
               [Edge("S", "D", _engine_only(5.0), "slow"), Edge("S", "D", _engine_only(3.0), "fast")],
               g0=10.0)
    plan = solve_uppdm(net, SocGrid(0, 1, 3))
    assert plan.cost == pytest.approx(3.0) and plan.legs[0].edge == 1


def test_uppdm_unreachable():
    net = _net([Station("S"), Station("D")], [Edge("S", "D", _engine_only(5.0))], g_cap=2.0)
    with pytest.raises(Infeasible):
        solve_uppdm(net, SocGrid(0, 1, 3))


def test_uppdm_matches_path_enumeration():
    rng = np.random.default_rng(5)
    for net in oracle_networks(rng, 15, uniform=True):
        grid = SocGrid(0, net.b_hi, 4)
        tabs = network_cost_tables(net, grid, refine=3)
        oracle = per_path_minimum(net, grid, tabs, path_dp_fuel)
        try:
            cost = solve_uppdm(net, grid, tabs).cost
        except Infeasible:
            cost = math.inf
        assert cost == pytest.approx(oracle, abs=1e-9) or (math.isinf(cost) and math.isinf(oracle))


def _pair(load, g_u=1.0, g_v=2.0):
    return _net([Station("U", g_u), Station("V", g_v)], [Edge("U", "V", _engine_only(load))],
                src="U", dst="V")


def test_gas_levels_by_hand():
    grid = SocGrid(0, 1, 2)
    assert gas_levels(_pair(6.0), "V", 0, grid) == [0.0, 4.0]
    assert gas_levels(_pair(12.0), "V", 0, grid) == [0.0]
    assert gas_levels(_pair(6.0, g_u=3.0), "V", 0, grid) == [0.0]
    assert gas_levels(_pair(6.0), "U", 0, grid) == [0.0]


def test_single_edge_buys_exactly_the_need():
    net = _net([Station("S", 2.0), Station("D")], [Edge("S", "D", _engine_only(5.0))])
    grid = SocGrid(0, 1, 3)
    plan = solve_ppdm_dp(net, grid)
    assert plan.cost == pytest.approx(10.0)
    assert len(plan.stops) == 1 and plan.stops[0].refill == pytest.approx(5.0)
    assert brute_force_ppdm(net, grid) == pytest.approx(10.0)


def test_stop_budget_binds():
    # two 6-unit legs with a 10-unit tank need a stop at S and at M
    stations = [Station("S", 1.0), Station("M", 1.0), Station("D")]
    edges = [Edge("S", "M", _engine_only(6.0)), Edge("M", "D", _engine_only(6.0))]
    grid = SocGrid(0, 1, 2)
    assert solve_ppdm_dp(_net(stations, edges, delta=2), grid).cost == pytest.approx(12.0)
    with pytest.raises(Infeasible):
        solve_ppdm_dp(_net(stations, edges, delta=1), grid)


def test_uniform_prices_agree_with_shortest_path():
    rng = np.random.default_rng(6)
    for net in oracle_networks(rng, 15, uniform=True):
        net = net.with_(delta=50)
        grid = SocGrid(0, net.b_hi, 4)
        tabs = network_cost_tables(net, grid, refine=3)
        try:
            fuel = solve_uppdm(net, grid, tabs).cost
        except Infeasible:
            continue
        assert solve_ppdm_dp(net, grid, tabs).cost == pytest.approx(max(fuel - net.g0, 0.0), abs=1e-9)


def test_dp_matches_brute_force_and_plans_are_valid():
    rng = np.random.default_rng(1)
    for net in oracle_networks(rng, 20):
        grid = SocGrid(0, net.b_hi, int(rng.integers(2, 6)))
        tabs = network_cost_tables(net, grid, refine=3)
        try:
            plan = solve_ppdm_dp(net, grid, tabs)
        except Infeasible:
            with pytest.raises(Infeasible):
                brute_force_ppdm(net.with_(delta=min(net.stop_budget, 4)), grid, tabs)
            continue
        assert plan.cost == pytest.approx(brute_force_ppdm(net, grid, tabs), abs=1e-9)
        assert resource_violations(plan, net) == []
        assert refill_rule_violations(plan, net) == []
        assert sum(s.cost for s in plan.stops) == pytest.approx(plan.cost, abs=1e-9)


def test_brute_force_limits():
    net = diamond_network()
    with pytest.raises(InstanceTooLarge):
        brute_force_ppdm(net, SocGrid(0, 10, 6))
    with pytest.raises(InstanceTooLarge):
        brute_force_ppdm(net.with_(delta=5), SocGrid(0, 10, 3))


def test_disconnected_network_is_infeasible():
    net = _net([Station("S"), Station("M"), Station("D")], [Edge("S", "M", _engine_only(1.0))])
    grid = SocGrid(0, 1, 3)
    for solve in (solve_uppdm, solve_ppdm_dp):
        with pytest.raises(Infeasible):
            solve(net, grid)
    with pytest.raises(Infeasible):
        solve_cppdm(net)


def test_cppdm_single_path():
    stations = [Station("S", 1.0), Station("M", 2.0), Station("D")]
    edges = [Edge("S", "M", _engine_only(2.0)), Edge("M", "D", _engine_only(3.0))]
    net = _net(stations, edges)
    bound, plan = solve_cppdm(net)
    assert plan.nodes == ("S", "M", "D")
    assert bound <= plan.cost + 1e-9
    exact = solve_ppdm_dp(net, SocGrid(0, 1, 3)).cost
    assert exact == pytest.approx(5.0)
    assert bound <= exact + 1e-6 <= plan.cost + 2e-6


def test_diamond_sandwich():
    net = diamond_network()
    bound, plan = solve_cppdm(net)
    exact = solve_ppdm_dp(net, SocGrid(0, 10, 21)).cost
    assert bound <= exact + 1e-6
    assert exact <= plan.cost + 1e-6
    assert resource_violations(plan, net) == []


def test_initial_soc_switches_route():
    low = solve_uppdm(highway_city_network(b0=0.0))
    high = solve_uppdm(highway_city_network(b0=10.0))
    assert low.nodes == ("S", "H", "D") and high.nodes == ("S", "C", "D")
    assert high.cost < low.cost


def test_network_validation():
    with pytest.raises(ValueError):
        _net([Station("S")], [], dst="X")
    with pytest.raises(ValueError):
        _net([Station("S"), Station("D")], [], g0=20.0)
    with pytest.raises(ValueError):
        Station("S", g=-1.0)
    with pytest.raises(ValueError):
        _net([Station("S"), Station("D")], [Edge("S", "D", _engine_only(1.0, b_hi=5.0))])
