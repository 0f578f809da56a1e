"""Small deterministic instances and networks for demos, tests and the CLI.

Power units are abstract (think kW per slot); the SoC range is [0, 10].
"""

from __future__ import annotations

import numpy as np

from .dmop import TripInstance
from .model import FuelCurve
from .pathplan import Edge, RoadNetwork, Station

# large idle cost: running the engine at low load is wasteful
SAMPLE_CURVE = FuelCurve(0.02, 0.1, 1.0)
B_HI = 10.0


def _trip(p_plus, p_minus, charge_cap, beta=0.3, curve=SAMPLE_CURVE, **kwargs) -> TripInstance:
    horizon = len(p_plus)
    return TripInstance(
        np.asarray(p_plus, dtype=float), np.asarray(p_minus, dtype=float), curve,
        0.0, B_HI, kwargs.pop("b0", 0.0),
        eta_r=np.full(horizon, 0.9), eta_d=np.full(horizon, 1.1),
        eta_e=np.full(horizon, 0.9), charge_cap=np.full(horizon, charge_cap),
        beta=np.full(horizon, beta), **kwargs,
    )


def sample_instance(b0: float = 2.0) -> TripInstance:
    """Twelve-slot mixed trip: city start, a highway stretch, city finish."""
    p_plus = [1.0, 0.0, 1.5, 6.0, 7.5, 8.0, 7.0, 0.0, 1.2, 0.0, 1.0, 0.5]
    p_minus = [0.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.6, 0.0, 0.0]
    cap = [0.5, 0.5, 0.5, 6.0, 6.0, 6.0, 6.0, 0.5, 0.5, 0.5, 0.5, 0.5]
    inst = _trip(p_plus, p_minus, 0.0, b0=b0, g0=40.0)
    return inst.with_(charge_cap=np.asarray(cap))


def highway_trip() -> TripInstance:
    """Two heavy slots on a road with plenty of spare engine power."""
    return _trip([7.0, 7.0], [0.0, 0.0], 8.0)


def city_trip(blocks: int = 10) -> TripInstance:
    """Stop-and-go: light loads alternating with braking, little spare power."""
    p_plus = ([1.2, 0.0] * blocks)[:-1]
    p_minus = ([0.0, 0.6] * blocks)[:-1]
    return _trip(p_plus, p_minus, 0.5)


def highway_city_network(b0: float = 0.0) -> RoadNetwork:
    """Two routes from S to D.  With a low initial SoC the highway is
    cheaper; with a well-charged battery the city route runs mostly
    electric and wins."""
    hw, city = highway_trip(), city_trip()
    half = city.horizon // 2
    edges = [
        Edge("S", "H", hw.slice(0, 1), "highway"),
        Edge("H", "D", hw.slice(1, 2), "highway"),
        Edge("S", "C", city.slice(0, half), "city"),
        Edge("C", "D", city.slice(half, city.horizon), "city"),
    ]
    stations = [Station("S"), Station("H"), Station("C"), Station("D")]
    return RoadNetwork(stations, edges, "S", "D", g_cap=20.0, g0=20.0, b0=b0,
                       b_lo=0.0, b_hi=B_HI)


def diamond_network() -> RoadNetwork:
    """Two-price diamond with one paid charger, for the exact and
    approximate planners."""
    curve = FuelCurve(0.01, 0.2, 0.0)
    up = _trip([3.0, 2.0], [0.0, 0.0], 2.0, curve=curve)
    down = _trip([2.5, 0.0], [0.0, 1.0], 2.0, curve=curve)
    side = _trip([2.0, 2.0], [0.0, 0.0], 2.0, curve=curve)
    edges = [
        Edge("S", "A", up), Edge("A", "D", down),
        Edge("S", "B", side), Edge("B", "D", side.with_()),
    ]
    stations = [Station("S", 1.5), Station("A", 1.0, 0.05, 4.0),
                Station("B", 1.2), Station("D", 1.0)]
    return RoadNetwork(stations, edges, "S", "D", g_cap=3.0, g0=0.5, b0=1.0,
                       b_lo=0.0, b_hi=B_HI, delta=2)
