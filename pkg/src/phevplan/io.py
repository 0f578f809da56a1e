"""JSON and CSV (de)serialisation of instances, networks and results.

Floats are written with ``repr`` so a value read back is bit-identical to
the one written.  An infinite initial fuel is written as ``null``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .dmop import ModeSchedule, TripInstance
from .model import FuelCurve, ModeSet, Transition, VehicleParams
from .pathplan import Edge, RoadNetwork, Station, TripPlan

SLOT_KEYS = {"eta_r": "eta_r", "eta_d": "eta_d", "eta_e": "eta_e", "C": "charge_cap", "beta": "beta"}
SCHEDULE_COLUMNS = ("t", "mode", "r", "s", "u", "Q", "fuel", "soc")


class InputError(ValueError):
    """Malformed input; the message names the offending field."""


def _num(d: Mapping, key: str, default=None, where: str = "") -> float:
    if key not in d or d[key] is None:
        if default is None:
            raise InputError(f"{where}missing field '{key}'")
        return default
    try:
        val = float(d[key])
    except (TypeError, ValueError):
        raise InputError(f"{where}field '{key}' must be a number, got {d[key]!r}") from None
    if math.isnan(val):
        raise InputError(f"{where}field '{key}' is NaN")
    return val


def _array(d: Mapping, key: str, horizon: Optional[int], where: str = "", default=None):
    if key not in d:
        if default is None:
            raise InputError(f"{where}missing field '{key}'")
        return default
    raw = d[key]
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{where}field '{key}' must be numeric") from None
    if arr.ndim > 1 or np.isnan(arr).any():
        raise InputError(f"{where}field '{key}' must be a number or a flat numeric list")
    if arr.ndim == 1 and horizon is not None and arr.shape[0] != horizon:
        raise InputError(f"{where}field '{key}' has length {arr.shape[0]}, expected T={horizon}")
    return arr


def curve_from_dict(d) -> FuelCurve:
    if isinstance(d, (list, tuple)) and len(d) == 3:
        d = dict(zip(("gamma2", "gamma1", "gamma0"), d))
    if not isinstance(d, Mapping):
        raise InputError("field 'fuel_curve' must be an object {gamma2, gamma1, gamma0}")
    try:
        return FuelCurve(*(_num(d, k, 0.0 if k == "gamma0" else None, "fuel_curve: ")
                           for k in ("gamma2", "gamma1", "gamma0")))
    except ValueError as exc:
        raise InputError(f"fuel_curve: {exc}") from None


def modes_from_dict(d) -> ModeSet:
    if d is None:
        return ModeSet()
    if not isinstance(d, Mapping):
        raise InputError("field 'modes' must be an object {ev, ce, cs, ap}")
    unknown = set(d) - {"ev", "ce", "cs", "ap"}
    if unknown:
        raise InputError(f"modes: unknown key(s) {sorted(unknown)}")
    try:
        return ModeSet(**{k: bool(v) for k, v in d.items()})
    except ValueError as exc:
        raise InputError(f"modes: {exc}") from None


def _loads(d: Mapping, where: str):
    """``(P_plus, P_minus)`` from explicit loads or a speed profile."""
    if "P_plus" in d:
        horizon = int(_num(d, "T", float(len(np.atleast_1d(d["P_plus"]))), where))
        pp = _array(d, "P_plus", horizon, where)
        if pp.ndim == 0:
            pp = np.full(horizon, float(pp))
        pm = _array(d, "P_minus", horizon, where, default=np.zeros(horizon))
        return pp, pm
    if "speed" in d:
        speed = _array(d, "speed", None, where)
        horizon = int(_num(d, "T", float(speed.size), where))
        if speed.ndim != 1 or speed.size != horizon:
            raise InputError(f"{where}field 'speed' must be a list of length T={horizon}")
        grade = _array(d, "grade", horizon, where, default=np.zeros(horizon))
        try:
            params = VehicleParams(**d.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}params: {exc}") from None
        probe = TripInstance.from_profile(
            speed, grade, params, float(d.get("initial_speed", 0.0)),
            curve=FuelCurve(0.0, 0.0), b_lo=0.0, b_hi=0.0, b0=0.0,
        )
        return probe.p_plus, probe.p_minus
    raise InputError(f"{where}need either 'P_plus' or 'speed'")


def _slot_kwargs(d: Mapping, horizon: int, where: str, defaults: Mapping = {}) -> dict:
    out = {}
    for key, attr in SLOT_KEYS.items():
        if key in d:
            out[attr] = _array(d, key, horizon, where)
        elif key in defaults:
            out[attr] = defaults[key]
    return out


def instance_from_dict(d: Mapping) -> TripInstance:
    if not isinstance(d, Mapping):
        raise InputError("instance must be a JSON object")
    pp, pm = _loads(d, "")
    if "fuel_curve" not in d:
        raise InputError("missing field 'fuel_curve'")
    g0 = d.get("G0")
    try:
        return TripInstance(
            pp, pm, curve_from_dict(d["fuel_curve"]),
            _num(d, "B_lo", 0.0), _num(d, "B_hi"), _num(d, "B0"),
            math.inf if g0 is None else _num(d, "G0"),
            modes=modes_from_dict(d.get("modes")),
            terminal_soc=None if d.get("B_terminal") is None else _num(d, "B_terminal"),
            **_slot_kwargs(d, len(pp), ""),
        )
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _listify(arr: np.ndarray):
    if np.all(arr == arr[0]):
        return float(arr[0])
    return [float(x) for x in arr]


def curve_to_dict(curve: FuelCurve) -> dict:
    return {"gamma2": curve.gamma2, "gamma1": curve.gamma1, "gamma0": curve.gamma0}


def instance_to_dict(inst: TripInstance) -> dict:
    out = {
        "T": inst.horizon,
        "P_plus": [float(x) for x in inst.p_plus],
        "P_minus": [float(x) for x in inst.p_minus],
        "fuel_curve": curve_to_dict(inst.curve),
        "B_lo": inst.b_lo,
        "B_hi": inst.b_hi,
        "B0": inst.b0,
        "G0": None if math.isinf(inst.g0) else inst.g0,
        "modes": {k: getattr(inst.modes, k) for k in ("ev", "ce", "cs", "ap")},
    }
    for key, attr in SLOT_KEYS.items():
        out[key] = _listify(getattr(inst, attr))
    if inst.terminal_soc is not None:
        out["B_terminal"] = inst.terminal_soc
    return out


def network_from_dict(d: Mapping) -> RoadNetwork:
    if not isinstance(d, Mapping):
        raise InputError("network must be a JSON object")
    if "fuel_curve" not in d:
        raise InputError("missing field 'fuel_curve'")
    curve = curve_from_dict(d["fuel_curve"])
    b_lo, b_hi = _num(d, "B_lo", 0.0), _num(d, "B_hi")
    nodes = d.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise InputError("field 'nodes' must be a non-empty list")
    stations = []
    for i, nd in enumerate(nodes):
        where = f"nodes[{i}]: "
        if not isinstance(nd, Mapping) or "id" not in nd:
            raise InputError(f"{where}missing field 'id'")
        try:
            stations.append(Station(str(nd["id"]), _num(nd, "g", 1.0, where),
                                    _num(nd, "h", 0.0, where), _num(nd, "E", 0.0, where)))
        except ValueError as exc:
            raise InputError(f"{where}{exc}") from None
    slot_defaults = {k: d[k] for k in SLOT_KEYS if k in d}
    edges = []
    for i, ed in enumerate(d.get("edges") or []):
        where = f"edges[{i}]: "
        if not isinstance(ed, Mapping) or "from" not in ed or "to" not in ed:
            raise InputError(f"{where}need 'from' and 'to'")
        pp, pm = _loads(ed, where)
        try:
            inst = TripInstance(pp, pm, curve, b_lo, b_hi, b_lo,
                                modes=modes_from_dict(ed.get("modes", d.get("modes"))),
                                **_slot_kwargs(ed, len(pp), where, slot_defaults))
        except ValueError as exc:
            raise InputError(f"{where}{exc}") from None
        edges.append(Edge(str(ed["from"]), str(ed["to"]), inst, str(ed.get("name", ""))))
    if not edges:
        raise InputError("field 'edges' must be a non-empty list")
    for key in ("source", "dest"):
        if d.get(key) is None:
            raise InputError(f"missing field '{key}'")
    delta = d.get("delta")
    try:
        return RoadNetwork(
            stations, edges, str(d.get("source")), str(d.get("dest")),
            _num(d, "G_cap"), _num(d, "G0", 0.0), _num(d, "B0", b_lo), b_lo, b_hi,
            None if delta is None else int(delta),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def network_to_dict(net: RoadNetwork) -> dict:
    curve = net.edges[0].instance.curve
    edges = []
    for e in net.edges:
        frag = instance_to_dict(e.instance)
        item = {"from": e.src, "to": e.dst}
        if e.name:
            item["name"] = e.name
        item.update({k: frag[k] for k in ("T", "P_plus", "P_minus", *SLOT_KEYS)})
        if not all(frag["modes"].values()):
            item["modes"] = frag["modes"]
        edges.append(item)
    return {
        "nodes": [{"id": s.id, "g": s.g, "h": s.h, "E": s.E} for s in net.stations.values()],
        "edges": edges,
        "source": net.source,
        "dest": net.dest,
        "G_cap": net.g_cap,
        "G0": net.g0,
        "B0": net.b0,
        "B_lo": net.b_lo,
        "B_hi": net.b_hi,
        "delta": net.delta,
        "fuel_curve": curve_to_dict(curve),
    }


def transition_to_dict(t: int, tr: Transition) -> dict:
    return {
        "t": t, "mode": tr.mode.value, "r": tr.r, "s": tr.s, "u": tr.u,
        "Q": tr.engine_output, "fuel": tr.fuel_used, "soc": tr.next_soc,
    }


def schedule_to_dict(schedule: ModeSchedule) -> dict:
    return {
        "total_fuel": schedule.total_fuel,
        "final_soc": schedule.final_soc,
        "mode_ratios": schedule.mode_ratios(),
        "slots": [transition_to_dict(t, tr) for t, tr in enumerate(schedule.transitions)],
    }


def plan_to_dict(plan: TripPlan) -> dict:
    out = {
        "route": list(plan.nodes),
        "cost": plan.cost,
        "stops": [
            {"node": s.node, "soc_before": s.soc_before, "soc_after": s.soc_after,
             "arrival_fuel": s.arrival_fuel, "refill": s.refill, "cost": s.cost}
            for s in plan.stops
        ],
        "legs": [
            {"edge": leg.edge, "from": leg.src, "to": leg.dst, "start_soc": leg.start_soc,
             "end_soc": leg.end_soc, "fuel_budget": leg.fuel_budget,
             "schedule": schedule_to_dict(leg.schedule)}
            for leg in plan.legs
        ],
    }
    if math.isfinite(plan.lower_bound):
        out["lower_bound"] = plan.lower_bound
    return out


def _plain(obj):
    # numpy scalars and non-finite floats to JSON-safe values
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_plain(obj), indent=2, allow_nan=False)


def read_json(path) -> Any:
    text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def load_instance(path) -> TripInstance:
    return instance_from_dict(read_json(path))


def load_network(path) -> RoadNetwork:
    return network_from_dict(read_json(path))


def fmt(value) -> str:
    """Canonical CSV text for a value: shortest round-tripping float repr."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(rows: Iterable[Mapping], columns: Iterable[str]) -> str:
    columns = list(columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def schedule_csv(schedule: ModeSchedule) -> str:
    rows = [transition_to_dict(t, tr) for t, tr in enumerate(schedule.transitions)]
    return write_csv(rows, SCHEDULE_COLUMNS)


def read_csv(text: str) -> list:
    """Parse CSV written by ``write_csv``; numeric cells become floats."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v)
            except ValueError:
                parsed[k] = v
        out.append(parsed)
    return out
