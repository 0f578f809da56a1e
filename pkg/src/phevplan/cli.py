"""Command-line front end.

Results go to stdout (or ``--out``) as JSON or CSV; a short human summary
goes to stderr.  Exit status: 0 on success, 2 when the problem is
infeasible, 1 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import io as pio
from . import samples
from .calibrate import TARGETS, CalibrationError, fit_efficiency, fit_fuel_from_trace, load_trace
from .convex import SolverFailure
from .dmop import DEFAULT_LEVELS, Infeasible, SocGrid, TripInstance, cs_benchmark, simulate_modes, solve_dmop_dp
from .model import InfeasibleModeError, Mode, SlotCoeffs, VehicleState
from .online import OnlineController, instance_thresholds, run_online
from .pathplan import DEFAULT_NODE_LEVELS, InstanceTooLarge, node_grid, solve_cppdm, solve_ppdm_dp, solve_uppdm
from .relax import solve_cdmop

log = logging.getLogger("phevplan")

SWEEP_SOLVERS = ("opt", "cs", "online", "approx")
SWEEP_COLUMNS = ("B0", "solver", "status", "fuel", "EV", "CE", "CS", "AP")
EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class _Infeasible(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _emit(args, payload, csv_text=None):
    if args.format == "csv":
        if csv_text is None:
            raise pio.InputError(f"--format csv is not supported by '{args.command}'")
        text = csv_text
    else:
        text = pio.dumps(payload) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _summary(msg: str):
    print(msg, file=sys.stderr)


def _grid_for(instance: TripInstance, n) -> SocGrid:
    if n is not None and n < 2:
        raise pio.InputError("--grid must be >= 2")
    return SocGrid.for_instance(instance, n or DEFAULT_LEVELS)


def _instance(args) -> TripInstance:
    inst = pio.load_instance(args.input)
    if args.terminal_soc is not None:
        inst = inst.with_(terminal_soc=args.terminal_soc)
    return inst


def _network(args):
    net = pio.load_network(args.input)
    if args.delta is not None:
        if args.delta < 1:
            raise pio.InputError("--delta must be >= 1")
        net = net.with_(delta=args.delta)
    return net


def _tolerances(args) -> dict:
    return {} if args.tol is None else {"feas_tol": args.tol}


def _ratios(schedule) -> str:
    return ", ".join(f"{k} {v:.0%}" for k, v in schedule.mode_ratios().items())


def _schedule_result(args, schedule, extra=None):
    payload = pio.schedule_to_dict(schedule)
    payload.update(extra or {})
    _emit(args, payload, pio.schedule_csv(schedule))
    _summary(f"total fuel {schedule.total_fuel:.6g}, final SoC {schedule.final_soc:.6g}; "
             f"modes: {_ratios(schedule)}")


# ----------------------------------------------------------------- commands


def cmd_sample(args):
    makers = {
        "instance": lambda: pio.instance_to_dict(samples.sample_instance()),
        "network": lambda: pio.network_to_dict(samples.highway_city_network()),
        "diamond": lambda: pio.network_to_dict(samples.diamond_network()),
    }
    _emit(args, makers[args.which]())


def cmd_simulate(args):
    inst = _instance(args)
    modes = [m.strip().upper() for m in args.modes.split(",")]
    if len(modes) == 1:
        modes = modes * inst.horizon
    try:
        modes = [Mode(m) for m in modes]
    except ValueError as exc:
        raise pio.InputError(f"--modes: {exc}") from None
    try:
        schedule = simulate_modes(inst, modes)
    except InfeasibleModeError as exc:
        raise _Infeasible(str(exc)) from None
    if schedule.total_fuel > inst.g0:
        raise _Infeasible("the schedule runs out of fuel")
    _schedule_result(args, schedule)


def cmd_optimize(args):
    inst = _instance(args)
    schedule = solve_dmop_dp(inst, _grid_for(inst, args.grid))
    _schedule_result(args, schedule, {"cs_benchmark": _cs_fuel(inst)})


def _cs_fuel(inst):
    try:
        return cs_benchmark(inst).total_fuel
    except (InfeasibleModeError, Infeasible):
        return None


def cmd_approx(args):
    inst = _instance(args)
    frac, schedule = solve_cdmop(inst, **_tolerances(args))
    _schedule_result(args, schedule, {"lower_bound": frac.lower_bound})
    _summary(f"relaxation lower bound {frac.lower_bound:.6g}")


def _records(stream) -> Iterable:
    """Yield ``("header", dict)`` then ``("slot", dict)`` items.

    Accepts JSON lines (a header line followed by one line per slot) or a
    whole instance document, which is replayed slot by slot.
    """
    first = stream.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    if head is None or "P_plus" in head or "speed" in head:
        text = first if head is not None else first + stream.read()
        try:
            inst = pio.instance_from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise pio.InputError(f"line {exc.lineno}: {exc.msg}") from None
        yield "header", pio.instance_to_dict(inst)
        for t in range(inst.horizon):
            c = inst.coeffs(t)
            yield "slot", {"P_plus": float(inst.p_plus[t]), "P_minus": float(inst.p_minus[t]),
                           "eta_r": c.eta_r, "eta_d": c.eta_d, "eta_e": c.eta_e,
                           "C": c.engine_charge_cap_w, "beta": c.ap_split}
        return
    yield "header", head
    for lineno, line in enumerate(stream, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise pio.InputError(f"line {lineno}: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise pio.InputError(f"line {lineno}: expected a JSON object")
        rec["_line"] = lineno
        yield "slot", rec


def _slot(rec) -> tuple:
    where = f"line {rec['_line']}: " if "_line" in rec else ""
    try:
        coeffs = SlotCoeffs(
            pio._num(rec, "eta_r", 1.0, where), pio._num(rec, "eta_d", 1.0, where),
            pio._num(rec, "eta_e", 1.0, where), pio._num(rec, "C", 0.0, where),
            pio._num(rec, "beta", 0.0, where),
        )
    except ValueError as exc:
        raise pio.InputError(f"{where}{exc}") from None
    pp, pm = pio._num(rec, "P_plus", 0.0, where), pio._num(rec, "P_minus", 0.0, where)
    if pp < 0 or pm < 0 or (pp > 0 and pm > 0):
        raise pio.InputError(f"{where}need P_plus, P_minus >= 0 and not both positive")
    return pp, pm, coeffs


def cmd_online(args):
    stream = sys.stdin if args.input == "-" else open(args.input)
    out = open(args.out, "w") if args.out else sys.stdout
    total, n = 0.0, 0
    try:
        items = _records(stream)
        _, head = next(items)
        b_lo, b_hi = pio._num(head, "B_lo", 0.0), pio._num(head, "B_hi")
        g0 = head.get("G0")
        ctl = OnlineController(
            (b_lo, b_hi), pio.curve_from_dict(head.get("fuel_curve")),
            pio.modes_from_dict(head.get("modes")),
            VehicleState(pio._num(head, "B0"), math.inf if g0 is None else float(g0)),
        )
        if args.exact_thresholds:
            ctl.thresholds = instance_thresholds(pio.instance_from_dict(head))
        for _, rec in items:
            pp, pm, coeffs = _slot(rec)
            try:
                tr = ctl.step(pp, pm, coeffs)
            except InfeasibleModeError as exc:
                raise _Infeasible(f"slot {n}: {exc}") from None
            if ctl.state.fuel < -1e-9:
                raise _Infeasible(f"slot {n}: out of fuel")
            row = pio.transition_to_dict(n, tr)
            if args.format == "csv":
                if n == 0:
                    out.write(",".join(pio.SCHEDULE_COLUMNS) + "\n")
                out.write(",".join(pio.fmt(row[c]) for c in pio.SCHEDULE_COLUMNS) + "\n")
            else:
                out.write(json.dumps(pio._plain(row)) + "\n")
            out.flush()
            total += tr.fuel_used
            n += 1
    finally:
        if stream is not sys.stdin:
            stream.close()
        if out is not sys.stdout:
            out.close()
    _summary(f"online: {n} slots, total fuel {total:.6g}")


def _plan_result(args, plan, extra=None):
    payload = pio.plan_to_dict(plan)
    payload.update(extra or {})
    _emit(args, payload)
    _summary(f"route {plan.route}, cost {plan.cost:.6g}, {plan.stop_count} stop(s)")


def cmd_plan(args):
    net = _network(args)
    grid = node_grid(net, args.grid or DEFAULT_NODE_LEVELS)
    if args.command == "plan" and net.uniform:
        plan = solve_uppdm(net, grid)
    else:
        plan = solve_ppdm_dp(net, grid)
    _plan_result(args, plan)


def cmd_plan_approx(args):
    net = _network(args)
    bound, plan = solve_cppdm(net, **_tolerances(args))
    _plan_result(args, plan, {"lower_bound": bound})
    _summary(f"relaxation lower bound {bound:.6g}")


def cmd_calibrate(args):
    trace = load_trace(args.input)
    out = {"rows": len(trace), "efficiency": {}}
    fitted = 0
    for target in TARGETS:
        try:
            reg = fit_efficiency(trace, target)
        except CalibrationError as exc:
            out["efficiency"][target] = {"error": str(exc)}
            continue
        fitted += 1
        out["efficiency"][target] = {
            "coeffs": dict(zip(("v2", "v", "a_plus2", "a_plus", "a_minus2", "a_minus", "bias"),
                               map(float, reg.coeffs))),
            "rows_used": reg.rows_used,
            "residual_rms": reg.residual_rms,
        }
    try:
        out["fuel_curve"] = pio.curve_to_dict(fit_fuel_from_trace(trace))
        fitted += 1
    except CalibrationError as exc:
        out["fuel_curve"] = {"error": str(exc)}
    if not fitted:
        raise pio.InputError("nothing could be fitted from this trace")
    _emit(args, out)
    _summary(f"calibrated {fitted} of {len(TARGETS) + 1} models from {len(trace)} records")


# ------------------------------------------------------------------- sweeps


def _sweep_row(template: TripInstance, b0: float, solver: str, grid_n) -> dict:
    row = {"B0": b0, "solver": solver}
    try:
        inst = template.with_(b0=b0)
        if solver == "opt":
            sched = solve_dmop_dp(inst, SocGrid.for_instance(inst, grid_n or DEFAULT_LEVELS))
        elif solver == "cs":
            sched = cs_benchmark(inst)
        elif solver == "online":
            sched = run_online(inst)
        else:
            sched = solve_cdmop(inst)[1]
        if sched.total_fuel > inst.g0:
            raise Infeasible("out of fuel")
    except (Infeasible, InfeasibleModeError) as exc:
        row["status"] = f"infeasible: {exc}"
        return row
    except (ValueError, SolverFailure) as exc:
        row["status"] = f"error: {exc}"
        return row
    row.update(status="ok", fuel=sched.total_fuel, **sched.mode_ratios())
    return row


def emit_sweep(
    template: TripInstance,
    b0_values: Sequence[float],
    solvers: Sequence[str] = ("opt", "cs"),
    grid_n=None,
    threads=None,
) -> str:
    """CSV with one row per ``(B0, solver)``, in input order.

    Failed rows carry the reason in ``status`` and leave the numbers empty.
    ``threads`` defaults to ``PHEVPLAN_THREADS`` (or 1).
    """
    unknown = set(solvers) - set(SWEEP_SOLVERS)
    if unknown:
        raise pio.InputError(f"unknown solver(s) {sorted(unknown)}; choose from {SWEEP_SOLVERS}")
    if threads is None:
        threads = int(os.environ.get("PHEVPLAN_THREADS", "1") or 1)
    jobs = [(float(b0), s) for b0 in b0_values for s in solvers]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda job: _sweep_row(template, job[0], job[1], grid_n), jobs))
    return pio.write_csv(rows, SWEEP_COLUMNS)


def _b0_values(spec: str) -> list:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise pio.InputError("--b0 range must be LO:HI:COUNT")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        return [float(x) for x in np.linspace(lo, hi, n)]
    try:
        return [float(x) for x in spec.split(",")]
    except ValueError:
        raise pio.InputError(f"--b0: cannot parse {spec!r}") from None


def cmd_sweep(args):
    inst = _instance(args)
    b0s = _b0_values(args.b0) if args.b0 else [float(x) for x in np.linspace(inst.b_lo, inst.b_hi, 5)]
    text = emit_sweep(inst, b0s, [s.strip() for s in args.solvers.split(",")], args.grid)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    _summary(f"sweep: {len(b0s)} SoC level(s) x {len(args.solvers.split(','))} solver(s)")


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, help="SoC grid levels")
    common.add_argument("--tol", type=float, help="feasibility tolerance of the convex solver")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", help="write the result here instead of stdout")
    common.add_argument("--delta", type=int, help="stop budget for path planning")
    common.add_argument("--terminal-soc", type=float, help="required final SoC")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="phevplan", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, input_help="instance JSON"):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("input", help=input_help)
        sp.set_defaults(func=func)
        return sp

    sp = sub.add_parser("sample", parents=[common], help="print a bundled sample")
    sp.add_argument("which", choices=("instance", "network", "diamond"))
    sp.set_defaults(func=cmd_sample)

    sp = add("simulate", cmd_simulate, "replay a fixed mode sequence")
    sp.add_argument("--modes", default="CS", help="comma-separated modes, or one mode for every slot")
    add("optimize", cmd_optimize, "exact drive-mode optimisation by dynamic programming")
    add("approx", cmd_approx, "convex relaxation and rounding")
    sp = add("online", cmd_online, "online threshold controller, one decision per line",
             "JSON lines (header then one slot per line) or an instance; '-' for stdin")
    sp.add_argument("--exact-thresholds", action="store_true",
                    help="thresholds from the instance's exact cost range instead of running estimates")
    add("plan", cmd_plan, "path planning (shortest path when prices are uniform)", "network JSON")
    add("plan-exact", cmd_plan, "path planning by the stop-budget dynamic program", "network JSON")
    add("plan-approx", cmd_plan_approx, "path planning by relaxation and rounding", "network JSON")
    add("calibrate", cmd_calibrate, "fit efficiencies and the fuel curve", "trace CSV")
    sp = add("sweep", cmd_sweep, "fuel cost against initial SoC (CSV)")
    sp.add_argument("--b0", help="comma list or LO:HI:COUNT")
    sp.add_argument("--solvers", default="opt,cs", help=f"comma list from {','.join(SWEEP_SOLVERS)}")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (Infeasible, _Infeasible) as exc:
        print(f"INFEASIBLE: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InstanceTooLarge, SolverFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (pio.InputError, CalibrationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
