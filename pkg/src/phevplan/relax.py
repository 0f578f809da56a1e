"""Convex relaxation of the drive-mode problem and rounding back to modes."""

from __future__ import annotations

import math

import numpy as np

from .convex import (
    ConvexInfeasible,
    ConvexProgram,
    FractionalSolution,
    LinearRows,
    solve_convex,
)
from .dmop import SOC_TOL, Infeasible, ModeSchedule, TripInstance
from .model import MODE_PRIORITY, InfeasibleModeError, Mode, VehicleState

MODE_KEYS = {Mode.EV: "x_ev", Mode.CE: "x_ce", Mode.CS: "x_cs", Mode.AP: "x_ap"}
_BLOCKS = ("x_ev", "x_ce", "x_cs", "x_ap", "r", "s", "u", "q", "w", "b")


def build_cdmop(instance: TripInstance, terminal_tol: float = SOC_TOL) -> ConvexProgram:
    """Relaxed program with fractional modes and bounded (not greedy) controls.

    Engine output is the gated-linear ``Q = P+ - s + u``, which matches the
    integer model at every integral mode choice.  Fuel enters through the
    convex envelope of the fuel curve, so the optimum is a lower bound on
    the true minimum fuel.
    """
    T = instance.horizon
    n = T * len(_BLOCKS)
    layout = {name: np.arange(k * T, (k + 1) * T) for k, name in enumerate(_BLOCKS)}
    ix = {name: layout[name].tolist() for name in _BLOCKS}
    curve = instance.curve
    qstar = curve.tangent_point

    c = np.zeros(n)
    p = np.zeros(n)
    lb = np.zeros(n)
    ub = np.zeros(n)
    eq, ub_rows = LinearRows(), LinearRows()
    pp, pm = instance.p_plus, instance.p_minus
    qmax = pp + instance.charge_cap

    for t in range(T):
        xe, xc, xs, xa = ix["x_ev"][t], ix["x_ce"][t], ix["x_cs"][t], ix["x_ap"][t]
        r, s, u, q, w, b = (ix[k][t] for k in ("r", "s", "u", "q", "w", "b"))
        for mode, j in ((Mode.EV, xe), (Mode.CE, xc), (Mode.CS, xs), (Mode.AP, xa)):
            ub[j] = 1.0 if mode in instance.modes else 0.0
        ub[r], ub[s], ub[u] = pm[t], pp[t], instance.charge_cap[t]
        ub[q] = qmax[t]
        lb[b], ub[b] = instance.b_lo, instance.b_hi

        c[q] = curve.min_per_unit
        if math.isfinite(qstar) and curve.gamma2 > 0:
            ub[w] = qmax[t]
            p[w] = 2.0 * curve.gamma2
            ub_rows.add({q: 1.0, w: -1.0}, qstar)

        eq.add({q: 1.0, s: 1.0, u: -1.0}, pp[t])
        prev = {ix["b"][t - 1]: -1.0} if t > 0 else {}
        rhs = 0.0 if t > 0 else instance.b0
        eq.add({b: 1.0, **prev, r: -instance.eta_r[t], u: -instance.eta_e[t],
                s: instance.eta_d[t]}, rhs)
        eq.add({xe: 1.0, xc: 1.0, xs: 1.0, xa: 1.0}, 1.0)
        ub_rows.add({xe: pp[t], s: -1.0}, 0.0)
        ub_rows.add({s: 1.0, xe: -pp[t], xa: -instance.beta[t] * pp[t]}, 0.0)
        ub_rows.add({u: 1.0, xs: -instance.charge_cap[t]}, 0.0)

    if instance.terminal_soc is not None:
        last = ix["b"][-1]
        lb[last] = max(lb[last], instance.terminal_soc - terminal_tol)
    a_eq, b_eq = eq.build(n)
    a_ub, b_ub = ub_rows.build(n)
    return ConvexProgram(c, p, a_eq, b_eq, a_ub, b_ub, lb, ub, layout=layout)


def mode_fractions(frac: FractionalSolution, t: int) -> dict:
    return {m: float(frac[MODE_KEYS[m]][t]) for m in Mode}


def round_modes(frac: FractionalSolution, instance: TripInstance) -> ModeSchedule:
    """Round each slot to its largest fractional mode and re-simulate.

    When the favoured mode cannot run in the realised state, the next largest
    fraction is tried (ties by EV > AP > CS > CE).
    """
    state = VehicleState(instance.b0, instance.g0)
    out = []
    for t in range(instance.horizon):
        fr = mode_fractions(frac, t)
        order = sorted(
            instance.modes.available(),
            key=lambda m: (-fr[m], MODE_PRIORITY.index(m)),
        )
        for mode in order:
            try:
                tr = instance.step(state, t, mode)
            except InfeasibleModeError:
                continue
            break
        else:
            raise Infeasible(f"no drive mode feasible at slot {t}")
        out.append(tr)
        state = VehicleState(tr.next_soc, state.fuel - tr.fuel_used)
    schedule = ModeSchedule(tuple(out), instance.b0, instance.g0)
    if instance.terminal_soc is not None and schedule.final_soc < instance.terminal_soc - SOC_TOL:
        raise Infeasible("rounded schedule misses the terminal SoC")
    return schedule


def canonical_fractions(frac: FractionalSolution, instance: TripInstance) -> FractionalSolution:
    """Move mode weight toward EV, then AP, CS, CE, holding the controls fixed.

    The objective depends on the controls only, so on degenerate slots (an
    idle slot, say) every split of the mode weight is optimal and an
    interior-point solver returns the centre of that face.  Re-splitting the
    weight keeps the objective and certificate and makes rounding prefer the
    cheap modes.  Slots where the greedy split would break a constraint keep
    their original fractions.
    """
    x = frac.x.copy()
    lay = frac.layout
    avail = instance.modes
    tol = 1e-9
    for t in range(instance.horizon):
        pp, cap, beta = instance.p_plus[t], instance.charge_cap[t], instance.beta[t]
        s, u = x[lay["s"][t]], x[lay["u"][t]]
        # with no load the EV cap x_ev P+ <= s is vacuous
        a = min(max(s / pp, 0.0), 1.0) if pp > 0 else 1.0
        cs_min = min(max(u / cap, 0.0), 1.0) if cap > 0 else 0.0
        new = dict.fromkeys(Mode, 0.0)
        new[Mode.CS] = cs_min
        if Mode.EV in avail:
            new[Mode.EV] = max(min(a, 1.0 - cs_min), 0.0)
        need = a - new[Mode.EV] if pp > 0 else 0.0
        if need > tol:
            if beta <= 0 or Mode.AP not in avail:
                continue
            new[Mode.AP] = need / beta
        if (new[Mode.CS] > tol and Mode.CS not in avail) or sum(new.values()) > 1.0 + tol:
            continue
        rest = 1.0 - sum(new.values())
        if rest > tol:
            for mode in (Mode.AP, Mode.CS, Mode.CE):
                if mode in avail:
                    new[mode] += rest
                    break
            else:
                continue
        for mode, v in new.items():
            x[lay[MODE_KEYS[mode]][t]] = v
    return FractionalSolution(x, frac.objective, frac.lower_bound, frac.residual,
                              frac.rel_gap, frac.status, dict(lay))


def integral_point(instance: TripInstance, schedule: ModeSchedule) -> FractionalSolution:
    """Express an integral schedule as a point of the relaxed program."""
    program = build_cdmop(instance)
    x = np.zeros(program.n)
    lay = program.layout
    qstar = instance.curve.tangent_point
    for t, tr in enumerate(schedule.transitions):
        x[lay[MODE_KEYS[tr.mode]][t]] = 1.0
        x[lay["r"][t]], x[lay["s"][t]], x[lay["u"][t]] = tr.r, tr.s, tr.u
        x[lay["q"][t]] = tr.engine_output
        if program.p[lay["w"][t]] > 0:
            x[lay["w"][t]] = max(tr.engine_output - qstar, 0.0)
        x[lay["b"][t]] = tr.next_soc
    obj = program.objective(x)
    return FractionalSolution(x, obj, -math.inf, 0.0, 0.0, "integral", dict(lay))


def solve_cdmop(instance: TripInstance, **tolerances):
    """Relax, solve and round.  Returns ``(fractional solution, schedule)``.

    Raises ``Infeasible`` if the relaxation already needs more fuel than the
    tank holds or rounding finds no feasible schedule.
    """
    try:
        frac = solve_convex(build_cdmop(instance), **tolerances)
    except ConvexInfeasible as exc:
        raise Infeasible(str(exc)) from exc
    if frac.lower_bound > instance.g0:
        raise Infeasible("relaxed fuel need exceeds the tank")
    frac = canonical_fractions(frac, instance)
    schedule = round_modes(frac, instance)
    if schedule.total_fuel > instance.g0:
        raise Infeasible("rounded schedule runs out of fuel")
    return frac, schedule
