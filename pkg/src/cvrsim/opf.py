"""Centralized volt-var optimization as a mixed-integer linear program.

Decision variables per interval: squared bus voltages, per-phase line
flows, smart-inverter reactive injections, one binary per regulator tap
position (exactly-one selector row per tap group), and one binary per
capacitor switch.  The tap and capacitor products with the local squared
voltage are linearized exactly with four big-M rows per auxiliary, the
big-M constants being the bus voltage-band squares.  The objective is
the total active power drawn through the substation's outgoing lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controls import ControlSetpoints
from .errors import ValidationError
from .linear_pf import cvr_from_zip, line_coefficients
from .lp import EQ, GE, LE, LpProblem
from .milp import INT_TOL, MilpProblem, MilpSolution, branch_and_bound
from .network import (
    PHASE_INDEX,
    TAP_MAX,
    TAP_MIN,
    FeederModel,
    Line,
    tap_ratio,
)

# circle-area-preserving hexagon: R = s_max * sqrt((2*pi/6) / sin(2*pi/6))
HEX_RADIUS_FACTOR = math.sqrt((2.0 * math.pi / 6.0) / math.sin(2.0 * math.pi / 6.0))
_SQRT3 = math.sqrt(3.0)


def hexagon_radius(s_max: float) -> float:
    return s_max * HEX_RADIUS_FACTOR


def _active_phases(model: FeederModel, line: Line) -> tuple[str, ...]:
    """Line phases that can actually carry flow (present on the to-bus)."""
    to_ph = set(model.bus_by_id[line.to_bus].phases)
    return tuple(p for p in line.phases if p in to_ph)


def _subtree_flow_bounds(model: FeederModel) -> dict[tuple[str, str], tuple]:
    """Valid per-line-phase flow boxes from subtree device totals.

    A lossless flow can never exceed the demand below the line nor run
    more negative than the generation below it; a 1.5x demand headroom
    covers the voltage-dependent load swing with slack to spare.
    """
    acc: dict[tuple[str, str], np.ndarray] = {}
    out: dict[tuple[str, str], tuple] = {}
    pad = 0.05
    for line in reversed(model.lines_topo):
        bus = model.bus_by_id[line.to_bus]
        for phase in line.phases:
            if phase not in bus.phases:
                out[(line.id, phase)] = (0.0, 0.0, 0.0, 0.0)
                continue
            tot = np.zeros(4)  # load p, load q, pv capability, cap rating
            for load in model.loads_at.get((bus.id, phase), ()):
                tot[0] += abs(load.p0)
                tot[1] += abs(load.q0)
            for pv in model.pvs_at.get(bus.id, ()):
                if phase in pv.phases:
                    tot[2] += pv.s_rated
            for cap in model.caps_at.get(bus.id, ()):
                if phase in cap.phases:
                    tot[3] += cap.q_rated
            for child_line, _child in model.children_of[bus.id]:
                if (child_line.id, phase) in acc:
                    tot += acc[(child_line.id, phase)]
            acc[(line.id, phase)] = tot
            p_load, q_load, pv_cap, cap_q = tot
            out[(line.id, phase)] = (
                -(1.05 * pv_cap + pad),
                1.5 * p_load + pad,
                -(pv_cap + cap_q + pad),
                1.5 * q_load + pv_cap + pad,
            )
    return out


def build_cvr_milp(model: FeederModel,
                   forecast: dict[str, float],
                   prev: ControlSetpoints | None = None,
                   voltage_margin: float = 0.0) -> MilpProblem:
    """Assemble the optimization for one decision interval.

    ``forecast`` maps PV unit id to its per-phase active output (pu).
    ``prev`` is accepted for interval-chaining call sites and reserved;
    the objective is memoryless.  ``voltage_margin`` tightens the voltage
    band seen by the optimizer (planning headroom) without touching the
    big-M constants.
    """
    del prev  # reserved
    for pv in model.pvs:
        p = forecast.get(pv.id, 0.0)
        if p > pv.p_max + 1e-9:
            raise ValidationError(f"forecast for {pv.id} exceeds rating")
        if p < -1e-12:
            raise ValidationError(f"negative forecast for {pv.id}")

    lp = LpProblem()
    names: dict[str, int] = {}

    def var(name: str, lo: float, up: float, obj: float = 0.0) -> int:
        idx = lp.add_variable(lo, up, obj)
        names[name] = idx
        return idx

    sub_id = model.substation.id
    flow_bounds = _subtree_flow_bounds(model)

    # squared voltages
    v_idx: dict[tuple[str, str], int] = {}
    for bus in model.buses:
        for phase in bus.phases:
            if bus.is_substation:
                lo = up = 1.0
            else:
                vmin_eff = bus.vmin + voltage_margin
                vmax_eff = bus.vmax - voltage_margin
                if vmin_eff >= vmax_eff:
                    raise ValidationError(
                        f"voltage margin {voltage_margin} empties band on bus {bus.id}")
                lo, up = vmin_eff ** 2, vmax_eff ** 2
            v_idx[(bus.id, phase)] = var(f"v[{bus.id}.{phase}]", lo, up)

    # per-phase line flows (objective rides the substation's outgoing lines)
    p_idx: dict[tuple[str, str], int] = {}
    q_idx: dict[tuple[str, str], int] = {}
    for line in model.lines:
        at_root = line.from_bus == sub_id
        for phase in _active_phases(model, line):
            p_lo, p_up, q_lo, q_up = flow_bounds[(line.id, phase)]
            p_idx[(line.id, phase)] = var(f"P[{line.id}.{phase}]", p_lo, p_up,
                                          obj=1.0 if at_root else 0.0)
            q_idx[(line.id, phase)] = var(f"Q[{line.id}.{phase}]", q_lo, q_up)

    # inverter reactive support within the apparent-power box
    qdg_idx: dict[tuple[str, str], int] = {}
    for pv in model.pvs:
        p = forecast.get(pv.id, 0.0)
        qcap = math.sqrt(max(0.0, pv.s_rated ** 2 - p ** 2))
        for phase in pv.phases:
            qdg_idx[(pv.id, phase)] = var(f"qdg[{pv.id}.{phase}]", -qcap, qcap)

    # regulator tap selectors and voltage products
    binaries: list[int] = []
    sos1_groups: list[tuple[int, ...]] = []
    reg_w: dict[tuple[str, int, str], int] = {}
    reg_u: dict[tuple[str, int, str], int] = {}
    reg_phases: dict[str, tuple[str, ...]] = {}
    for reg in model.regulators:
        line = model.line_by_id[reg.line]
        phases_eff = _active_phases(model, line)
        reg_phases[reg.id] = phases_eff
        groups = [("", phases_eff)] if reg.gang_operated or len(phases_eff) == 1 \
            else [(f".{p}", (p,)) for p in phases_eff]
        for suffix, gphases in groups:
            idxs = []
            for k in range(TAP_MIN, TAP_MAX + 1):
                u = var(f"u[{reg.id}{suffix}.k{k}]", 0.0, 1.0)
                idxs.append(u)
                binaries.append(u)
                for phase in gphases:
                    reg_u[(reg.id, k, phase)] = u
            sos1_groups.append(tuple(idxs))
        for k in range(TAP_MIN, TAP_MAX + 1):
            for phase in phases_eff:
                reg_w[(reg.id, k, phase)] = var(f"w[{reg.id}.k{k}.{phase}]",
                                                0.0, model.bus_by_id[line.from_bus].vmax ** 2)

    # capacitor switches and voltage products
    cap_u: dict[tuple[str, str], int] = {}
    cap_w: dict[tuple[str, str], int] = {}
    for cap in model.capacitors:
        bus = model.bus_by_id[cap.bus]
        if cap.gang_operated or len(cap.phases) == 1:
            u = var(f"ucap[{cap.id}]", 0.0, 1.0)
            binaries.append(u)
            for phase in cap.phases:
                cap_u[(cap.id, phase)] = u
        else:
            for phase in cap.phases:
                u = var(f"ucap[{cap.id}.{phase}]", 0.0, 1.0)
                binaries.append(u)
                cap_u[(cap.id, phase)] = u
        for phase in cap.phases:
            cap_w[(cap.id, phase)] = var(f"wcap[{cap.id}.{phase}]", 0.0, bus.vmax ** 2)

    # ---- rows ------------------------------------------------------------

    load_cvr = {l.id: cvr_from_zip(l.kp, l.kq) for l in model.loads}

    # nodal balances (one P row and one Q row per non-substation bus-phase)
    for bus in model.buses:
        if bus.is_substation:
            continue
        parent = model.parent_line_of[bus.id]
        for phase in bus.phases:
            p_coeffs: list[tuple[int, float]] = [(p_idx[(parent.id, phase)], 1.0)]
            q_coeffs: list[tuple[int, float]] = [(q_idx[(parent.id, phase)], 1.0)]
            p_rhs = 0.0
            q_rhs = 0.0
            for child_line, _child in model.children_of[bus.id]:
                if (child_line.id, phase) in p_idx:
                    p_coeffs.append((p_idx[(child_line.id, phase)], -1.0))
                    q_coeffs.append((q_idx[(child_line.id, phase)], -1.0))
            v_coef_p = 0.0
            v_coef_q = 0.0
            for load in model.loads_at.get((bus.id, phase), ()):
                cvr_p, cvr_q = load_cvr[load.id]
                v_coef_p -= 0.5 * cvr_p * load.p0
                v_coef_q -= 0.5 * cvr_q * load.q0
                p_rhs += load.p0 * (1.0 - 0.5 * cvr_p)
                q_rhs += load.q0 * (1.0 - 0.5 * cvr_q)
            if v_coef_p != 0.0:
                p_coeffs.append((v_idx[(bus.id, phase)], v_coef_p))
            if v_coef_q != 0.0:
                q_coeffs.append((v_idx[(bus.id, phase)], v_coef_q))
            for pv in model.pvs_at.get(bus.id, ()):
                if phase in pv.phases:
                    p_rhs -= forecast.get(pv.id, 0.0)
                    q_coeffs.append((qdg_idx[(pv.id, phase)], 1.0))
            for cap in model.caps_at.get(bus.id, ()):
                if phase in cap.phases:
                    q_coeffs.append((cap_w[(cap.id, phase)], cap.q_rated))
            lp.add_row(p_coeffs, EQ, p_rhs)
            lp.add_row(q_coeffs, EQ, q_rhs)

    # voltage relations along every line
    for line in model.lines:
        to_bus = model.bus_by_id[line.to_bus]
        reg = model.regulator_by_line.get(line.id)
        if reg is not None:
            for phase in to_bus.phases:
                coeffs = [(v_idx[(to_bus.id, phase)], 1.0)]
                for k in range(TAP_MIN, TAP_MAX + 1):
                    coeffs.append((reg_w[(reg.id, k, phase)], -tap_ratio(k) ** 2))
                lp.add_row(coeffs, EQ, 0.0)
            continue
        coeff_mats = line_coefficients(line)
        active = _active_phases(model, line)
        for phase in to_bus.phases:
            i = PHASE_INDEX[phase]
            coeffs = [(v_idx[(line.from_bus, phase)], 1.0),
                      (v_idx[(to_bus.id, phase)], -1.0)]
            for qphase in active:
                j = PHASE_INDEX[qphase]
                if coeff_mats.hp[i, j] != 0.0:
                    coeffs.append((p_idx[(line.id, qphase)], -coeff_mats.hp[i, j]))
                if coeff_mats.hq[i, j] != 0.0:
                    coeffs.append((q_idx[(line.id, qphase)], -coeff_mats.hq[i, j]))
            lp.add_row(coeffs, EQ, 0.0)

    # exactly-one selector per tap group
    for group in sos1_groups:
        lp.add_row([(u, 1.0) for u in group], EQ, 1.0)

    # product linearization rows: w = u * v, exact at binary u
    def mccormick(w: int, u: int, v: int, vmin2: float, vmax2: float) -> None:
        lp.add_row([(w, 1.0), (u, -vmax2)], LE, 0.0)
        lp.add_row([(w, 1.0), (u, -vmin2)], GE, 0.0)
        lp.add_row([(w, 1.0), (v, -1.0), (u, -vmin2)], LE, -vmin2)
        lp.add_row([(w, 1.0), (v, -1.0), (u, -vmax2)], GE, -vmax2)

    for reg in model.regulators:
        line = model.line_by_id[reg.line]
        from_bus = model.bus_by_id[line.from_bus]
        vmin2, vmax2 = from_bus.vmin ** 2, from_bus.vmax ** 2
        for k in range(TAP_MIN, TAP_MAX + 1):
            for phase in reg_phases[reg.id]:
                mccormick(reg_w[(reg.id, k, phase)], reg_u[(reg.id, k, phase)],
                          v_idx[(from_bus.id, phase)], vmin2, vmax2)
    for cap in model.capacitors:
        bus = model.bus_by_id[cap.bus]
        vmin2, vmax2 = bus.vmin ** 2, bus.vmax ** 2
        for phase in cap.phases:
            mccormick(cap_w[(cap.id, phase)], cap_u[(cap.id, phase)],
                      v_idx[(bus.id, phase)], vmin2, vmax2)

    return MilpProblem(lp=lp, binaries=tuple(binaries), names=names,
                       sos1_groups=tuple(sos1_groups))


def add_branch_capacity(problem: MilpProblem, line: Line) -> None:
    """Append the six half-plane capacity rows per phase of one line."""
    if not math.isfinite(line.s_max):
        raise ValidationError(f"line {line.id}: s_max must be finite")
    radius = hexagon_radius(line.s_max)
    lp = problem.lp
    for phase in line.phases:
        pname = f"P[{line.id}.{phase}]"
        qname = f"Q[{line.id}.{phase}]"
        if pname not in problem.names:
            continue
        p = problem.names[pname]
        q = problem.names[qname]
        lp.add_row([(q, 1.0), (p, _SQRT3)], LE, _SQRT3 * radius)
        lp.add_row([(q, 1.0), (p, _SQRT3)], GE, -_SQRT3 * radius)
        lp.add_row([(q, 1.0)], LE, 0.5 * _SQRT3 * radius)
        lp.add_row([(q, 1.0)], GE, -0.5 * _SQRT3 * radius)
        lp.add_row([(q, 1.0), (p, -_SQRT3)], LE, _SQRT3 * radius)
        lp.add_row([(q, 1.0), (p, -_SQRT3)], GE, -_SQRT3 * radius)


def extract_setpoints(model: FeederModel, solution: MilpSolution) -> ControlSetpoints:
    """Decode taps, switches, inverter commands and reference voltages."""
    if solution.status != "optimal":
        raise ValidationError(f"cannot extract setpoints from {solution.status} solution")

    def binary_value(name: str) -> bool:
        val = solution.value(name)
        if abs(val - round(val)) > INT_TOL:
            raise ValidationError(f"fractional binary {name} = {val!r}")
        return round(val) == 1

    sp = ControlSetpoints()
    for reg in model.regulators:
        line = model.line_by_id[reg.line]
        to_phases = tuple(p for p in line.phases
                          if p in model.bus_by_id[line.to_bus].phases)
        groups = [("", to_phases)] if reg.gang_operated or len(to_phases) == 1 \
            else [(f".{p}", (p,)) for p in to_phases]
        for suffix, gphases in groups:
            chosen = [k for k in range(TAP_MIN, TAP_MAX + 1)
                      if binary_value(f"u[{reg.id}{suffix}.k{k}]")]
            if len(chosen) != 1:
                raise ValidationError(
                    f"regulator {reg.id}{suffix}: {len(chosen)} taps selected")
            for phase in gphases:
                sp.taps[(reg.id, phase)] = chosen[0]
        for phase in reg.phases:
            sp.taps.setdefault((reg.id, phase), sp.taps[(reg.id, to_phases[0])])
    for cap in model.capacitors:
        if cap.gang_operated or len(cap.phases) == 1:
            on = binary_value(f"ucap[{cap.id}]")
            for phase in cap.phases:
                sp.caps[(cap.id, phase)] = on
        else:
            for phase in cap.phases:
                sp.caps[(cap.id, phase)] = binary_value(f"ucap[{cap.id}.{phase}]")
    for pv in model.pvs:
        for phase in pv.phases:
            sp.pv_q[(pv.id, phase)] = solution.value(f"qdg[{pv.id}.{phase}]")
    for (bus, phase) in model.bus_phases:
        sp.v_ref[(bus, phase)] = math.sqrt(max(solution.value(f"v[{bus}.{phase}]"), 0.0))
    return sp


@dataclass
class OpfResult:
    setpoints: ControlSetpoints
    solution: MilpSolution
    problem: MilpProblem


def solve_cvr_opf(model: FeederModel,
                  forecast: dict[str, float],
                  prev: ControlSetpoints | None = None,
                  voltage_margin: float = 0.0,
                  branch_limits: bool = False,
                  time_limit: float = 60.0) -> OpfResult:
    """Build, solve and decode one interval's optimization."""
    problem = build_cvr_milp(model, forecast, prev, voltage_margin=voltage_margin)
    if branch_limits:
        for line in model.lines:
            if line.id not in model.regulator_by_line:
                add_branch_capacity(problem, line)
    solution = branch_and_bound(problem, time_limit=time_limit)
    if solution.status != "optimal":
        return OpfResult(setpoints=ControlSetpoints(), solution=solution,
                         problem=problem)
    return OpfResult(setpoints=extract_setpoints(model, solution), solution=solution,
                     problem=problem)
