"""Exact unbalanced power flow by backward/forward sweep.

Ground truth for the whole package: full complex arithmetic, ZIP loads,
voltage-coupled capacitors, PV as negative PQ load, ideal tap changers.
The radial topology makes the sweep a robust fixed point; no Jacobian
is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controls import ControlSetpoints
from .errors import PfConvergenceError, VoltageCollapseError
from .network import PHASE_INDEX, FeederModel, ZipLoad, nominal_voltage

COLLAPSE_GUARD_PU = 0.4


@dataclass
class ComplexState:
    """Per-phase complex voltages, receiving-end line currents, and
    sending-end complex line powers."""

    V: dict[tuple[str, str], complex]
    I: dict[tuple[str, str], complex]
    S: dict[tuple[str, str], complex]
    iterations: int = 0


def zip_current(load: ZipLoad, V: complex) -> complex:
    """Load current drawn at complex voltage ``V`` (pu)."""
    mag = abs(V)
    if mag <= COLLAPSE_GUARD_PU:
        raise VoltageCollapseError(
            f"load {load.id}: |V| = {mag:.4f} pu below collapse guard")
    p = load.p0 * (load.kp[0] * mag * mag + load.kp[1] * mag + load.kp[2])
    q = load.q0 * (load.kq[0] * mag * mag + load.kq[1] * mag + load.kq[2])
    return complex(p, q).conjugate() / V.conjugate()


def _shunt_current(model: FeederModel, bus_id: str, phase: str,
                   V: complex, injections, controls) -> complex:
    """Net shunt current drawn at a bus-phase: loads + capacitors + PV."""
    i = 0.0 + 0.0j
    for load in model.loads_at.get((bus_id, phase), ()):
        i += zip_current(load, V)
    for cap in model.caps_at.get(bus_id, ()):
        if phase in cap.phases and controls.cap_on(cap.id, phase):
            q = cap.q_rated * (abs(V) ** 2)
            i += (complex(0.0, -q) / V).conjugate()
    pq = injections.get((bus_id, phase))
    if pq is not None:
        s = -complex(pq[0], pq[1])
        i += (s / V).conjugate()
    return i


def sweep_solve(model: FeederModel,
                injections: dict[tuple[str, str], tuple[float, float]] | None = None,
                controls: ControlSetpoints | None = None,
                tol: float = 1e-9,
                max_iter: int = 100) -> ComplexState:
    """Iterate backward current accumulation and forward voltage updates.

    Converges when the largest per-phase voltage change falls below
    ``tol``; raises :class:`PfConvergenceError` otherwise.  Regulator
    lines are ideal transformers: the forward pass applies the turn
    ratio to the voltage and the backward pass scales the current so
    complex power is conserved across the device.
    """
    if injections is None:
        injections = {}
    if controls is None:
        controls = ControlSetpoints()
    reg_by_line = model.regulator_by_line
    lines_topo = model.lines_topo

    V: dict[tuple[str, str], complex] = {
        (bus, phase): nominal_voltage(phase) for (bus, phase) in model.bus_phases}
    I: dict[tuple[str, str], complex] = {lp: 0.0 + 0.0j for lp in model.line_phases}

    for it in range(1, max_iter + 1):
        # backward: accumulate receiving-end currents from leaves to root
        for line in reversed(lines_topo):
            bus_id = line.to_bus
            bus = model.bus_by_id[bus_id]
            for phase in line.phases:
                if phase not in bus.phases:
                    I[(line.id, phase)] = 0.0 + 0.0j
                    continue
                cur = _shunt_current(model, bus_id, phase, V[(bus_id, phase)],
                                     injections, controls)
                for child_line, _child in model.children_of[bus_id]:
                    if phase in child_line.phases:
                        i_child = I[(child_line.id, phase)]
                        reg = reg_by_line.get(child_line.id)
                        if reg is not None:
                            i_child = i_child * controls.ratio_for(reg.id, phase)
                        cur += i_child
                I[(line.id, phase)] = cur

        # forward: voltages from the fixed substation set
        max_dv = 0.0
        for phase in model.substation.phases:
            V[(model.substation.id, phase)] = nominal_voltage(phase)
        for line in lines_topo:
            to_bus = model.bus_by_id[line.to_bus]
            reg = reg_by_line.get(line.id)
            if reg is not None:
                for phase in to_bus.phases:
                    v_new = controls.ratio_for(reg.id, phase) * V[(line.from_bus, phase)]
                    max_dv = max(max_dv, abs(v_new - V[(to_bus.id, phase)]))
                    V[(to_bus.id, phase)] = v_new
                continue
            z = line.z_sub()
            i_vec = np.array([I[(line.id, p)] for p in line.phases])
            drop = z @ i_vec
            for k, phase in enumerate(line.phases):
                if phase not in to_bus.phases:
                    continue
                v_new = V[(line.from_bus, phase)] - drop[k]
                max_dv = max(max_dv, abs(v_new - V[(to_bus.id, phase)]))
                V[(to_bus.id, phase)] = v_new

        if max_dv < tol:
            S = _sending_powers(model, V, I, controls)
            return ComplexState(V=dict(V), I=dict(I), S=S, iterations=it)
    raise PfConvergenceError(f"sweep did not converge in {max_iter} iterations")


def _sending_powers(model, V, I, controls) -> dict[tuple[str, str], complex]:
    S = {}
    for line in model.lines:
        reg = model.regulator_by_line.get(line.id)
        for phase in line.phases:
            i_send = I[(line.id, phase)]
            if reg is not None:
                i_send = i_send * controls.ratio_for(reg.id, phase)
            S[(line.id, phase)] = V[(line.from_bus, phase)] * i_send.conjugate()
    return S


def kirchhoff_residual(model: FeederModel, state: ComplexState,
                       injections=None, controls: ControlSetpoints | None = None,
                       ) -> float:
    """Largest per-bus-phase current-balance violation of a state."""
    if injections is None:
        injections = {}
    if controls is None:
        controls = ControlSetpoints()
    worst = 0.0
    for (bus_id, phase) in model.bus_phases:
        bus = model.bus_by_id[bus_id]
        if bus.is_substation:
            continue
        parent = model.parent_line_of[bus_id]
        if phase not in parent.phases:
            continue
        into = state.I[(parent.id, phase)]
        out = _shunt_current(model, bus_id, phase, state.V[(bus_id, phase)],
                             injections, controls)
        for child_line, _child in model.children_of[bus_id]:
            if phase in child_line.phases:
                i_child = state.I[(child_line.id, phase)]
                reg = model.regulator_by_line.get(child_line.id)
                if reg is not None:
                    i_child = i_child * controls.ratio_for(reg.id, phase)
                out += i_child
        worst = max(worst, abs(into - out))
    return worst


def substation_power(model: FeederModel, state: ComplexState) -> complex:
    """Total complex power leaving the substation bus."""
    total = 0.0 + 0.0j
    for line, _child in model.children_of[model.substation.id]:
        for phase in line.phases:
            total += state.S[(line.id, phase)]
    return total


def total_losses(model: FeederModel, state: ComplexState) -> complex:
    """Sum of series losses; ideal regulator lines are lossless."""
    total = 0.0 + 0.0j
    for line in model.lines:
        if line.id in model.regulator_by_line:
            continue
        z = line.z_sub()
        i_vec = np.array([state.I[(line.id, p)] for p in line.phases])
        drop = z @ i_vec
        total += np.sum(drop * np.conj(i_vec))
    return complex(total)


def consumed_power(model: FeederModel, state: ComplexState,
                   controls: ControlSetpoints | None = None) -> tuple[complex, complex]:
    """(total ZIP demand, total switched-capacitor generation) at the state."""
    if controls is None:
        controls = ControlSetpoints()
    load_total = 0.0 + 0.0j
    cap_total = 0.0 + 0.0j
    for load in model.loads:
        mag = abs(state.V[(load.bus, load.phase)])
        p = load.p0 * (load.kp[0] * mag * mag + load.kp[1] * mag + load.kp[2])
        q = load.q0 * (load.kq[0] * mag * mag + load.kq[1] * mag + load.kq[2])
        load_total += complex(p, q)
    for cap in model.capacitors:
        for phase in cap.phases:
            if controls.cap_on(cap.id, phase):
                mag = abs(state.V[(cap.bus, phase)])
                cap_total += complex(0.0, cap.q_rated * mag * mag)
    return load_total, cap_total
