"""Linearized three-phase branch-flow model in squared voltage magnitudes.

Losses are dropped from the flow equations and the phase angles are
assumed 120 degrees apart, which turns the voltage-drop relation into a
linear map ``dv = HP @ P + HQ @ Q`` per line, with real 3x3 coefficient
matrices built from the phase impedance entries.  Voltage-dependent
demand enters through an affine load model whose slope comes from the
ZIP coefficients, so one downstream flow accumulation plus one upstream
voltage pass solves the network for a fixed demand linearization; a
short fixed-point loop reconciles demand with the solved voltages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controls import ControlSetpoints
from .errors import PfConvergenceError, ValidationError
from .network import PHASE_INDEX, PHASES, FeederModel, Line

# cos/sin of the assumed angle difference between phase p (row) and
# phase q (column): 0 on the diagonal, +120 deg for (a,b), (b,c), (c,a),
# -120 deg for the transposed pairs.
_ANGLE = np.array([
    [0.0, 2.0 * math.pi / 3.0, -2.0 * math.pi / 3.0],
    [-2.0 * math.pi / 3.0, 0.0, 2.0 * math.pi / 3.0],
    [2.0 * math.pi / 3.0, -2.0 * math.pi / 3.0, 0.0],
])
ROT_COS = np.cos(_ANGLE)
ROT_SIN = np.sin(_ANGLE)


@dataclass(frozen=True)
class CvrLoadModel:
    """Affine voltage-dependent demand: exact nominal power at v = 1 pu^2."""

    p0: float
    q0: float
    cvr_p: float
    cvr_q: float


def cvr_from_zip(kp: tuple[float, float, float],
                 kq: tuple[float, float, float]) -> tuple[float, float]:
    """Demand-sensitivity factors equivalent to a ZIP mix near nominal voltage."""
    for name, k in (("kp", kp), ("kq", kq)):
        if abs(sum(k) - 1.0) > 1e-9:
            raise ValidationError(f"{name} coefficients sum to {sum(k)!r}, not 1")
    return 2.0 * kp[0] + kp[1], 2.0 * kq[0] + kq[1]


def cvr_load_eval(m: CvrLoadModel, v: float) -> tuple[float, float]:
    """Demand at squared voltage ``v`` (pu^2)."""
    p = m.p0 * (1.0 + 0.5 * m.cvr_p * (v - 1.0))
    q = m.q0 * (1.0 + 0.5 * m.cvr_q * (v - 1.0))
    return p, q


@dataclass(frozen=True)
class LineCoefficients:
    """Real matrices mapping per-phase line flows to a squared-voltage drop."""

    hp: np.ndarray
    hq: np.ndarray


def line_coefficients(line: Line) -> LineCoefficients:
    """Voltage-drop coefficients for one line.

    ``dv[p] = sum_q hp[p,q] P[q] + hq[p,q] Q[q]`` where P/Q are the
    receiving-end-bound flows on each present phase.  Rows and columns of
    absent phases are zero.
    """
    r = np.real(line.z)
    x = np.imag(line.z)
    hp = 2.0 * (r * ROT_COS + x * ROT_SIN)
    hq = 2.0 * (x * ROT_COS - r * ROT_SIN)
    mask = np.zeros((3, 3))
    idx = [PHASE_INDEX[p] for p in line.phases]
    mask[np.ix_(idx, idx)] = 1.0
    hp = hp * mask
    hq = hq * mask
    hp.flags.writeable = False
    hq.flags.writeable = False
    return LineCoefficients(hp=hp, hq=hq)


@dataclass
class LinearPfSolution:
    """Solved squared voltages, lossless flows and realized demand."""

    v: dict[tuple[str, str], float]
    P: dict[tuple[str, str], float]
    Q: dict[tuple[str, str], float]
    p_load: dict[str, float]
    q_load: dict[str, float]
    q_cap: dict[tuple[str, str], float]
    iterations: int


def _load_models(model: FeederModel) -> dict[str, CvrLoadModel]:
    out = {}
    for load in model.loads:
        cvr_p, cvr_q = cvr_from_zip(load.kp, load.kq)
        out[load.id] = CvrLoadModel(p0=load.p0, q0=load.q0, cvr_p=cvr_p, cvr_q=cvr_q)
    return out


def solve_linear_pf(model: FeederModel,
                    injections: dict[tuple[str, str], tuple[float, float]] | None = None,
                    controls: ControlSetpoints | None = None,
                    tol: float = 1e-10,
                    max_iter: int = 50) -> LinearPfSolution:
    """Solve the linear model under the given injections and device controls.

    ``injections`` maps (bus, phase) to net (p, q) generation in pu.
    Demand and switched-capacitor output are voltage-coupled, so the
    downstream/upstream sweep pair iterates from a flat start until the
    squared-voltage profile is stationary to ``tol``.
    """
    if injections is None:
        injections = {}
    if controls is None:
        controls = ControlSetpoints()
    load_models = _load_models(model)
    coeffs = {l.id: line_coefficients(l) for l in model.lines}
    reg_by_line = model.regulator_by_line
    lines_topo = model.lines_topo

    v = {bp: 1.0 for bp in model.bus_phases}
    P: dict[tuple[str, str], float] = {}
    Q: dict[tuple[str, str], float] = {}
    p_load: dict[str, float] = {}
    q_load: dict[str, float] = {}
    q_cap: dict[tuple[str, str], float] = {}

    def one_pass(v_in):
        # demand and shunt output at the current voltage iterate
        for load in model.loads:
            p_load[load.id], q_load[load.id] = cvr_load_eval(
                load_models[load.id], v_in[(load.bus, load.phase)])
        for cap in model.capacitors:
            for phase in cap.phases:
                on = controls.cap_on(cap.id, phase)
                q_cap[(cap.id, phase)] = (
                    cap.q_rated * v_in[(cap.bus, phase)] if on else 0.0)
        # downstream accumulation: flows from leaves to root
        for line in reversed(lines_topo):
            bus = model.bus_by_id[line.to_bus]
            for phase in line.phases:
                if phase not in bus.phases:
                    P[(line.id, phase)] = 0.0
                    Q[(line.id, phase)] = 0.0
                    continue
                p = q = 0.0
                for load in model.loads_at.get((bus.id, phase), ()):
                    p += p_load[load.id]
                    q += q_load[load.id]
                for cap in model.caps_at.get(bus.id, ()):
                    if phase in cap.phases:
                        q -= q_cap[(cap.id, phase)]
                pq = injections.get((bus.id, phase))
                if pq is not None:
                    p -= pq[0]
                    q -= pq[1]
                for child_line, _child in model.children_of[bus.id]:
                    if phase in child_line.phases:
                        p += P[(child_line.id, phase)]
                        q += Q[(child_line.id, phase)]
                P[(line.id, phase)] = p
                Q[(line.id, phase)] = q
        # upstream voltage pass
        v_out = dict(v_in)
        for phase in model.substation.phases:
            v_out[(model.substation.id, phase)] = 1.0
        for line in lines_topo:
            reg = reg_by_line.get(line.id)
            to_bus = model.bus_by_id[line.to_bus]
            if reg is not None:
                for phase in to_bus.phases:
                    ratio = controls.ratio_for(reg.id, phase)
                    v_out[(to_bus.id, phase)] = (
                        ratio * ratio * v_out[(line.from_bus, phase)])
                continue
            c = coeffs[line.id]
            for phase in to_bus.phases:
                i = PHASE_INDEX[phase]
                drop = 0.0
                for qphase in line.phases:
                    j = PHASE_INDEX[qphase]
                    drop += c.hp[i, j] * P[(line.id, qphase)]
                    drop += c.hq[i, j] * Q[(line.id, qphase)]
                v_out[(to_bus.id, phase)] = v_out[(line.from_bus, phase)] - drop
        return v_out

    for it in range(1, max_iter + 1):
        v_new = one_pass(v)
        delta = max(abs(v_new[k] - v[k]) for k in v_new)
        v = v_new
        if delta < tol:
            # final consistency pass: flows evaluated at the converged
            # voltages, then voltages recomputed from those flows, so the
            # returned fields satisfy the balance and drop equations exactly
            v = one_pass(v)
            return LinearPfSolution(v=v, P=dict(P), Q=dict(Q),
                                    p_load=dict(p_load), q_load=dict(q_load),
                                    q_cap=dict(q_cap), iterations=it)
    raise PfConvergenceError(
        f"load-voltage fixed point did not converge in {max_iter} iterations")


@dataclass
class PfComparison:
    """Per-phase maxima of linear-vs-sweep voltage and flow differences."""

    max_dv_by_phase: dict[str, float]
    max_ds_pct_by_phase: dict[str, float]

    @property
    def max_dv(self) -> float:
        return max(self.max_dv_by_phase.values())

    @property
    def max_ds_pct(self) -> float:
        vals = [v for v in self.max_ds_pct_by_phase.values() if not math.isnan(v)]
        return max(vals) if vals else float("nan")


def compare_with_oracle(model: FeederModel,
                        injections=None,
                        controls: ControlSetpoints | None = None,
                        flow_floor: float = 1e-4) -> PfComparison:
    """Run both solvers and report per-phase error maxima.

    Flow error is relative to the sweep solution's sending-end apparent
    power and skips line-phases carrying less than ``flow_floor`` pu.
    """
    from .sweep_pf import sweep_solve

    lin = solve_linear_pf(model, injections, controls)
    state = sweep_solve(model, injections, controls)

    max_dv = {p: 0.0 for p in PHASES}
    max_ds = {p: float("nan") for p in PHASES}
    for (bus, phase) in model.bus_phases:
        dv = abs(math.sqrt(max(lin.v[(bus, phase)], 0.0)) - abs(state.V[(bus, phase)]))
        if dv > max_dv[phase]:
            max_dv[phase] = dv
    for (lid, phase) in model.line_phases:
        s_oracle = state.S[(lid, phase)]
        mag = abs(s_oracle)
        if mag < flow_floor:
            continue
        s_lin = complex(lin.P[(lid, phase)], lin.Q[(lid, phase)])
        pct = 100.0 * abs(s_lin - s_oracle) / mag
        if math.isnan(max_ds[phase]) or pct > max_ds[phase]:
            max_ds[phase] = pct
    return PfComparison(max_dv_by_phase=max_dv, max_ds_pct_by_phase=max_ds)
