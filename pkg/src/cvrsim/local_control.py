"""Fast per-inverter reactive controllers.

Both controllers cancel the voltage movement caused by the unit's own
active-power deviation from the planned interval value, clamped to the
inverter capability box.  The impedance controller scales the deviation
by the source-side R/X ratio; the flow-measurement controller uses the
per-line 3x3 sensitivity blocks and the measured flow deltas on the
unit's child lines, which folds in what downstream inverters are doing.
Units never communicate: every input is measurable at the point of
connection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LocalControlError
from .linear_pf import line_coefficients
from .network import PHASE_INDEX, FeederModel, Line, thevenin_impedance


@dataclass(frozen=True)
class InverterCapability:
    """Per-phase reactive headroom at the current operating point."""

    s_rated: float
    p_now: float

    @property
    def q_limit(self) -> float:
        return math.sqrt(max(0.0, self.s_rated ** 2 - self.p_now ** 2))

    def clamp(self, q: float) -> float:
        lim = self.q_limit
        return min(max(q, -lim), lim)


@dataclass
class LocalMeasurement:
    """Quantities a unit can read at its bus.

    ``dp_local`` is the per-phase change in PV active output relative to
    the interval forecast.  ``child_flow_deltas`` maps each child line id
    to per-phase (dP, dQ) deltas relative to the interval-start flows,
    measured at the bus with the into-the-bus sign convention (a line
    exporting more power downstream reads as a negative delta).
    """

    dp_local: dict[str, float]
    child_flow_deltas: dict[str, dict[str, tuple[float, float]]] = field(
        default_factory=dict)


def impedance_step(zth: complex,
                   dp_local: dict[str, float],
                   q_prev: dict[str, float],
                   cap: dict[str, InverterCapability]) -> dict[str, float]:
    """R/X rule: dq = -(R/X) dp per phase, then clamp to the capability box."""
    r, x = zth.real, zth.imag
    if x <= 0.0:
        raise LocalControlError(f"nonpositive Thevenin reactance {x!r}")
    ratio = r / x
    out = {}
    for phase, dp in dp_local.items():
        dq = -ratio * dp
        out[phase] = cap[phase].clamp(q_prev[phase] + dq)
    return out


def flow_matrix(line: Line) -> np.ndarray:
    """Sensitivity of reactive to active flow change on one line.

    Solves the zero-voltage-drop condition ``R_blk dP + X_blk dQ = 0``
    for ``dQ = -A dP``; returns ``A`` embedded in a 3x3 array whose
    absent-phase rows and columns are zero.
    """
    coeffs = line_coefficients(line)
    idx = [PHASE_INDEX[p] for p in line.phases]
    r_blk = 0.5 * coeffs.hp[np.ix_(idx, idx)]
    x_blk = 0.5 * coeffs.hq[np.ix_(idx, idx)]
    det = np.linalg.det(x_blk)
    if abs(det) < 1e-14:
        raise LocalControlError(f"line {line.id}: singular reactance block")
    a_sub = np.linalg.solve(x_blk, r_blk)
    a = np.zeros((3, 3))
    a[np.ix_(idx, idx)] = a_sub
    return a


def measurement_step(parent_a: np.ndarray,
                     child_as: dict[str, np.ndarray],
                     meas: LocalMeasurement,
                     q_prev: dict[str, float],
                     cap: dict[str, InverterCapability]) -> dict[str, float]:
    """Flow-measurement rule.

    dq = -A_parent (dp_local + sum_children dP) + sum_children A_child dP,
    with child deltas in the into-the-bus convention; reduces to the
    impedance rule on a single-phase leaf.
    """
    dp_vec = np.zeros(3)
    for phase, dp in meas.dp_local.items():
        dp_vec[PHASE_INDEX[phase]] = dp
    child_sum = np.zeros(3)
    cross = np.zeros(3)
    for line_id, deltas in sorted(meas.child_flow_deltas.items()):
        a_child = child_as[line_id]
        d_vec = np.zeros(3)
        for phase, (dp, _dq) in deltas.items():
            d_vec[PHASE_INDEX[phase]] = dp
        child_sum += d_vec
        cross += a_child @ d_vec
    dq_vec = -(parent_a @ (dp_vec + child_sum)) + cross
    out = {}
    for phase in meas.dp_local:
        i = PHASE_INDEX[phase]
        out[phase] = cap[phase].clamp(q_prev[phase] + float(dq_vec[i]))
    return out


def resolve_thevenin(model: FeederModel, bus_id: str) -> complex | None:
    """Impedance-controller operating point for a bus.

    Falls back to the parent line's mean diagonal reactance when the
    positive-sequence reactance is nonpositive; returns None (controller
    disabled) when no usable reactance exists.
    """
    zth = thevenin_impedance(model, bus_id)
    if zth.imag > 0.0:
        return zth
    parent = model.parent_line_of.get(bus_id)
    if parent is None or parent.id in model.regulator_by_line:
        return None
    sub = parent.z_sub()
    x_diag = float(np.mean(np.imag(np.diag(sub))))
    if x_diag > 0.0:
        return complex(zth.real if zth.real > 0 else x_diag, x_diag)
    return None


def controller_effectiveness(voltages: dict[tuple[str, str], np.ndarray],
                             v_ref: dict[tuple[str, str], float],
                             ) -> dict[tuple[str, str], float]:
    """Median absolute deviation of each node voltage from its reference."""
    out = {}
    for key, series in voltages.items():
        ref = v_ref.get(key)
        if ref is None:
            continue
        out[key] = float(np.median(np.abs(np.asarray(series) - ref)))
    return out
