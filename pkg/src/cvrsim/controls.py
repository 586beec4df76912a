"""Control-plane value objects shared by the solvers and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

from .network import TAP_NEUTRAL, FeederModel, tap_ratio


@dataclass
class ControlSetpoints:
    """One decision interval's device commands.

    ``taps`` holds an integer position per (regulator, phase); gang-operated
    regulators carry equal values on all their phases.  ``caps`` holds the
    switch state per (capacitor, phase).  ``pv_q`` is the commanded reactive
    injection per (pv, phase) in pu, and ``v_ref`` the target voltage
    magnitude per (bus, phase) in pu.
    """

    taps: dict[tuple[str, str], int] = field(default_factory=dict)
    caps: dict[tuple[str, str], bool] = field(default_factory=dict)
    pv_q: dict[tuple[str, str], float] = field(default_factory=dict)
    v_ref: dict[tuple[str, str], float] = field(default_factory=dict)

    def copy(self) -> "ControlSetpoints":
        return ControlSetpoints(taps=dict(self.taps), caps=dict(self.caps),
                                pv_q=dict(self.pv_q), v_ref=dict(self.v_ref))

    def tap_for(self, reg_id: str, phase: str) -> int:
        return self.taps.get((reg_id, phase), TAP_NEUTRAL)

    def ratio_for(self, reg_id: str, phase: str) -> float:
        return tap_ratio(self.tap_for(reg_id, phase))

    def cap_on(self, cap_id: str, phase: str) -> bool:
        return self.caps.get((cap_id, phase), False)

    def q_for(self, pv_id: str, phase: str) -> float:
        return self.pv_q.get((pv_id, phase), 0.0)


def neutral_setpoints(model: FeederModel) -> ControlSetpoints:
    """Baseline controls: taps at ratio 1.0, capacitors off, zero PV reactive."""
    sp = ControlSetpoints()
    for reg in model.regulators:
        for p in reg.phases:
            sp.taps[(reg.id, p)] = TAP_NEUTRAL
    for cap in model.capacitors:
        for p in cap.phases:
            sp.caps[(cap.id, p)] = False
    for pv in model.pvs:
        for p in pv.phases:
            sp.pv_q[(pv.id, p)] = 0.0
    return sp


def pv_injections(model: FeederModel,
                  p_by_pv: dict[str, float],
                  q_by_pv_phase: dict[tuple[str, str], float] | None = None,
                  ) -> dict[tuple[str, str], tuple[float, float]]:
    """Aggregate per-unit PV output into net (p, q) injections per bus-phase.

    ``p_by_pv`` is the per-phase active output of each unit; missing units
    produce zero.  Generation is positive.
    """
    inj: dict[tuple[str, str], tuple[float, float]] = {}
    for pv in model.pvs:
        p = p_by_pv.get(pv.id, 0.0)
        for phase in pv.phases:
            q = 0.0
            if q_by_pv_phase is not None:
                q = q_by_pv_phase.get((pv.id, phase), 0.0)
            key = (pv.bus, phase)
            p_old, q_old = inj.get(key, (0.0, 0.0))
            inj[key] = (p_old + p, q_old + q)
    return inj
