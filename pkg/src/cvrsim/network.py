"""Network data model for unbalanced radial distribution feeders.

Everything downstream of the parser works in per-unit on a single MVA
base.  A built model is immutable and safe to share across threads;
topology lookups are cached on first use.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import TopologyError, ValidationError

PHASES: tuple[str, str, str] = ("a", "b", "c")
PHASE_INDEX: dict[str, int] = {p: i for i, p in enumerate(PHASES)}

# Tap geometry shared by every regulator: 33 positions spanning +/-10%,
# so both end ratios 0.9 and 1.1 are reachable.
TAP_MIN = 0
TAP_MAX = 32
TAP_STEP = 0.00625
TAP_NEUTRAL = 16

ZIP_SUM_TOL = 1e-9


def tap_ratio(tap: int) -> float:
    """Turn ratio for an integer tap position (0.9 at tap 0, 1.1 at tap 32)."""
    if not TAP_MIN <= tap <= TAP_MAX:
        raise ValueError(f"tap {tap} outside {TAP_MIN}..{TAP_MAX}")
    return 0.9 + TAP_STEP * tap


def nominal_voltage(phase: str) -> complex:
    """Flat-start complex voltage: 1 pu magnitude, phases 120 degrees apart."""
    angle = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}[phase]
    return cmath.exp(1j * angle)


def validate_phases(phases: tuple[str, ...]) -> None:
    if not phases:
        raise ValidationError("empty phase set")
    if list(phases) != sorted(set(phases)):
        raise ValidationError(f"phases {phases} not a sorted set")
    for p in phases:
        if p not in PHASES:
            raise ValidationError(f"unknown phase {p!r}")


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    vmin: float = 0.95
    vmax: float = 1.05
    is_substation: bool = False

    def __post_init__(self):
        validate_phases(self.phases)
        if not self.vmin < self.vmax:
            raise ValidationError(f"bus {self.id}: vmin {self.vmin} >= vmax {self.vmax}")


@dataclass(frozen=True, eq=False)
class Line:
    """Series element with a 3x3 per-unit phase impedance matrix.

    Rows/columns of absent phases are zero.  ``s_max`` is the per-phase
    apparent-power capacity in pu.
    """

    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    z: np.ndarray
    s_max: float = 10.0

    def __post_init__(self):
        validate_phases(self.phases)
        z = np.asarray(self.z, dtype=complex)
        if z.shape != (3, 3):
            raise ValidationError(f"line {self.id}: z must be 3x3")
        idx = [PHASE_INDEX[p] for p in self.phases]
        sub = z[np.ix_(idx, idx)]
        if not np.allclose(sub, sub.T, atol=1e-12):
            raise ValidationError(f"line {self.id}: z not symmetric on present phases")
        if np.any(np.real(np.diag(sub)) < -1e-12):
            raise ValidationError(f"line {self.id}: negative series resistance")
        absent = [i for i in range(3) if i not in idx]
        if absent and np.any(z[absent, :] != 0):
            raise ValidationError(f"line {self.id}: z entries on absent phases")
        if absent and np.any(z[:, absent] != 0):
            raise ValidationError(f"line {self.id}: z entries on absent phases")
        if not self.s_max > 0:
            raise ValidationError(f"line {self.id}: s_max must be positive")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    def z_sub(self) -> np.ndarray:
        """Impedance restricted to the present phases, in phase order."""
        idx = [PHASE_INDEX[p] for p in self.phases]
        return self.z[np.ix_(idx, idx)]


@dataclass(frozen=True)
class Regulator:
    """Tap-changing autotransformer riding a line; series impedance ignored."""

    id: str
    line: str
    phases: tuple[str, ...]
    gang_operated: bool = False

    def __post_init__(self):
        validate_phases(self.phases)


@dataclass(frozen=True)
class CapacitorBank:
    id: str
    bus: str
    phases: tuple[str, ...]
    q_rated: float  # per-phase, pu
    gang_operated: bool = False

    def __post_init__(self):
        validate_phases(self.phases)
        if not self.q_rated > 0:
            raise ValidationError(f"capacitor {self.id}: q_rated must be positive")


@dataclass(frozen=True)
class ZipLoad:
    """Single-phase load: constant-Z / constant-I / constant-P mix at V0 = 1 pu."""

    id: str
    bus: str
    phase: str
    p0: float
    q0: float
    kp: tuple[float, float, float]
    kq: tuple[float, float, float]

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValidationError(f"load {self.id}: unknown phase {self.phase!r}")
        for name, k in (("kp", self.kp), ("kq", self.kq)):
            if abs(sum(k) - 1.0) > ZIP_SUM_TOL:
                raise ValidationError(
                    f"load {self.id}: {name} coefficients sum to {sum(k)!r}, not 1"
                )


@dataclass(frozen=True)
class PvUnit:
    """PV generator behind a smart inverter; ratings are per phase, pu."""

    id: str
    bus: str
    phases: tuple[str, ...]
    p_max: float
    s_rated: float
    profile: str

    def __post_init__(self):
        validate_phases(self.phases)
        if self.s_rated < self.p_max:
            raise ValidationError(f"pv {self.id}: s_rated < p_max")


@dataclass(frozen=True, eq=False)
class FeederModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    regulators: tuple[Regulator, ...]
    capacitors: tuple[CapacitorBank, ...]
    loads: tuple[ZipLoad, ...]
    pvs: tuple[PvUnit, ...]
    base_mva: float
    base_kv: float

    @classmethod
    def build(cls, buses, lines, regulators=(), capacitors=(), loads=(), pvs=(),
              base_mva=1.0, base_kv=4.16) -> "FeederModel":
        """Sort components by id, then validate every model invariant."""
        model = cls(
            buses=tuple(sorted(buses, key=lambda b: b.id)),
            lines=tuple(sorted(lines, key=lambda l: l.id)),
            regulators=tuple(sorted(regulators, key=lambda r: r.id)),
            capacitors=tuple(sorted(capacitors, key=lambda c: c.id)),
            loads=tuple(sorted(loads, key=lambda l: l.id)),
            pvs=tuple(sorted(pvs, key=lambda p: p.id)),
            base_mva=base_mva,
            base_kv=base_kv,
        )
        model._validate()
        return model

    # -- lookups ----------------------------------------------------------

    @cached_property
    def bus_by_id(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def line_by_id(self) -> dict[str, Line]:
        return {l.id: l for l in self.lines}

    @cached_property
    def substation(self) -> Bus:
        subs = [b for b in self.buses if b.is_substation]
        if len(subs) != 1:
            raise ValidationError(f"expected exactly one substation, found {len(subs)}")
        return subs[0]

    @cached_property
    def regulator_by_line(self) -> dict[str, Regulator]:
        return {r.line: r for r in self.regulators}

    @cached_property
    def parent_line_of(self) -> dict[str, Line | None]:
        parents: dict[str, Line | None] = {self.substation.id: None}
        for line in self.lines:
            parents[line.to_bus] = line
        return parents

    @cached_property
    def children_of(self) -> dict[str, tuple[tuple[Line, Bus], ...]]:
        out: dict[str, list[tuple[Line, Bus]]] = {b.id: [] for b in self.buses}
        for line in self.lines:
            out[line.from_bus].append((line, self.bus_by_id[line.to_bus]))
        return {bid: tuple(sorted(kids, key=lambda lb: lb[1].id))
                for bid, kids in out.items()}

    @cached_property
    def lines_topo(self) -> tuple[Line, ...]:
        """Lines ordered root-down (every line after its parent line)."""
        order: list[Line] = []
        stack = [self.substation.id]
        while stack:
            bid = stack.pop()
            kids = self.children_of[bid]
            for line, _child in kids:
                order.append(line)
            for _line, child in reversed(kids):
                stack.append(child.id)
        return tuple(order)

    @cached_property
    def loads_at(self) -> dict[tuple[str, str], tuple[ZipLoad, ...]]:
        out: dict[tuple[str, str], list[ZipLoad]] = {}
        for load in self.loads:
            out.setdefault((load.bus, load.phase), []).append(load)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def caps_at(self) -> dict[str, tuple[CapacitorBank, ...]]:
        out: dict[str, list[CapacitorBank]] = {}
        for cap in self.capacitors:
            out.setdefault(cap.bus, []).append(cap)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def pvs_at(self) -> dict[str, tuple[PvUnit, ...]]:
        out: dict[str, list[PvUnit]] = {}
        for pv in self.pvs:
            out.setdefault(pv.bus, []).append(pv)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def bus_phases(self) -> tuple[tuple[str, str], ...]:
        """All (bus, phase) pairs in deterministic order."""
        return tuple((b.id, p) for b in self.buses for p in b.phases)

    @cached_property
    def line_phases(self) -> tuple[tuple[str, str], ...]:
        return tuple((l.id, p) for l in self.lines for p in l.phases)

    def children(self, bus_id: str) -> tuple[tuple[Line, Bus], ...]:
        """Outgoing (line, child bus) pairs sorted by child id."""
        if bus_id not in self.bus_by_id:
            raise ValidationError(f"unknown bus {bus_id!r}")
        return self.children_of[bus_id]

    def root_path(self, bus_id: str) -> tuple[Line, ...]:
        """Lines from the substation down to ``bus_id``, root first."""
        if bus_id not in self.bus_by_id:
            raise ValidationError(f"unknown bus {bus_id!r}")
        path: list[Line] = []
        cur = bus_id
        while True:
            line = self.parent_line_of[cur]
            if line is None:
                break
            path.append(line)
            cur = line.from_bus
        return tuple(reversed(path))

    # -- validation -------------------------------------------------------

    def _validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus id")
        for group in (self.lines, self.regulators, self.capacitors, self.loads, self.pvs):
            gids = [g.id for g in group]
            if len(set(gids)) != len(gids):
                raise ValidationError("duplicate component id")
        _ = self.substation
        if self.base_mva <= 0 or self.base_kv <= 0:
            raise ValidationError("base quantities must be positive")

        bus_ids = set(ids)
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in bus_ids:
                    raise ValidationError(f"line {line.id}: unknown bus {end!r}")
            from_ph = set(self.bus_by_id[line.from_bus].phases)
            to_ph = set(self.bus_by_id[line.to_bus].phases)
            if not set(line.phases) <= from_ph:
                raise ValidationError(
                    f"line {line.id}: phases {line.phases} not on bus {line.from_bus}")
            if not to_ph <= set(line.phases):
                raise ValidationError(
                    f"line {line.id}: bus {line.to_bus} phases {tuple(sorted(to_ph))} "
                    f"exceed line phases {line.phases}")

        self._check_radial()

        line_ids = {l.id for l in self.lines}
        seen_reg_lines: set[str] = set()
        for reg in self.regulators:
            if reg.line not in line_ids:
                raise ValidationError(f"regulator {reg.id}: unknown line {reg.line!r}")
            if reg.line in seen_reg_lines:
                raise ValidationError(f"line {reg.line}: multiple regulators")
            seen_reg_lines.add(reg.line)
            line = self.line_by_id[reg.line]
            if tuple(reg.phases) != tuple(line.phases):
                raise ValidationError(
                    f"regulator {reg.id}: phases must equal line phases {line.phases}")
        for cap in self.capacitors:
            if cap.bus not in bus_ids:
                raise ValidationError(f"capacitor {cap.id}: unknown bus {cap.bus!r}")
            if not set(cap.phases) <= set(self.bus_by_id[cap.bus].phases):
                raise ValidationError(f"capacitor {cap.id}: phases not on bus {cap.bus}")
        for load in self.loads:
            if load.bus not in bus_ids:
                raise ValidationError(f"load {load.id}: unknown bus {load.bus!r}")
            if load.phase not in self.bus_by_id[load.bus].phases:
                raise ValidationError(f"load {load.id}: phase {load.phase} not on bus {load.bus}")
        for pv in self.pvs:
            if pv.bus not in bus_ids:
                raise ValidationError(f"pv {pv.id}: unknown bus {pv.bus!r}")
            if not set(pv.phases) <= set(self.bus_by_id[pv.bus].phases):
                raise ValidationError(f"pv {pv.id}: phases not on bus {pv.bus}")

    def _check_radial(self) -> None:
        if len(self.lines) != len(self.buses) - 1:
            raise TopologyError(
                f"non-radial topology: {len(self.lines)} lines for {len(self.buses)} buses")
        root = self.substation.id
        parent_count: dict[str, int] = {}
        for line in self.lines:
            parent_count[line.to_bus] = parent_count.get(line.to_bus, 0) + 1
        for bid, n in parent_count.items():
            if n > 1:
                raise TopologyError(f"bus {bid}: {n} parent lines")
        if root in parent_count:
            raise TopologyError("substation has a parent line")
        # reachability: with |E| = |N|-1, unique parents and a parentless
        # root, a full traversal proves the graph is a tree
        seen = {root}
        stack = [root]
        while stack:
            for line, child in self.children_of[stack.pop()]:
                if child.id in seen:
                    raise TopologyError(f"bus {child.id} reached twice")
                seen.add(child.id)
                stack.append(child.id)
        if len(seen) != len(self.buses):
            missing = sorted(b.id for b in self.buses if b.id not in seen)
            raise TopologyError(f"buses unreachable from substation: {missing}")


def positive_sequence_impedance(line: Line) -> complex:
    """Positive-sequence equivalent of the phase impedance matrix.

    Mean of present-phase diagonal entries minus mean of present-phase
    off-diagonal entries; for a single-phase line this is the diagonal
    entry itself.
    """
    sub = line.z_sub()
    n = sub.shape[0]
    z_self = np.trace(sub) / n
    if n == 1:
        return complex(z_self)
    off = (np.sum(sub) - np.trace(sub)) / (n * n - n)
    return complex(z_self - off)


def thevenin_impedance(model: FeederModel, bus_id: str) -> complex:
    """Source-side equivalent impedance: path sum of positive-sequence line
    impedances, ignoring shunts.  Regulator-carrying lines contribute zero.
    """
    total = 0.0 + 0.0j
    for line in model.root_path(bus_id):
        if line.id in model.regulator_by_line:
            continue
        total += positive_sequence_impedance(line)
    return total


def scale_loads(model: FeederModel, alpha: float) -> FeederModel:
    """New model with every load's nominal demand scaled by ``alpha``."""
    if alpha == 1.0:
        return model
    loads = tuple(replace(l, p0=l.p0 * alpha, q0=l.q0 * alpha) for l in model.loads)
    out = FeederModel(
        buses=model.buses, lines=model.lines, regulators=model.regulators,
        capacitors=model.capacitors, loads=loads, pvs=model.pvs,
        base_mva=model.base_mva, base_kv=model.base_kv)
    return out


def model_counts(model: FeederModel) -> dict[str, int]:
    return {
        "buses": len(model.buses),
        "lines": len(model.lines),
        "regulators": len(model.regulators),
        "capacitors": len(model.capacitors),
        "loads": len(model.loads),
        "pvs": len(model.pvs),
    }
