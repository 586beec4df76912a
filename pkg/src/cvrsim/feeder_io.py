"""Feeder file format: parse, validate, serialize.

The format is line-oriented UTF-8 with ``#`` comments.  Records:

    BASE <mva> <kv>
    BUS  <id> <phases> [SLACK] [VMIN <pu>] [VMAX <pu>]
    LINE <id> <from> <to> <phases> Z <9 complex entries row-major, ohms> [SMAX <pu>]
    REG  <id> <line> <phases> [GANG]
    CAP  <id> <bus> <phases> <kvar-per-phase> [GANG]
    LOAD <id> <bus> <phase> <kw> <kvar> ZIP <kp1 kp2 kp3 kq1 kq2 kq3>
    PV   <id> <bus> <phases> <kw-max-per-phase> <kva-per-phase> PROFILE <profile-id>

Impedances are given in ohms and converted to per-unit on the declared
base; powers are given in kW/kvar/kVA and converted the same way.
PV profiles live in a companion CSV with columns
``profile_id,timestamp_minutes,multiplier``.
"""

from __future__ import annotations

import csv
import io
import re

import numpy as np

from .errors import FeederFormatError
from .network import (
    PHASES,
    PHASE_INDEX,
    Bus,
    CapacitorBank,
    FeederModel,
    Line,
    PvUnit,
    Regulator,
    ZipLoad,
)

_TOKEN_RE = re.compile(r"\S+")


class _Record:
    """Tokenized input line with position-aware error reporting."""

    def __init__(self, line_no: int, text: str):
        self.line_no = line_no
        self.tokens = [(m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(text)]
        self.pos = 0

    def error(self, message: str, col: int | None = None) -> FeederFormatError:
        if col is None:
            col = self.tokens[-1][1] if self.tokens else 1
        return FeederFormatError(message, line=self.line_no, col=col)

    def next(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.tokens):
            raise self.error(f"missing {what}")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def next_str(self, what: str) -> str:
        return self.next(what)[0]

    def next_float(self, what: str) -> float:
        tok, col = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise self.error(f"expected number for {what}, got {tok!r}", col) from None

    def next_complex(self, what: str) -> complex:
        tok, col = self.next(what)
        try:
            return complex(tok)
        except ValueError:
            raise self.error(f"expected complex for {what}, got {tok!r}", col) from None

    def next_phases(self, what: str = "phases") -> tuple[str, ...]:
        tok, col = self.next(what)
        phases = tuple(sorted(set(tok)))
        if not phases or any(p not in PHASES for p in phases) or len(set(tok)) != len(tok):
            raise self.error(f"bad phase set {tok!r}", col)
        return phases

    def keyword(self, expected: str) -> None:
        tok, col = self.next(expected)
        if tok != expected:
            raise self.error(f"expected {expected!r}, got {tok!r}", col)

    def remaining(self) -> bool:
        return self.pos < len(self.tokens)

    def done(self) -> None:
        if self.remaining():
            tok, col = self.tokens[self.pos]
            raise self.error(f"unexpected trailing token {tok!r}", col)


def parse_feeder(text: str) -> FeederModel:
    """Parse a feeder file into a validated per-unit :class:`FeederModel`."""
    base_mva = None
    base_kv = None
    buses: list[Bus] = []
    raw_lines: list[tuple[_Record, dict]] = []
    regs: list[tuple[_Record, Regulator]] = []
    caps: list[tuple[_Record, dict]] = []
    loads: list[tuple[_Record, dict]] = []
    pvs: list[tuple[_Record, dict]] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        rec = _Record(line_no, body)
        kind, col = rec.next("record keyword")

        if kind == "BASE":
            if base_mva is not None:
                raise rec.error("duplicate BASE record", col)
            base_mva = rec.next_float("base MVA")
            base_kv = rec.next_float("base kV")
            if base_mva <= 0 or base_kv <= 0:
                raise rec.error("base quantities must be positive")
            rec.done()
        elif kind == "BUS":
            bid = rec.next_str("bus id")
            phases = rec.next_phases()
            slack = False
            vmin, vmax = 0.95, 1.05
            while rec.remaining():
                flag, fcol = rec.next("bus flag")
                if flag == "SLACK":
                    slack = True
                elif flag == "VMIN":
                    vmin = rec.next_float("VMIN value")
                elif flag == "VMAX":
                    vmax = rec.next_float("VMAX value")
                else:
                    raise rec.error(f"unknown bus flag {flag!r}", fcol)
            if not vmin < vmax:
                raise rec.error(f"bus {bid}: VMIN must be below VMAX")
            buses.append(Bus(id=bid, phases=phases, vmin=vmin, vmax=vmax,
                             is_substation=slack))
        elif kind == "LINE":
            lid = rec.next_str("line id")
            from_bus = rec.next_str("from bus")
            to_bus = rec.next_str("to bus")
            phases = rec.next_phases()
            rec.keyword("Z")
            z = np.array([rec.next_complex(f"z entry {k + 1}") for k in range(9)],
                         dtype=complex).reshape(3, 3)
            s_max = None
            if rec.remaining():
                rec.keyword("SMAX")
                s_max = rec.next_float("SMAX value")
            rec.done()
            raw_lines.append((rec, dict(id=lid, from_bus=from_bus, to_bus=to_bus,
                                        phases=phases, z=z, s_max=s_max)))
        elif kind == "REG":
            rid = rec.next_str("regulator id")
            line_ref = rec.next_str("line id")
            phases = rec.next_phases()
            gang = False
            if rec.remaining():
                rec.keyword("GANG")
                gang = True
            rec.done()
            regs.append((rec, Regulator(id=rid, line=line_ref, phases=phases,
                                        gang_operated=gang)))
        elif kind == "CAP":
            cid = rec.next_str("capacitor id")
            bus = rec.next_str("bus id")
            phases = rec.next_phases()
            kvar = rec.next_float("kvar per phase")
            gang = False
            if rec.remaining():
                rec.keyword("GANG")
                gang = True
            rec.done()
            caps.append((rec, dict(id=cid, bus=bus, phases=phases, kvar=kvar, gang=gang)))
        elif kind == "LOAD":
            lid = rec.next_str("load id")
            bus = rec.next_str("bus id")
            phase_tok, pcol = rec.next("phase")
            if phase_tok not in PHASES:
                raise rec.error(f"bad phase {phase_tok!r}", pcol)
            kw = rec.next_float("kW")
            kvar = rec.next_float("kvar")
            rec.keyword("ZIP")
            coeffs = [rec.next_float(f"ZIP coefficient {k + 1}") for k in range(6)]
            rec.done()
            loads.append((rec, dict(id=lid, bus=bus, phase=phase_tok, kw=kw, kvar=kvar,
                                    kp=tuple(coeffs[:3]), kq=tuple(coeffs[3:]))))
        elif kind == "PV":
            pid = rec.next_str("pv id")
            bus = rec.next_str("bus id")
            phases = rec.next_phases()
            kw_max = rec.next_float("kW max per phase")
            kva = rec.next_float("kVA per phase")
            rec.keyword("PROFILE")
            profile = rec.next_str("profile id")
            rec.done()
            pvs.append((rec, dict(id=pid, bus=bus, phases=phases, kw_max=kw_max,
                                  kva=kva, profile=profile)))
        else:
            raise rec.error(f"unknown record keyword {kind!r}", col)

    if base_mva is None or base_kv is None:
        raise FeederFormatError("missing BASE record")
    z_base = base_kv * base_kv / base_mva  # ohms
    s_base_kw = base_mva * 1000.0

    def to_pu_power(kw: float) -> float:
        return kw / s_base_kw

    lines = []
    for rec, d in raw_lines:
        try:
            lines.append(Line(
                id=d["id"], from_bus=d["from_bus"], to_bus=d["to_bus"],
                phases=d["phases"], z=d["z"] / z_base,
                s_max=d["s_max"] if d["s_max"] is not None else 10.0))
        except Exception as exc:
            raise rec.error(str(exc)) from exc
    cap_objs = []
    for rec, d in caps:
        try:
            cap_objs.append(CapacitorBank(
                id=d["id"], bus=d["bus"], phases=d["phases"],
                q_rated=to_pu_power(d["kvar"]), gang_operated=d["gang"]))
        except Exception as exc:
            raise rec.error(str(exc)) from exc
    load_objs = []
    for rec, d in loads:
        try:
            load_objs.append(ZipLoad(
                id=d["id"], bus=d["bus"], phase=d["phase"],
                p0=to_pu_power(d["kw"]), q0=to_pu_power(d["kvar"]),
                kp=d["kp"], kq=d["kq"]))
        except Exception as exc:
            raise rec.error(str(exc)) from exc
    pv_objs = []
    for rec, d in pvs:
        try:
            pv_objs.append(PvUnit(
                id=d["id"], bus=d["bus"], phases=d["phases"],
                p_max=to_pu_power(d["kw_max"]), s_rated=to_pu_power(d["kva"]),
                profile=d["profile"]))
        except Exception as exc:
            raise rec.error(str(exc)) from exc

    try:
        return FeederModel.build(
            buses=buses, lines=lines, regulators=[r for _, r in regs],
            capacitors=cap_objs, loads=load_objs, pvs=pv_objs,
            base_mva=base_mva, base_kv=base_kv)
    except FeederFormatError:
        raise
    except Exception as exc:
        raise FeederFormatError(str(exc)) from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_complex(z: complex) -> str:
    re_s = repr(float(z.real))
    im = float(z.imag)
    sign = "+" if im >= 0 else "-"
    return f"{re_s}{sign}{repr(abs(im))}j"


def serialize_feeder(model: FeederModel) -> str:
    """Render a model back to the file format (inverse of :func:`parse_feeder`)."""
    z_base = model.base_kv * model.base_kv / model.base_mva
    s_base_kw = model.base_mva * 1000.0
    out = io.StringIO()
    w = out.write
    w(f"BASE {_fmt(model.base_mva)} {_fmt(model.base_kv)}\n")
    for b in model.buses:
        parts = [f"BUS {b.id} {''.join(b.phases)}"]
        if b.is_substation:
            parts.append("SLACK")
        if b.vmin != 0.95:
            parts.append(f"VMIN {_fmt(b.vmin)}")
        if b.vmax != 1.05:
            parts.append(f"VMAX {_fmt(b.vmax)}")
        w(" ".join(parts) + "\n")
    for l in model.lines:
        z_ohm = l.z * z_base
        entries = " ".join(_fmt_complex(z_ohm[i, j]) for i in range(3) for j in range(3))
        w(f"LINE {l.id} {l.from_bus} {l.to_bus} {''.join(l.phases)} Z {entries}"
          f" SMAX {_fmt(l.s_max)}\n")
    for r in model.regulators:
        gang = " GANG" if r.gang_operated else ""
        w(f"REG {r.id} {r.line} {''.join(r.phases)}{gang}\n")
    for c in model.capacitors:
        gang = " GANG" if c.gang_operated else ""
        w(f"CAP {c.id} {c.bus} {''.join(c.phases)} {_fmt(c.q_rated * s_base_kw)}{gang}\n")
    for ld in model.loads:
        zip_s = " ".join(_fmt(k) for k in (*ld.kp, *ld.kq))
        w(f"LOAD {ld.id} {ld.bus} {ld.phase} {_fmt(ld.p0 * s_base_kw)} "
          f"{_fmt(ld.q0 * s_base_kw)} ZIP {zip_s}\n")
    for pv in model.pvs:
        w(f"PV {pv.id} {pv.bus} {''.join(pv.phases)} {_fmt(pv.p_max * s_base_kw)} "
          f"{_fmt(pv.s_rated * s_base_kw)} PROFILE {pv.profile}\n")
    return out.getvalue()


def parse_profiles(text: str) -> dict[str, tuple[tuple[float, float], ...]]:
    """Parse the companion profile CSV into id -> ((minute, multiplier), ...)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FeederFormatError("empty profile CSV") from None
    if [h.strip() for h in header] != ["profile_id", "timestamp_minutes", "multiplier"]:
        raise FeederFormatError(f"bad profile CSV header: {header}", line=1)
    series: dict[str, list[tuple[float, float]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise FeederFormatError(f"expected 3 columns, got {len(row)}", line=row_no)
        pid = row[0].strip()
        try:
            t = float(row[1])
            mult = float(row[2])
        except ValueError:
            raise FeederFormatError(f"bad numeric field in {row!r}", line=row_no) from None
        if mult < 0:
            raise FeederFormatError(f"negative multiplier for {pid}", line=row_no)
        series.setdefault(pid, []).append((t, mult))
    out: dict[str, tuple[tuple[float, float], ...]] = {}
    for pid, pts in series.items():
        pts.sort(key=lambda tm: tm[0])
        times = [t for t, _ in pts]
        if len(set(times)) != len(times):
            raise FeederFormatError(f"duplicate timestamps in profile {pid}")
        out[pid] = tuple(pts)
    return out


def profile_value(points: tuple[tuple[float, float], ...], minute: float) -> float:
    """Piecewise-linear multiplier lookup, clamped flat outside the knots."""
    if not points:
        raise ValueError("empty profile")
    if minute <= points[0][0]:
        return points[0][1]
    if minute >= points[-1][0]:
        return points[-1][1]
    for (t0, m0), (t1, m1) in zip(points, points[1:]):
        if t0 <= minute <= t1:
            if t1 == t0:
                return m1
            frac = (minute - t0) / (t1 - t0)
            return m0 + frac * (m1 - m0)
    return points[-1][1]


def check_profile_refs(model: FeederModel,
                       profiles: dict[str, tuple[tuple[float, float], ...]]) -> None:
    """Every PV profile reference must exist in the companion CSV."""
    for pv in model.pvs:
        if pv.profile not in profiles:
            raise FeederFormatError(
                f"pv {pv.id}: profile {pv.profile!r} not found in profile CSV")
