"""Two-timescale scenario engine.

Every central period the optimizer plans device setpoints against the
clear-sky PV forecast; those setpoints freeze for the period while the
local tick loop realizes variable PV output, runs the configured
per-inverter controller, and resolves the full nonlinear power flow.
Legacy devices either follow the frozen central plan or act
autonomously on local voltage bands.  Runs are deterministic given the
config (including the seed): identical configs produce byte-identical
artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controls import ControlSetpoints, neutral_setpoints, pv_injections
from .errors import FeederFormatError, PfConvergenceError, SimulationError, ValidationError
from .feeder_io import check_profile_refs, parse_feeder, parse_profiles, profile_value
from .local_control import (
    InverterCapability,
    LocalMeasurement,
    flow_matrix,
    impedance_step,
    measurement_step,
    resolve_thevenin,
)
from .network import TAP_MAX, TAP_MIN, TAP_NEUTRAL, FeederModel, scale_loads
from .opf import solve_cvr_opf
from .sweep_pf import ComplexState, sweep_solve

CONTROLLER_MODES = ("none", "impedance", "measurement")
LEGACY_MODES = ("centralized", "autonomous")

# autonomous device behavior: standard bandwidth/threshold practice values
REG_BANDWIDTH_PU = 0.0167
CAP_ON_BELOW_PU = 0.98
CAP_OFF_ABOVE_PU = 1.02
DEVICE_DELAY_TICKS = 2


@dataclass
class ScenarioConfig:
    feeder: str
    profiles: str | None = None
    name: str = "scenario"
    horizon_min: int = 1440
    central_period_min: int = 15
    local_period_min: int = 1
    variability_pct: float = 0.0
    seed: int = 0
    controller: str = "none"
    legacy_mode: str = "centralized"
    load_scale: float = 1.0
    voltage_margin: float = 0.005
    forecast_scale: float | None = None
    realized_scale: float | None = None
    sunrise_min: float = 360.0
    sunset_min: float = 1080.0
    milp_time_limit: float = 60.0

    def __post_init__(self):
        if self.central_period_min % self.local_period_min != 0:
            raise ValidationError("local period must divide the central period")
        if not 0.0 <= self.variability_pct <= 100.0:
            raise ValidationError("variability percent must lie in [0, 100]")
        if self.controller not in CONTROLLER_MODES:
            raise ValidationError(f"unknown controller mode {self.controller!r}")
        if self.legacy_mode not in LEGACY_MODES:
            raise ValidationError(f"unknown legacy mode {self.legacy_mode!r}")
        if self.horizon_min < self.local_period_min:
            raise ValidationError("horizon shorter than one local tick")


_SCENARIO_FIELDS = {
    "feeder": str, "profiles": str, "name": str,
    "horizon_min": int, "central_period_min": int, "local_period_min": int,
    "variability_pct": float, "seed": int, "controller": str, "legacy_mode": str,
    "load_scale": float, "voltage_margin": float,
    "forecast_scale": float, "realized_scale": float,
    "sunrise_min": float, "sunset_min": float, "milp_time_limit": float,
}


def parse_scenario(text: str, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Flat key=value scenario file; paths resolve against ``base_dir``."""
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise FeederFormatError(f"expected key = value, got {body!r}", line=line_no)
        key, _, val = body.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCENARIO_FIELDS:
            raise FeederFormatError(f"unknown scenario key {key!r}", line=line_no)
        if val == "":
            continue
        typ = _SCENARIO_FIELDS[key]
        try:
            values[key] = typ(val)
        except ValueError:
            raise FeederFormatError(
                f"bad value {val!r} for {key}", line=line_no) from None
    if "feeder" not in values:
        raise FeederFormatError("scenario file missing feeder key")
    if base_dir is not None:
        base = Path(base_dir)
        values["feeder"] = str((base / values["feeder"]).resolve())
        if "profiles" in values:
            values["profiles"] = str((base / values["profiles"]).resolve())
    try:
        return ScenarioConfig(**values)
    except ValidationError:
        raise
    except TypeError as exc:
        raise FeederFormatError(str(exc)) from exc


def clear_sky_profile(p_max: float, horizon_min: float, sunrise_min: float,
                      sunset_min: float, step_min: float = 1.0) -> np.ndarray:
    """Half-sine-squared daylight curve sampled at tick starts."""
    if not sunrise_min < sunset_min:
        raise ValidationError("sunrise must precede sunset")
    t = np.arange(0.0, horizon_min, step_min)
    frac = (t - sunrise_min) / (sunset_min - sunrise_min)
    out = p_max * np.sin(np.pi * np.clip(frac, 0.0, 1.0)) ** 2
    out[(t < sunrise_min) | (t > sunset_min)] = 0.0
    return out


def apply_variability(series: np.ndarray, variability_pct: float, seed,
                      p_max: float) -> np.ndarray:
    """Multiply each sample by (1 + eps), eps zero-mean normal with sigma a
    third of the variability bound, truncated to the bound, clamped to
    [0, p_max].  Deterministic under a fixed seed."""
    series = np.asarray(series, dtype=float)
    if variability_pct == 0.0:
        return series.copy()
    bound = variability_pct / 100.0
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, bound / 3.0, size=series.shape)
    eps = np.clip(eps, -bound, bound)
    return np.clip(series * (1.0 + eps), 0.0, p_max)


@dataclass
class LegacyState:
    taps: dict[tuple[str, str], int] = field(default_factory=dict)
    caps: dict[tuple[str, str], bool] = field(default_factory=dict)
    reg_counters: dict[str, int] = field(default_factory=dict)
    cap_counters: dict[str, int] = field(default_factory=dict)


def initial_legacy_state(model: FeederModel) -> LegacyState:
    st = LegacyState()
    for reg in model.regulators:
        for p in reg.phases:
            st.taps[(reg.id, p)] = TAP_NEUTRAL
        st.reg_counters[reg.id] = 0
    for cap in model.capacitors:
        for p in cap.phases:
            st.caps[(cap.id, p)] = False
        cap_groups = [cap.id] if cap.gang_operated or len(cap.phases) == 1 else [
            f"{cap.id}:{p}" for p in cap.phases]
        for g in cap_groups:
            st.cap_counters[g] = 0
    return st


def autonomous_legacy_step(model: FeederModel, state: LegacyState,
                           voltages: dict[tuple[str, str], float],
                           ) -> list[tuple[str, int | bool, int | bool]]:
    """Band-based device rules with a two-tick persistence delay.

    Mutates ``state`` in place and returns (device, old, new) actions.
    """
    actions: list[tuple[str, int | bool, int | bool]] = []
    for reg in model.regulators:
        line = model.line_by_id[reg.line]
        child = model.bus_by_id[line.to_bus]
        phases = [p for p in reg.phases if p in child.phases]
        mean_v = sum(voltages[(child.id, p)] for p in phases) / len(phases)
        if mean_v < 1.0 - REG_BANDWIDTH_PU:
            direction = 1
        elif mean_v > 1.0 + REG_BANDWIDTH_PU:
            direction = -1
        else:
            state.reg_counters[reg.id] = 0
            continue
        state.reg_counters[reg.id] += 1
        if state.reg_counters[reg.id] < DEVICE_DELAY_TICKS:
            continue
        state.reg_counters[reg.id] = 0
        old = state.taps[(reg.id, phases[0])]
        new = min(max(old + direction, TAP_MIN), TAP_MAX)
        if new != old:
            for p in reg.phases:
                state.taps[(reg.id, p)] = new
            actions.append((reg.id, old, new))
    for cap in model.capacitors:
        groups = [(cap.id, tuple(cap.phases))] \
            if cap.gang_operated or len(cap.phases) == 1 \
            else [(f"{cap.id}:{p}", (p,)) for p in cap.phases]
        for gid, phases in groups:
            mean_v = sum(voltages[(cap.bus, p)] for p in phases) / len(phases)
            cur = state.caps[(cap.id, phases[0])]
            if mean_v < CAP_ON_BELOW_PU and not cur:
                want = True
            elif mean_v > CAP_OFF_ABOVE_PU and cur:
                want = False
            else:
                state.cap_counters[gid] = 0
                continue
            state.cap_counters[gid] += 1
            if state.cap_counters[gid] < DEVICE_DELAY_TICKS:
                continue
            state.cap_counters[gid] = 0
            for p in phases:
                state.caps[(cap.id, p)] = want
            actions.append((gid, cur, want))
    return actions


def savfi(series) -> float:
    """Mean absolute tick-to-tick change of a voltage series, in pu."""
    arr = np.asarray(series, dtype=float)
    if arr.size < 2:
        raise ValidationError("series too short for a fluctuation index")
    return float(np.mean(np.abs(np.diff(arr))))


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    bus_phases: tuple[tuple[str, str], ...]
    tick_minutes: np.ndarray
    voltages: np.ndarray                  # (T, n_bus_phases), magnitudes pu
    v_ref: np.ndarray                     # (T, n_bus_phases)
    substation_p: np.ndarray              # (T,), pu
    events: list[tuple[int, str, object, object]]
    setpoints_log: list[dict]
    savfi_pu: dict[tuple[str, str], float]
    savfi_bus_pu: dict[str, float]
    violations_per_tick: np.ndarray
    violating_nodes: tuple[str, ...]
    switching_counts: dict[str, int]
    substation_energy_kwh: float
    milp_solves: int
    pv_buses: tuple[str, ...]

    def voltage_series(self, bus: str, phase: str) -> np.ndarray:
        return self.voltages[:, self.bus_phases.index((bus, phase))]


def count_violations(model: FeederModel, bus_phases, voltages: np.ndarray,
                     limits: tuple[float, float] | None = None,
                     ) -> tuple[np.ndarray, tuple[str, ...]]:
    """Per-tick violating node-phase counts plus the unique violating buses."""
    lo = np.empty(len(bus_phases))
    hi = np.empty(len(bus_phases))
    for i, (bus, _phase) in enumerate(bus_phases):
        b = model.bus_by_id[bus]
        lo[i] = limits[0] if limits else b.vmin
        hi[i] = limits[1] if limits else b.vmax
    bad = (voltages < lo[None, :] - 1e-9) | (voltages > hi[None, :] + 1e-9)
    per_tick = bad.sum(axis=1).astype(int)
    nodes = sorted({bus_phases[i][0] for i in np.flatnonzero(bad.any(axis=0))})
    return per_tick, tuple(nodes)


def _load_scenario_inputs(config: ScenarioConfig,
                          model: FeederModel | None,
                          profiles: dict | None):
    if model is None:
        model = parse_feeder(Path(config.feeder).read_text())
    if profiles is None:
        if config.profiles is not None:
            profiles = parse_profiles(Path(config.profiles).read_text())
        else:
            profiles = {}
    if profiles:
        check_profile_refs(model, profiles)
    return scale_loads(model, config.load_scale), profiles


def _pv_clear_sky(config: ScenarioConfig, model: FeederModel, profiles: dict,
                  ticks: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    for pv in model.pvs:
        if pv.profile in profiles:
            mult = np.array([profile_value(profiles[pv.profile], t) for t in ticks])
            out[pv.id] = np.clip(mult, 0.0, None) * pv.p_max
        else:
            out[pv.id] = clear_sky_profile(pv.p_max, config.horizon_min,
                                           config.sunrise_min, config.sunset_min,
                                           config.local_period_min)
    return out


def _forecast_at(config: ScenarioConfig, model: FeederModel, profiles: dict,
                 minute: float) -> dict[str, float]:
    out = {}
    for pv in model.pvs:
        if config.forecast_scale is not None:
            out[pv.id] = config.forecast_scale * pv.p_max
        elif pv.profile in profiles:
            out[pv.id] = max(profile_value(profiles[pv.profile], minute), 0.0) * pv.p_max
        else:
            arr = clear_sky_profile(pv.p_max, max(config.horizon_min, minute + 1),
                                    config.sunrise_min, config.sunset_min, 1.0)
            idx = min(int(minute), len(arr) - 1)
            out[pv.id] = float(arr[idx])
    return out


def build_setpoint_schedule(config: ScenarioConfig,
                            model: FeederModel | None = None,
                            profiles: dict | None = None) -> list[dict]:
    """Solve the centralized problem for every interval of the horizon.

    The schedule depends only on the forecast, so comparison runs that
    differ in variability or controller mode can share one schedule.
    """
    model, profiles = _load_scenario_inputs(config, model, profiles)
    n_intervals = math.ceil(config.horizon_min / config.central_period_min)
    schedule = []
    prev_sp: ControlSetpoints | None = None
    for k in range(n_intervals):
        midpoint = (k + 0.5) * config.central_period_min
        forecast = _forecast_at(config, model, profiles, midpoint)
        result = solve_cvr_opf(model, forecast, prev=prev_sp,
                               voltage_margin=config.voltage_margin,
                               time_limit=config.milp_time_limit)
        if result.solution.status != "optimal":
            raise SimulationError(
                f"interval {k}: optimizer returned {result.solution.status}")
        prev_sp = result.setpoints
        schedule.append({"interval": k, "forecast": forecast,
                         "setpoints": result.setpoints,
                         "objective": result.solution.objective})
    return schedule


def run_two_timescale(config: ScenarioConfig,
                      model: FeederModel | None = None,
                      profiles: dict | None = None,
                      schedule: list[dict] | None = None) -> ScenarioResult:
    """Run one scenario tick by tick and collect the full log."""
    model, profiles = _load_scenario_inputs(config, model, profiles)
    if config.legacy_mode == "centralized" and schedule is None:
        schedule = build_setpoint_schedule(config, model, profiles)

    step = config.local_period_min
    ticks = np.arange(0.0, config.horizon_min, float(step))
    n_ticks = len(ticks)
    ticks_per_interval = config.central_period_min // step
    n_intervals = math.ceil(config.horizon_min / config.central_period_min)

    bus_phases = model.bus_phases
    bp_index = {bp: i for i, bp in enumerate(bus_phases)}
    pvs = model.pvs
    pv_buses = tuple(sorted({pv.bus for pv in pvs}))

    clear_sky = _pv_clear_sky(config, model, profiles, ticks)
    realized: dict[str, np.ndarray] = {}
    for i, pv in enumerate(pvs):
        if config.realized_scale is not None:
            realized[pv.id] = np.full(n_ticks, config.realized_scale * pv.p_max)
        else:
            realized[pv.id] = apply_variability(
                clear_sky[pv.id], config.variability_pct,
                np.random.SeedSequence([config.seed, i]), pv.p_max)

    # controller geometry, fixed for the whole run
    thevenin = {pv.id: resolve_thevenin(model, pv.bus) for pv in pvs}
    parent_a: dict[str, np.ndarray | None] = {}
    child_a: dict[str, dict[str, np.ndarray]] = {}
    for pv in pvs:
        parent = model.parent_line_of[pv.bus]
        if parent is None or parent.id in model.regulator_by_line:
            parent_a[pv.id] = None
        else:
            parent_a[pv.id] = flow_matrix(parent)
        kids = {}
        for child_line, _child in model.children_of[pv.bus]:
            if child_line.id in model.regulator_by_line:
                kids[child_line.id] = np.zeros((3, 3))
            else:
                kids[child_line.id] = flow_matrix(child_line)
        child_a[pv.id] = kids

    legacy = initial_legacy_state(model)
    applied = neutral_setpoints(model)
    events: list[tuple[int, str, object, object]] = []
    switching: dict[str, int] = {}
    setpoints_log: list[dict] = []

    voltages = np.zeros((n_ticks, len(bus_phases)))
    refs = np.zeros((n_ticks, len(bus_phases)))
    substation_p = np.zeros(n_ticks)
    milp_solves = 0

    def record_switch(tick: int, device: str, old, new) -> None:
        events.append((tick, device, old, new))
        ops = abs(int(new) - int(old)) if isinstance(old, int) else 1
        switching[device] = switching.get(device, 0) + ops

    prev_state: ComplexState | None = None

    for k in range(n_intervals):
        tick0 = k * ticks_per_interval
        if tick0 >= n_ticks:
            break
        if config.legacy_mode == "centralized":
            entry = schedule[k]
            forecast = entry["forecast"]
            sp: ControlSetpoints = entry["setpoints"]
            milp_solves += 1
            for reg in model.regulators:
                groups = [(reg.id, reg.phases)] if reg.gang_operated or len(reg.phases) == 1 \
                    else [(f"{reg.id}:{p}", (p,)) for p in reg.phases]
                for gid, phases in groups:
                    old = applied.taps[(reg.id, phases[0])]
                    new = sp.tap_for(reg.id, phases[0])
                    if new != old:
                        record_switch(tick0, gid, old, new)
                    for p in phases:
                        applied.taps[(reg.id, p)] = new
            for cap in model.capacitors:
                groups = [(cap.id, tuple(cap.phases))] \
                    if cap.gang_operated or len(cap.phases) == 1 \
                    else [(f"{cap.id}:{p}", (p,)) for p in cap.phases]
                for gid, phases in groups:
                    old = applied.caps[(cap.id, phases[0])]
                    new = sp.cap_on(cap.id, phases[0])
                    if new != old:
                        record_switch(tick0, gid, old, new)
                    for p in phases:
                        applied.caps[(cap.id, p)] = new
            q_ref = {(pv.id, p): sp.q_for(pv.id, p) for pv in pvs for p in pv.phases}
            v_ref_map = dict(sp.v_ref)
        else:
            forecast = _forecast_at(config, model, profiles,
                                    (k + 0.5) * config.central_period_min)
            applied.taps = dict(legacy.taps)
            applied.caps = dict(legacy.caps)
            q_ref = {(pv.id, p): 0.0 for pv in pvs for p in pv.phases}
            v_ref_map = {}

        # interval-start operating point at the forecast: reference flows
        # for the measurement controller, and references in autonomous mode
        try:
            ref_state = sweep_solve(
                model, pv_injections(model, forecast, q_ref), applied)
        except PfConvergenceError as exc:
            raise SimulationError(f"interval {k}: reference solve failed: {exc}")
        if not v_ref_map:
            v_ref_map = {bp: abs(ref_state.V[bp]) for bp in bus_phases}
        flow_ref = dict(ref_state.S)

        setpoints_log.append({
            "interval": k,
            "taps": dict(applied.taps),
            "caps": dict(applied.caps),
            "pv_q": dict(q_ref),
            "v_ref": dict(v_ref_map),
            "forecast": dict(forecast),
        })

        t_end = min(tick0 + ticks_per_interval, n_ticks)
        for t in range(tick0, t_end):
            meas_state = prev_state if (prev_state is not None and t != tick0) \
                else ref_state

            q_cmd: dict[tuple[str, str], float] = {}
            for pv in pvs:
                p_now = float(realized[pv.id][t])
                dp = p_now - forecast[pv.id]
                caps = {p: InverterCapability(s_rated=pv.s_rated, p_now=p_now)
                        for p in pv.phases}
                q_prev = {p: q_ref[(pv.id, p)] for p in pv.phases}
                dp_map = {p: dp for p in pv.phases}
                mode = config.controller
                if mode == "impedance" and thevenin[pv.id] is None:
                    mode = "none"
                if mode == "measurement" and parent_a[pv.id] is None:
                    mode = "none"
                if mode == "none":
                    out = {p: caps[p].clamp(q_prev[p]) for p in pv.phases}
                elif mode == "impedance":
                    out = impedance_step(thevenin[pv.id], dp_map, q_prev, caps)
                else:
                    deltas: dict[str, dict[str, tuple[float, float]]] = {}
                    for child_line, _child in model.children_of[pv.bus]:
                        per_phase = {}
                        for p in child_line.phases:
                            s_now = meas_state.S[(child_line.id, p)]
                            s_ref = flow_ref[(child_line.id, p)]
                            per_phase[p] = (-(s_now.real - s_ref.real),
                                            -(s_now.imag - s_ref.imag))
                        deltas[child_line.id] = per_phase
                    meas = LocalMeasurement(dp_local=dp_map, child_flow_deltas=deltas)
                    out = measurement_step(parent_a[pv.id], child_a[pv.id], meas,
                                           q_prev, caps)
                for p in pv.phases:
                    q_cmd[(pv.id, p)] = out[p]

            if config.legacy_mode == "autonomous":
                volt_now = ({bp: abs(meas_state.V[bp]) for bp in bus_phases})
                actions = autonomous_legacy_step(model, legacy, volt_now)
                for device, old, new in actions:
                    record_switch(t, device, old, new)
                applied.taps = dict(legacy.taps)
                applied.caps = dict(legacy.caps)

            p_now_map = {pv.id: float(realized[pv.id][t]) for pv in pvs}
            inj = pv_injections(model, p_now_map, q_cmd)
            try:
                state = sweep_solve(model, inj, applied)
            except PfConvergenceError as exc:
                raise SimulationError(f"tick {t}: power flow failed: {exc}")

            for i, bp in enumerate(bus_phases):
                voltages[t, i] = abs(state.V[bp])
                refs[t, i] = v_ref_map.get(bp, 0.0)
            p_total = 0.0
            for line, _child in model.children_of[model.substation.id]:
                for p in line.phases:
                    p_total += state.S[(line.id, p)].real
            substation_p[t] = p_total
            prev_state = state

    savfi_pu = {bp: savfi(voltages[:, i]) for i, bp in enumerate(bus_phases)} \
        if n_ticks >= 2 else {}
    savfi_bus: dict[str, float] = {}
    for bus in model.buses:
        vals = [savfi_pu[(bus.id, p)] for p in bus.phases if (bus.id, p) in savfi_pu]
        if vals:
            savfi_bus[bus.id] = float(np.mean(vals))

    per_tick, violating = count_violations(model, bus_phases, voltages)
    energy_kwh = float(np.sum(substation_p) * (step / 60.0) * model.base_mva * 1000.0)

    return ScenarioResult(
        config=config, bus_phases=bus_phases, tick_minutes=ticks,
        voltages=voltages, v_ref=refs, substation_p=substation_p,
        events=events, setpoints_log=setpoints_log,
        savfi_pu=savfi_pu, savfi_bus_pu=savfi_bus,
        violations_per_tick=per_tick, violating_nodes=violating,
        switching_counts=dict(sorted(switching.items())),
        substation_energy_kwh=energy_kwh, milp_solves=milp_solves,
        pv_buses=pv_buses)


# ---------------------------------------------------------------------------
# CSV artifacts; column orders are fixed and documented in the README.

def _f(x: float) -> str:
    return repr(float(x))


def write_result_csvs(result: ScenarioResult, outdir: str | Path) -> list[str]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    lines = ["tick,bus,phase,v_pu"]
    for t in range(len(result.tick_minutes)):
        for i, (bus, phase) in enumerate(result.bus_phases):
            lines.append(f"{t},{bus},{phase},{_f(result.voltages[t, i])}")
    (outdir / "voltages.csv").write_text("\n".join(lines) + "\n")
    written.append("voltages.csv")

    lines = ["interval,kind,device,phase,value"]
    for entry in result.setpoints_log:
        k = entry["interval"]
        for (reg, phase), tap in sorted(entry["taps"].items()):
            lines.append(f"{k},tap,{reg},{phase},{tap}")
        for (cap, phase), on in sorted(entry["caps"].items()):
            lines.append(f"{k},cap,{cap},{phase},{int(on)}")
        for (pv, phase), q in sorted(entry["pv_q"].items()):
            lines.append(f"{k},pv_q,{pv},{phase},{_f(q)}")
        for (bus, phase), v in sorted(entry["v_ref"].items()):
            lines.append(f"{k},v_ref,{bus},{phase},{_f(v)}")
    (outdir / "setpoints.csv").write_text("\n".join(lines) + "\n")
    written.append("setpoints.csv")

    lines = ["tick,device,old,new"]
    for tick, device, old, new in result.events:
        lines.append(f"{tick},{device},{old},{new}")
    (outdir / "events.csv").write_text("\n".join(lines) + "\n")
    written.append("events.csv")

    lines = ["metric,scope,value"]
    for bus, val in sorted(result.savfi_bus_pu.items()):
        lines.append(f"savfi_e3,{bus},{_f(val * 1e3)}")
    pv_vals = [result.savfi_bus_pu[b] for b in result.pv_buses
               if b in result.savfi_bus_pu]
    if pv_vals:
        lines.append(f"savfi_pv_median_e3,all,{_f(float(np.median(pv_vals)) * 1e3)}")
    lines.append(f"violation_node_phase_ticks,all,{int(result.violations_per_tick.sum())}")
    lines.append(f"violating_node_count,all,{len(result.violating_nodes)}")
    for device, count in sorted(result.switching_counts.items()):
        lines.append(f"switching_ops,{device},{count}")
    lines.append(f"switching_ops_total,all,{sum(result.switching_counts.values())}")
    lines.append(f"substation_energy_kwh,all,{_f(result.substation_energy_kwh)}")
    lines.append(f"milp_solves,all,{result.milp_solves}")
    (outdir / "metrics.csv").write_text("\n".join(lines) + "\n")
    written.append("metrics.csv")
    return written
