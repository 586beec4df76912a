"""Batch command-line surface.

Exit codes: 0 success, 1 input error, 2 infeasible or diverged, 3
internal error.  Outputs land in a per-run directory under the output
root (``--out`` flag, else ``CVRSIM_OUTPUT_ROOT``, else ``./cvrsim_out``)
together with a ``manifest.json`` recording input hashes, the seed and
the tool version.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .controls import neutral_setpoints
from .errors import (
    CvrsimError,
    FeederFormatError,
    PfConvergenceError,
    SimulationError,
    ValidationError,
)
from .feeder_io import check_profile_refs, parse_feeder, parse_profiles, profile_value
from .linear_pf import compare_with_oracle, solve_linear_pf
from .milp import write_mps
from .network import FeederModel, model_counts, scale_loads
from .opf import solve_cvr_opf
from .simulate import (
    clear_sky_profile,
    parse_scenario,
    run_two_timescale,
    write_result_csvs,
)
from .sweep_pf import sweep_solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_INTERNAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _output_dir(args, label: str) -> Path:
    if args.out:
        root = Path(args.out)
    else:
        root = Path(os.environ.get("CVRSIM_OUTPUT_ROOT", "cvrsim_out"))
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        root = root / f"{label}-{stamp}"
    root.mkdir(parents=True, exist_ok=True)
    return root


def _write_manifest(outdir: Path, command: str, inputs: dict[str, Path],
                    seed: int | None, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {name: _sha256(p) for name, p in sorted(inputs.items())},
        "seed": seed,
        "outputs": sorted(outputs),
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_feeder(path_str: str) -> tuple[FeederModel, Path]:
    path = Path(path_str)
    if not path.exists():
        raise FeederFormatError(f"feeder file not found: {path}")
    return parse_feeder(path.read_text()), path


def _load_profiles_for(feeder_path: Path, profiles_arg: str | None):
    if profiles_arg:
        p = Path(profiles_arg)
        if not p.exists():
            raise FeederFormatError(f"profile file not found: {p}")
        return parse_profiles(p.read_text()), p
    sibling = feeder_path.with_name(feeder_path.stem + "_profiles.csv")
    if sibling.exists():
        return parse_profiles(sibling.read_text()), sibling
    return {}, None


def cmd_validate(args) -> int:
    model, feeder_path = _load_feeder(args.feeder)
    profiles, _ = _load_profiles_for(feeder_path, args.profiles)
    if model.pvs and (profiles or args.profiles):
        check_profile_refs(model, profiles)
    counts = model_counts(model)
    print(f"feeder OK: {feeder_path}")
    for key, val in counts.items():
        print(f"  {key}: {val}")
    print(f"  base: {model.base_mva} MVA, {model.base_kv} kV")
    print(f"  substation: {model.substation.id}")
    return EXIT_OK


def cmd_powerflow(args) -> int:
    model, feeder_path = _load_feeder(args.feeder)
    model = scale_loads(model, args.load_scale)
    controls = neutral_setpoints(model)
    outdir = _output_dir(args, "powerflow")
    outputs: list[str] = []

    if args.method in ("linear", "compare"):
        sol = solve_linear_pf(model, {}, controls)
        lines = ["bus,phase,v_pu"]
        for (bus, phase) in model.bus_phases:
            v = sol.v[(bus, phase)] ** 0.5
            lines.append(f"{bus},{phase},{v!r}")
        (outdir / "voltages_linear.csv").write_text("\n".join(lines) + "\n")
        outputs.append("voltages_linear.csv")
    if args.method in ("oracle", "compare"):
        state = sweep_solve(model, {}, controls)
        lines = ["bus,phase,v_pu"]
        for (bus, phase) in model.bus_phases:
            lines.append(f"{bus},{phase},{abs(state.V[(bus, phase)])!r}")
        (outdir / "voltages_oracle.csv").write_text("\n".join(lines) + "\n")
        outputs.append("voltages_oracle.csv")
    if args.method == "compare":
        cmp_result = compare_with_oracle(model, {}, controls)
        lines = ["phase,max_dv_pu,max_ds_pct"]
        for phase in ("a", "b", "c"):
            dv = cmp_result.max_dv_by_phase[phase]
            ds = cmp_result.max_ds_pct_by_phase[phase]
            lines.append(f"{phase},{dv!r},{ds!r}")
        (outdir / "compare.csv").write_text("\n".join(lines) + "\n")
        outputs.append("compare.csv")
        print(f"max |dV| = {cmp_result.max_dv:.6f} pu, "
              f"max |dS| = {cmp_result.max_ds_pct:.3f} %")
    else:
        print(f"power flow written to {outdir}")
    _write_manifest(outdir, "powerflow", {"feeder": feeder_path}, None, outputs)
    return EXIT_OK


def cmd_opf(args) -> int:
    model, feeder_path = _load_feeder(args.feeder)
    model = scale_loads(model, args.load_scale)
    profiles, _ = _load_profiles_for(feeder_path, args.profiles)
    forecast = {}
    for pv in model.pvs:
        if pv.profile in profiles:
            forecast[pv.id] = max(profile_value(profiles[pv.profile], args.forecast),
                                  0.0) * pv.p_max
        else:
            arr = clear_sky_profile(pv.p_max, max(1441.0, args.forecast + 1.0),
                                    360.0, 1080.0, 1.0)
            forecast[pv.id] = float(arr[min(int(args.forecast), len(arr) - 1)])

    result = solve_cvr_opf(model, forecast, voltage_margin=args.margin,
                           branch_limits=args.branch_limits,
                           time_limit=args.time_limit)
    if args.dump_mps:
        Path(args.dump_mps).write_text(write_mps(result.problem))
    if result.solution.status != "optimal":
        print(f"optimization {result.solution.status}", file=sys.stderr)
        return EXIT_INFEASIBLE

    sp = result.setpoints
    payload = {
        "objective_pu": result.solution.objective,
        "branch_count": result.solution.branch_count,
        "taps": {f"{r}.{p}": tap for (r, p), tap in sorted(sp.taps.items())},
        "caps": {f"{c}.{p}": bool(on) for (c, p), on in sorted(sp.caps.items())},
        "pv_q": {f"{u}.{p}": q for (u, p), q in sorted(sp.pv_q.items())},
        "forecast": dict(sorted(forecast.items())),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _run_one_scenario(config_path: str, outroot: str) -> str:
    path = Path(config_path)
    config = parse_scenario(path.read_text(), base_dir=path.parent)
    result = run_two_timescale(config)
    outdir = Path(outroot) / config.name
    outputs = write_result_csvs(result, outdir)
    _write_manifest(outdir, "simulate",
                    {"config": path, "feeder": Path(config.feeder)},
                    config.seed, outputs)
    return str(outdir)


def cmd_simulate(args) -> int:
    outroot = _output_dir(args, "simulate")
    if args.jobs > 1 and len(args.config) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one_scenario, c, str(outroot))
                       for c in args.config]
            for fut in futures:
                print(f"scenario written to {fut.result()}")
    else:
        for c in args.config:
            print(f"scenario written to {_run_one_scenario(c, str(outroot))}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="cvrsim",
                     description="volt-var study toolkit for radial feeders")
    parser.add_argument("--out", help="output directory (default: timestamped)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a feeder file and report")
    p.add_argument("feeder")
    p.add_argument("--profiles")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("powerflow", help="run a snapshot power flow")
    p.add_argument("feeder")
    p.add_argument("--method", choices=("linear", "oracle", "compare"),
                   default="compare")
    p.add_argument("--load-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("opf", help="solve one interval's setpoint optimization")
    p.add_argument("feeder")
    p.add_argument("--profiles")
    p.add_argument("--load-scale", type=float, default=1.0)
    p.add_argument("--forecast", type=float, default=720.0,
                   help="minute of day for the PV forecast")
    p.add_argument("--margin", type=float, default=0.0,
                   help="planning margin inside the voltage band, pu")
    p.add_argument("--branch-limits", action="store_true")
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--dump-mps", metavar="PATH")
    p.set_defaults(func=cmd_opf)

    p = sub.add_parser("simulate", help="run scenario config files")
    p.add_argument("config", nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FeederFormatError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, PfConvergenceError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CvrsimError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
