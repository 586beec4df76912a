"""Two-timescale volt-var control toolkit for unbalanced radial feeders."""

import os as _os

# the dense-algebra kernels here are far below the size where threaded
# BLAS pays off; spinning pools only add contention
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

try:
    import threadpoolctl as _threadpoolctl

    _threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - best effort when numpy pre-imported
    pass

__version__ = "0.1.0"

from .controls import ControlSetpoints, neutral_setpoints, pv_injections
from .feeder_io import parse_feeder, parse_profiles, serialize_feeder
from .linear_pf import (
    CvrLoadModel,
    LinearPfSolution,
    compare_with_oracle,
    cvr_from_zip,
    cvr_load_eval,
    line_coefficients,
    solve_linear_pf,
)
from .local_control import (
    InverterCapability,
    LocalMeasurement,
    flow_matrix,
    impedance_step,
    measurement_step,
)
from .lp import LpProblem, LpSolution, solve_lp
from .milp import MilpProblem, MilpSolution, branch_and_bound, enumerate_oracle, write_mps
from .network import (
    FeederModel,
    positive_sequence_impedance,
    scale_loads,
    tap_ratio,
    thevenin_impedance,
)
from .opf import add_branch_capacity, build_cvr_milp, extract_setpoints, solve_cvr_opf
from .simulate import (
    ScenarioConfig,
    ScenarioResult,
    apply_variability,
    clear_sky_profile,
    count_violations,
    parse_scenario,
    run_two_timescale,
    savfi,
)
from .sweep_pf import ComplexState, kirchhoff_residual, sweep_solve, zip_current

__all__ = [
    "ControlSetpoints", "CvrLoadModel", "ComplexState", "FeederModel",
    "InverterCapability", "LinearPfSolution", "LocalMeasurement", "LpProblem",
    "LpSolution", "MilpProblem", "MilpSolution", "ScenarioConfig", "ScenarioResult",
    "add_branch_capacity", "apply_variability", "branch_and_bound",
    "build_cvr_milp", "clear_sky_profile", "compare_with_oracle",
    "count_violations", "cvr_from_zip", "cvr_load_eval", "enumerate_oracle",
    "extract_setpoints", "flow_matrix", "impedance_step", "kirchhoff_residual",
    "line_coefficients", "measurement_step", "neutral_setpoints", "parse_feeder",
    "parse_profiles", "parse_scenario", "positive_sequence_impedance",
    "pv_injections", "run_two_timescale", "savfi", "scale_loads",
    "serialize_feeder", "solve_cvr_opf", "solve_linear_pf", "solve_lp",
    "sweep_solve", "tap_ratio", "thevenin_impedance", "write_mps",
]
