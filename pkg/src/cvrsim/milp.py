"""Mixed-integer layer over the LP core.

Best-first branch and bound on the LP relaxation bound, branching on the
most-fractional binary (ties to the lowest variable index), with
incumbent pruning at an absolute gap of 1e-6.  An exhaustive-enumeration
oracle provides the ground truth for every instance small enough to
enumerate, counting each selector group at its cardinality.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CombinationLimitError, ValidationError
from .lp import LpProblem, solve_lp

INT_TOL = 1e-6
DEFAULT_GAP = 1e-6


@dataclass
class MilpProblem:
    lp: LpProblem
    binaries: tuple[int, ...]
    names: dict[str, int] = field(default_factory=dict)
    # selector groups: index sets bound by an exactly-one equality row
    sos1_groups: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        for j in self.binaries:
            if not (self.lp.lower[j] == 0.0 and self.lp.upper[j] == 1.0):
                if not (0.0 <= self.lp.lower[j] <= self.lp.upper[j] <= 1.0):
                    raise ValidationError(f"binary {j} must have bounds within [0, 1]")
        if len(self.names) != len(set(self.names.values())):
            raise ValidationError("variable name map is not a bijection")

    def index_of(self, name: str) -> int:
        return self.names[name]


@dataclass
class MilpSolution:
    status: str               # optimal | infeasible | iteration-limit
    objective: float
    x: np.ndarray
    branch_count: int
    elapsed: float
    names: dict[str, int] = field(default_factory=dict)

    def value(self, name: str) -> float:
        return float(self.x[self.names[name]])


def _with_bounds(lp: LpProblem, fixed: dict[int, float]) -> LpProblem:
    sub = LpProblem(obj=list(lp.obj), lower=list(lp.lower), upper=list(lp.upper),
                    rows=lp.rows)
    for j, v in fixed.items():
        sub.lower[j] = v
        sub.upper[j] = v
    return sub


def _fractional(x: np.ndarray, binaries) -> int | None:
    """Most-fractional binary index, ties broken by lowest variable index."""
    best = None
    best_frac = INT_TOL
    for j in binaries:
        frac = min(abs(x[j] - round(x[j])), 0.5)
        if frac > best_frac + 1e-15:
            best = j
            best_frac = frac
    return best


def _round_binaries(problem: MilpProblem, x: np.ndarray) -> dict[int, float] | None:
    fixed: dict[int, float] = {}
    for group in problem.sos1_groups:
        pick = max(group, key=lambda j: (x[j], -j))
        for j in group:
            fixed[j] = 1.0 if j == pick else 0.0
    for j in problem.binaries:
        if j not in fixed:
            fixed[j] = float(round(min(max(x[j], 0.0), 1.0)))
    return fixed or None


def branch_and_bound(problem: MilpProblem, time_limit: float = 60.0,
                     gap: float = DEFAULT_GAP) -> MilpSolution:
    """Solve to proven optimality within ``gap``, or return the incumbent
    flagged ``iteration-limit`` when the time budget runs out."""
    start = time.monotonic()
    root = solve_lp(_with_bounds(problem.lp, {}))
    branch_count = 0
    if root.status == "infeasible":
        return MilpSolution(status="infeasible", objective=math.nan,
                            x=root.x, branch_count=0,
                            elapsed=time.monotonic() - start, names=dict(problem.names))

    incumbent: np.ndarray | None = None
    incumbent_obj = math.inf

    # seed the incumbent by rounding the root relaxation: argmax selector
    # per exactly-one group, nearest bound for loose binaries
    rounded = _round_binaries(problem, root.x)
    if rounded is not None:
        seed = solve_lp(_with_bounds(problem.lp, rounded))
        if seed.status == "optimal" and _fractional(seed.x, problem.binaries) is None:
            incumbent = seed.x
            incumbent_obj = seed.objective

    counter = itertools.count()
    heap: list[tuple[float, int, dict[int, float]]] = []
    heapq.heappush(heap, (root.objective, next(counter), {}))
    timed_out = False

    while heap:
        bound, _, fixed = heapq.heappop(heap)
        if bound >= incumbent_obj - gap:
            continue
        if time.monotonic() - start > time_limit:
            timed_out = True
            break
        sol = solve_lp(_with_bounds(problem.lp, fixed))
        branch_count += 1
        if sol.status != "optimal":
            continue
        if sol.objective >= incumbent_obj - gap:
            continue
        j = _fractional(sol.x, problem.binaries)
        if j is None:
            incumbent = sol.x
            incumbent_obj = sol.objective
            continue
        for v in (0.0, 1.0):
            child = dict(fixed)
            child[j] = v
            heapq.heappush(heap, (sol.objective, next(counter), child))

    status = "iteration-limit" if timed_out else "optimal"
    if incumbent is None:
        if timed_out:
            return MilpSolution(status="iteration-limit", objective=math.nan,
                                x=root.x, branch_count=branch_count,
                                elapsed=time.monotonic() - start,
                                names=dict(problem.names))
        return MilpSolution(status="infeasible", objective=math.nan, x=root.x,
                            branch_count=branch_count,
                            elapsed=time.monotonic() - start, names=dict(problem.names))
    return MilpSolution(status=status, objective=incumbent_obj, x=incumbent,
                        branch_count=branch_count, elapsed=time.monotonic() - start,
                        names=dict(problem.names))


def _combination_space(problem: MilpProblem):
    """(grouped selector index tuples, loose binaries) for enumeration."""
    grouped = [tuple(g) for g in problem.sos1_groups]
    in_group = {j for g in grouped for j in g}
    loose = [j for j in problem.binaries if j not in in_group]
    return grouped, loose


def enumerate_oracle(problem: MilpProblem, limit: int = 2 ** 20) -> MilpSolution:
    """Exact optimum by exhaustively solving one LP per discrete combination."""
    start = time.monotonic()
    grouped, loose = _combination_space(problem)
    count = 1
    for g in grouped:
        count *= len(g)
    count *= 2 ** len(loose)
    if count > limit:
        raise CombinationLimitError(f"{count} combinations exceed the guard {limit}")

    best_obj = math.inf
    best_x: np.ndarray | None = None
    solved = 0
    group_choices = [range(len(g)) for g in grouped]
    for picks in itertools.product(*group_choices):
        fixed_groups: dict[int, float] = {}
        for g, pick in zip(grouped, picks):
            for k, j in enumerate(g):
                fixed_groups[j] = 1.0 if k == pick else 0.0
        for bits in itertools.product((0.0, 1.0), repeat=len(loose)):
            fixed = dict(fixed_groups)
            fixed.update(zip(loose, bits))
            sol = solve_lp(_with_bounds(problem.lp, fixed))
            solved += 1
            if sol.status == "optimal" and sol.objective < best_obj:
                best_obj = sol.objective
                best_x = sol.x
    if best_x is None:
        return MilpSolution(status="infeasible", objective=math.nan,
                            x=np.zeros(problem.lp.n), branch_count=solved,
                            elapsed=time.monotonic() - start, names=dict(problem.names))
    return MilpSolution(status="optimal", objective=best_obj, x=best_x,
                        branch_count=solved, elapsed=time.monotonic() - start,
                        names=dict(problem.names))


def write_mps(problem: MilpProblem, title: str = "CVRMILP") -> str:
    """Fixed-layout MPS rendering; column order equals variable index order.

    Generated short names (``C1..``, ``R1..``) keep the fixed-field width
    legal; the original symbol of each column is echoed in a comment block.
    """
    lp = problem.lp
    binaries = set(problem.binaries)
    by_index = {v: k for k, v in problem.names.items()}

    def f(v: float) -> str:
        return f"{v:.10g}"

    out: list[str] = []
    out.append(f"NAME          {title}")
    for j in range(lp.n):
        label = by_index.get(j, "")
        if label:
            out.append(f"* C{j + 1} = {label}")
    out.append("ROWS")
    out.append(" N  COST")
    sense_code = {"<=": "L", "=": "E", ">=": "G"}
    for i, (_c, sense, _r) in enumerate(lp.rows):
        out.append(f" {sense_code[sense]}  R{i + 1}")
    out.append("COLUMNS")
    col_rows: list[list[tuple[str, float]]] = [[] for _ in range(lp.n)]
    for i, (coeffs, _sense, _rhs) in enumerate(lp.rows):
        for c, v in coeffs:
            col_rows[c].append((f"R{i + 1}", v))
    marker = 0
    in_int = False
    for j in range(lp.n):
        entries: list[tuple[str, float]] = []
        if lp.obj[j] != 0.0:
            entries.append(("COST", lp.obj[j]))
        entries.extend(col_rows[j])
        is_bin = j in binaries
        if is_bin and not in_int:
            marker += 1
            out.append(f"    MARKER{marker:04d}  'MARKER'                 'INTORG'")
            in_int = True
        if not is_bin and in_int:
            marker += 1
            out.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
            in_int = False
        name = f"C{j + 1}"
        for a, b in zip(entries[::2], [*entries[1::2], None]):
            if b is None:
                out.append(f"    {name:<10}{a[0]:<10}{f(a[1]):>12}")
            else:
                out.append(f"    {name:<10}{a[0]:<10}{f(a[1]):>12}   "
                           f"{b[0]:<10}{f(b[1]):>12}")
        if not entries:
            out.append(f"    {name:<10}{'COST':<10}{f(0.0):>12}")
    if in_int:
        marker += 1
        out.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
    out.append("RHS")
    for i, (_c, _s, rhs) in enumerate(lp.rows):
        if rhs != 0.0:
            out.append(f"    RHS       R{i + 1:<9}{f(rhs):>12}")
    out.append("BOUNDS")
    for j in range(lp.n):
        name = f"C{j + 1}"
        out.append(f" LO BND       {name:<10}{f(lp.lower[j]):>12}")
        out.append(f" UP BND       {name:<10}{f(lp.upper[j]):>12}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"
