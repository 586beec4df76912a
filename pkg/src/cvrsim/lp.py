"""Bounded-variable revised simplex.

Minimizes ``c @ x`` subject to sparse rows ``a_i @ x {<=,=,>=} b_i`` and
finite bounds ``lo <= x <= up`` on every declared variable.  One slack
per row turns the system into equalities; a greedy triangular crash
seeds the starting basis with structural columns, and a composite
phase 1 drives the total bound violation of the basic variables to
zero before the true objective is optimized.  The basis inverse is kept
explicitly and refreshed periodically; pricing is Dantzig with a Bland
fallback once the degenerate-pivot budget (10x the row count) is spent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LpUnboundedError, ValidationError

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

LE, EQ, GE = "<=", "=", ">="

_D_TOL = 1e-9          # reduced-cost optimality tolerance
_PIV_TOL = 1e-10       # smallest usable pivot element
_FEAS_TOL = 1e-8       # bound / row feasibility tolerance
_DEGEN_TOL = 1e-12     # step sizes below this count as degenerate
_REFRESH = 80          # pivots between basis-inverse refactorizations


@dataclass
class LpProblem:
    """Sparse minimization problem with boxed variables."""

    obj: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (coeffs, sense, rhs)

    @property
    def n(self) -> int:
        return len(self.obj)

    @property
    def m(self) -> int:
        return len(self.rows)

    def add_variable(self, lo: float, up: float, obj: float = 0.0) -> int:
        if not (math.isfinite(lo) and math.isfinite(up)):
            raise ValidationError("variable bounds must be finite")
        if lo > up:
            raise ValidationError(f"empty variable range [{lo}, {up}]")
        self.lower.append(float(lo))
        self.upper.append(float(up))
        self.obj.append(float(obj))
        return len(self.obj) - 1

    def add_row(self, coeffs: list[tuple[int, float]], sense: str, rhs: float) -> int:
        if sense not in (LE, EQ, GE):
            raise ValidationError(f"bad row sense {sense!r}")
        cols = [c for c, _ in coeffs]
        if len(set(cols)) != len(cols):
            raise ValidationError("duplicate column in row")
        for c, _ in coeffs:
            if not 0 <= c < self.n:
                raise ValidationError(f"row references unknown variable {c}")
        self.rows.append(([(int(c), float(v)) for c, v in coeffs], sense, float(rhs)))
        return len(self.rows) - 1


@dataclass
class LpSolution:
    status: str               # optimal | infeasible | pivot-limit
    objective: float
    x: np.ndarray
    pivots: int


def _crash_basis(problem: LpProblem, basis: np.ndarray) -> None:
    """Greedy near-triangular crash.

    Row i may take structural column c only if c has no significant entry
    in an already-assigned row, which keeps the chosen basis close to
    triangular under a permutation.  Insignificant entries (small against
    their row's largest coefficient) are ignored when testing conflicts,
    so the result can be mildly non-triangular; the caller guards the
    factorization.  Unassigned rows keep their slack.
    """
    row_max = [max((abs(v) for _c, v in coeffs), default=0.0)
               for coeffs, _s, _r in problem.rows]
    col_rows: dict[int, list[int]] = {}
    for i, (coeffs, _s, _r) in enumerate(problem.rows):
        thresh = 0.1 * row_max[i]
        for c, v in coeffs:
            if abs(v) >= thresh:
                col_rows.setdefault(c, []).append(i)
    used: set[int] = set()
    assigned = np.zeros(problem.m, dtype=bool)
    for i, (coeffs, _s, _r) in enumerate(problem.rows):
        if not coeffs:
            continue
        thresh = 0.1 * row_max[i]
        best_c, best_v = -1, 0.0
        for c, v in sorted(coeffs):
            if c in used or abs(v) < thresh:
                continue
            if any(assigned[r] for r in col_rows.get(c, ()) if r != i):
                continue
            if abs(v) > abs(best_v):
                best_c, best_v = c, v
        if best_c >= 0:
            basis[i] = best_c
            used.add(best_c)
            assigned[i] = True


def solve_lp(problem: LpProblem, max_pivots: int | None = None) -> LpSolution:
    """Solve to proven optimality, or report infeasibility / pivot-limit."""
    n, m = problem.n, problem.m
    if n == 0:
        return LpSolution(status="optimal", objective=0.0, x=np.zeros(0), pivots=0)
    if m == 0:
        x = np.where(np.asarray(problem.obj) >= 0, problem.lower, problem.upper)
        x = np.asarray(x, dtype=float)
        return LpSolution(status="optimal", objective=float(np.dot(problem.obj, x)),
                          x=x, pivots=0)
    if max_pivots is None:
        max_pivots = 200 * (n + m) + 20000

    total = n + m
    A = np.zeros((m, total))
    b = np.empty(m)
    lo = np.empty(total)
    up = np.empty(total)
    lo[:n] = problem.lower
    up[:n] = problem.upper
    for i, (coeffs, sense, rhs) in enumerate(problem.rows):
        for c, v in coeffs:
            A[i, c] = v
        A[i, n + i] = 1.0
        b[i] = rhs
        if sense == LE:
            lo[n + i], up[n + i] = 0.0, np.inf
        elif sense == GE:
            lo[n + i], up[n + i] = -np.inf, 0.0
        else:
            lo[n + i], up[n + i] = 0.0, 0.0
    c_full = np.zeros(total)
    c_full[:n] = problem.obj

    # nonbasic start values: the bound of smaller magnitude; slacks at zero
    def start_point() -> np.ndarray:
        pt = np.where(np.abs(lo) <= np.abs(np.where(np.isfinite(up), up, np.inf)),
                      lo, up)
        pt = np.where(np.isfinite(pt), pt, 0.0)
        pt[n:] = 0.0
        return pt

    x = start_point()
    basis = np.arange(n, total)
    _crash_basis(problem, basis)
    in_basis = np.zeros(total, dtype=bool)
    in_basis[basis] = True

    B_inv = np.empty((m, m))
    try:
        _refresh(A, b, x, basis, in_basis, B_inv)
        if not np.all(np.isfinite(x[basis])) or np.abs(x[basis]).max() > 1e9:
            raise np.linalg.LinAlgError("ill-conditioned crash basis")
    except np.linalg.LinAlgError:
        basis = np.arange(n, total)
        in_basis[:] = False
        in_basis[basis] = True
        x = start_point()
        _refresh(A, b, x, basis, in_basis, B_inv)
    at_upper = ~in_basis & (x == up) & (lo < up)

    status, pivots = _simplex(A, b, c_full, lo, up, x, basis, in_basis, at_upper,
                              B_inv, max_pivots, 0, phase1=True)
    if status == "pivot-limit":
        return LpSolution(status="pivot-limit", objective=math.nan,
                          x=x[:n].copy(), pivots=pivots)
    if _infeasibility(x, lo, up, basis) > 1e-7:
        return LpSolution(status="infeasible", objective=math.nan,
                          x=x[:n].copy(), pivots=pivots)

    status, pivots = _simplex(A, b, c_full, lo, up, x, basis, in_basis, at_upper,
                              B_inv, max_pivots, pivots, phase1=False)
    if status == "pivot-limit":
        return LpSolution(status="pivot-limit", objective=math.nan,
                          x=x[:n].copy(), pivots=pivots)

    _refresh(A, b, x, basis, in_basis, B_inv)
    xs = x[:n].copy()
    return LpSolution(status="optimal", objective=float(np.dot(problem.obj, xs)),
                      x=xs, pivots=pivots)


def _infeasibility(x, lo, up, basis) -> float:
    xb = x[basis]
    return float(np.sum(np.maximum(lo[basis] - xb, 0.0)
                        + np.maximum(xb - up[basis], 0.0)))


def _refresh(A, b, x, basis, in_basis, B_inv):
    """Recompute the basis inverse and basic values from scratch."""
    B_inv[:, :] = np.linalg.inv(A[:, basis])
    x_nb = x.copy()
    x_nb[basis] = 0.0
    x[basis] = B_inv @ (b - A @ x_nb)


def _simplex(A, b, c, lo, up, x, basis, in_basis, at_upper, B_inv,
             max_pivots, pivots, phase1) -> tuple[str, int]:
    """Shared pivot loop: dispatches to the compiled core when available."""
    if _HAVE_NUMBA:
        code, piv = _simplex_core(A, b, c, lo, up, x, basis, in_basis, at_upper,
                                  B_inv, max_pivots, pivots, phase1)
        if code == 2:
            if phase1:
                return "optimal", piv
            raise LpUnboundedError(
                "unbounded improving ray; finite-bound model should prevent this")
        return ("pivot-limit" if code == 1 else "optimal"), piv
    return _simplex_vec(A, b, c, lo, up, x, basis, in_basis, at_upper, B_inv,
                        max_pivots, pivots, phase1)


def _simplex_vec(A, b, c, lo, up, x, basis, in_basis, at_upper, B_inv,
                 max_pivots, pivots, phase1) -> tuple[str, int]:
    """Shared pivot loop (vectorized reference implementation).

    Phase 1 minimizes the total bound violation of the basic variables
    (pricing against the violation gradient); its ratio test lets an
    infeasible basic variable travel to the first bound in its direction
    of motion, so every leaving variable exits feasible.  Phase 2 is the
    ordinary bounded-variable iteration on the true costs.
    """
    m, total = A.shape
    bland_after = 10 * m
    degen_count = 0
    since_refresh = 0

    while True:
        if pivots >= max_pivots:
            return "pivot-limit", pivots

        lo_b = lo[basis]
        up_b = up[basis]
        xb = x[basis]
        if phase1:
            g = np.where(xb > up_b + _FEAS_TOL, 1.0, 0.0) \
                + np.where(xb < lo_b - _FEAS_TOL, -1.0, 0.0)
            if not g.any():
                return "optimal", pivots
            y = B_inv.T @ g
            d = -(y @ A)
        else:
            y = B_inv.T @ c[basis]
            d = c - y @ A

        nonbasic = ~in_basis
        free = lo < up
        lower_mask = nonbasic & free & ~at_upper & (d < -_D_TOL)
        upper_mask = nonbasic & free & at_upper & (d > _D_TOL)
        any_mask = lower_mask | upper_mask
        if not any_mask.any():
            return "optimal", pivots

        if degen_count > bland_after:
            j = int(np.argmax(any_mask))  # first eligible index: Bland
        else:
            viol = np.where(any_mask, np.abs(d), 0.0)
            j = int(np.argmax(viol))

        sigma = 1.0 if lower_mask[j] else -1.0
        w = B_inv @ A[:, j]
        coef = sigma * w  # basic values move at rate -coef per unit step

        # first bound each basic variable meets along its direction of
        # travel: a variable beyond a bound and heading back blocks there;
        # one heading further away never blocks (the gradient prices it)
        moving_down = coef > _PIV_TOL
        moving_up = coef < -_PIV_TOL
        target = np.where(
            moving_down,
            np.where(xb > up_b + _FEAS_TOL, up_b,
                     np.where(xb < lo_b - _FEAS_TOL, -np.inf, lo_b)),
            np.where(xb < lo_b - _FEAS_TOL, lo_b,
                     np.where(xb > up_b + _FEAS_TOL, np.inf, up_b)))
        t_arr = np.full(m, np.inf)
        active = moving_down | moving_up
        with np.errstate(invalid="ignore"):
            t_arr[active] = (xb[active] - target[active]) / coef[active]
        t_arr = np.where(np.isnan(t_arr), np.inf, t_arr)
        t_arr = np.maximum(t_arr, 0.0)
        t_bound = up[j] - lo[j]
        t_min_basic = float(t_arr.min()) if m else np.inf
        t_star = min(t_min_basic, t_bound)

        if not np.isfinite(t_star):
            if phase1:
                return "optimal", pivots  # violation cannot be reduced further
            raise LpUnboundedError(
                "unbounded improving ray; finite-bound model should prevent this")

        if t_star >= t_bound - 1e-15 and t_bound <= t_min_basic:
            # bound flip: entering variable crosses to its other bound
            x[basis] = xb - t_bound * coef
            x[j] = up[j] if sigma > 0 else lo[j]
            at_upper[j] = sigma > 0
            pivots += 1
            if t_bound < _DEGEN_TOL:
                degen_count += 1
            continue

        ties = np.flatnonzero(t_arr <= t_star + 1e-12)
        if degen_count > bland_after:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(coef[ties]))])
        leave = int(basis[r])
        leave_target = float(target[r])

        x[basis] = xb - t_star * coef
        x[j] = x[j] + sigma * t_star
        x[leave] = leave_target
        at_upper[leave] = bool(leave_target == up[leave] and lo[leave] != up[leave])
        in_basis[leave] = False
        basis[r] = j
        in_basis[j] = True

        # product-form update of the explicit inverse
        piv = w[r]
        row_r = B_inv[r] / piv
        B_inv -= np.outer(w, row_r)
        B_inv[r] = row_r

        pivots += 1
        since_refresh += 1
        if t_star < _DEGEN_TOL:
            degen_count += 1
        if since_refresh >= _REFRESH:
            _refresh(A, b, x, basis, in_basis, B_inv)
            since_refresh = 0


def _simplex_core_impl(A, b, c, lo, up, x, basis, in_basis, at_upper, B_inv,
                       max_pivots, pivots, phase1):
    """Loop-style twin of :func:`_simplex_vec` for the JIT compiler.

    Returns (code, pivots): 0 optimal, 1 pivot-limit, 2 no finite step.
    Entering and leaving tie-breaks replicate the vectorized version:
    first-largest violation (Dantzig) or first eligible index (Bland),
    then largest |pivot| among step ties (lowest basis index under Bland).
    """
    m, total = A.shape
    bland_after = 10 * m
    degen_count = 0
    since_refresh = 0
    g = np.empty(m)
    cb = np.empty(m)

    while True:
        if pivots >= max_pivots:
            return 1, pivots

        if phase1:
            any_inf = False
            for r in range(m):
                jb = basis[r]
                v = x[jb]
                if v > up[jb] + _FEAS_TOL:
                    g[r] = 1.0
                    any_inf = True
                elif v < lo[jb] - _FEAS_TOL:
                    g[r] = -1.0
                    any_inf = True
                else:
                    g[r] = 0.0
            if not any_inf:
                return 0, pivots
            y = g @ B_inv
        else:
            for r in range(m):
                cb[r] = c[basis[r]]
            y = cb @ B_inv
        d = y @ A

        bland = degen_count > bland_after
        j = -1
        best = _D_TOL
        for jj in range(total):
            if in_basis[jj] or lo[jj] >= up[jj]:
                continue
            dj = (0.0 if phase1 else c[jj]) - d[jj]
            if at_upper[jj]:
                if dj > _D_TOL:
                    if bland:
                        j = jj
                        break
                    if dj > best:
                        best = dj
                        j = jj
            else:
                if dj < -_D_TOL:
                    if bland:
                        j = jj
                        break
                    if -dj > best:
                        best = -dj
                        j = jj
        if j < 0:
            return 0, pivots

        sigma = 1.0 if not at_upper[j] else -1.0
        w = B_inv @ np.ascontiguousarray(A[:, j])

        t_bound = up[j] - lo[j]
        t_min_basic = np.inf
        t_arr = np.empty(m)
        target = np.empty(m)
        for r in range(m):
            jb = basis[r]
            cf = sigma * w[r]
            xv = x[jb]
            if cf > _PIV_TOL:
                if xv > up[jb] + _FEAS_TOL:
                    tgt = up[jb]
                elif xv < lo[jb] - _FEAS_TOL:
                    tgt = -np.inf
                else:
                    tgt = lo[jb]
            elif cf < -_PIV_TOL:
                if xv < lo[jb] - _FEAS_TOL:
                    tgt = lo[jb]
                elif xv > up[jb] + _FEAS_TOL:
                    tgt = np.inf
                else:
                    tgt = up[jb]
            else:
                t_arr[r] = np.inf
                target[r] = 0.0
                continue
            if np.isfinite(tgt):
                t = (xv - tgt) / cf
                if t < 0.0:
                    t = 0.0
            else:
                t = np.inf
            t_arr[r] = t
            target[r] = tgt
            if t < t_min_basic:
                t_min_basic = t
        t_star = t_bound if t_bound < t_min_basic else t_min_basic

        if not np.isfinite(t_star):
            return 2, pivots

        if t_star >= t_bound - 1e-15 and t_bound <= t_min_basic:
            for r in range(m):
                x[basis[r]] -= t_bound * sigma * w[r]
            x[j] = up[j] if sigma > 0 else lo[j]
            at_upper[j] = sigma > 0
            pivots += 1
            if t_bound < _DEGEN_TOL:
                degen_count += 1
            continue

        r_pick = -1
        if bland:
            best_col = total + m
            for r in range(m):
                if t_arr[r] <= t_star + 1e-12 and basis[r] < best_col:
                    best_col = basis[r]
                    r_pick = r
        else:
            best_piv = -1.0
            for r in range(m):
                if t_arr[r] <= t_star + 1e-12:
                    a = abs(sigma * w[r])
                    if a > best_piv:
                        best_piv = a
                        r_pick = r
        r = r_pick
        leave = basis[r]
        leave_target = target[r]

        for rr in range(m):
            x[basis[rr]] -= t_star * sigma * w[rr]
        x[j] = x[j] + sigma * t_star
        x[leave] = leave_target
        at_upper[leave] = leave_target == up[leave] and lo[leave] != up[leave]
        in_basis[leave] = False
        basis[r] = j
        in_basis[j] = True

        piv = w[r]
        row_r = B_inv[r] / piv
        for i in range(m):
            if i != r:
                B_inv[i] -= w[i] * row_r
        B_inv[r] = row_r

        pivots += 1
        since_refresh += 1
        if t_star < _DEGEN_TOL:
            degen_count += 1
        if since_refresh >= _REFRESH:
            B_inv[:, :] = np.linalg.inv(np.ascontiguousarray(A[:, basis]))
            x_nb = x.copy()
            for r2 in range(m):
                x_nb[basis[r2]] = 0.0
            xb_new = B_inv @ (b - A @ x_nb)
            for r2 in range(m):
                x[basis[r2]] = xb_new[r2]
            since_refresh = 0


if _HAVE_NUMBA:
    _simplex_core = _njit(cache=True)(_simplex_core_impl)


def feasibility_violation(problem: LpProblem, x: np.ndarray) -> float:
    """Largest bound or row violation of a candidate point (for checks)."""
    worst = 0.0
    for j in range(problem.n):
        worst = max(worst, problem.lower[j] - x[j], x[j] - problem.upper[j])
    for coeffs, sense, rhs in problem.rows:
        val = sum(v * x[c] for c, v in coeffs)
        if sense == LE:
            worst = max(worst, val - rhs)
        elif sense == GE:
            worst = max(worst, rhs - val)
        else:
            worst = max(worst, abs(val - rhs))
    return worst
