"""Dense linear programming with certified vertex solutions.

Thin, deterministic frontend over the revised simplex kernel in
``_simplex``.  Problems are stated in user form

    max/min  c @ x
    s.t.     A[i] @ x  (<= | = | >=)  b[i]     for each row i
             lower <= x <= upper                (entries may be +-inf)

and solved to a basic (vertex) solution.  Every answer is certified
against the stated tolerances before being reported optimal: primal
residuals, bound violations, dual feasibility of the reduced costs,
complementary slackness, and the primal-dual objective gap.  A failed
certificate triggers a bounded number of warm re-solves at tightened
pricing tolerance; if it still fails, the solution is reported as a
numerical failure rather than papered over.

Sign conventions on the results:

* ``duals[i]`` is the sensitivity of the optimal objective (in the user's
  sense) to b[i]: for a binding <= row of a max problem it is >= 0.
* ``reduced_costs[j]`` is the sensitivity to forcing x[j] off its bound,
  again in the user's sense: <= 0 at a lower bound of a max problem.

Solutions are basic, so at most m entries of x are away from their
bounds.  Re-solving an identical problem object reproduces the identical
answer bit for bit; there is no randomization anywhere in the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _simplex as _sx
from ._accel import USING_NUMBA
from .errors import InfeasibleProblem, SolverFailure, UnboundedProblem, ValidationError

_REL_CODE = {"<=": -1, "=": 0, "==": 0, ">=": 1}

LESS_EQUAL = -1
EQUAL = 0
GREATER_EQUAL = 1


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Tolerances:
    """Numerical contract for one solve.

    feasibility   : scaled primal residual and bound violation ceiling
    optimality    : pricing threshold on reduced costs inside the kernel
    pivot         : smallest ratio-test denominator considered nonzero
    complementarity: ceiling on |dual * slack| products in the certificate
    gap           : relative primal-dual objective gap ceiling
    """

    feasibility: float = 1e-9
    optimality: float = 1e-9
    pivot: float = 1e-10
    complementarity: float = 1e-7
    gap: float = 1e-8
    max_iterations: int = 100_000
    refactor_every: int = 150
    retries: int = 2


def _parse_relations(relations, m):
    rel = np.empty(m, dtype=np.int8)
    if len(relations) != m:
        raise ValidationError(
            f"got {len(relations)} relations for {m} constraint rows"
        )
    for i, r in enumerate(relations):
        if isinstance(r, str):
            if r not in _REL_CODE:
                raise ValidationError(f"unknown relation {r!r} in row {i}")
            rel[i] = _REL_CODE[r]
        elif r in (-1, 0, 1):
            rel[i] = int(r)
        else:
            raise ValidationError(f"unknown relation {r!r} in row {i}")
    return rel


class LpProblem:
    """Immutable dense LP statement.

    ``relations`` entries are "<=", "=", ">=" (or the codes -1, 0, +1).
    Default bounds are [0, +inf); pass ``lower``/``upper`` arrays to
    override, with -inf/+inf marking unbounded sides.
    """

    __slots__ = ("c", "A", "rel", "b", "lower", "upper", "sense", "n", "m")

    def __init__(self, c, A, relations, b, sense="max", lower=None, upper=None):
        if sense not in ("max", "min"):
            raise ValidationError(f"sense must be 'max' or 'min', got {sense!r}")
        c = np.ascontiguousarray(c, dtype=np.float64)
        A = np.asarray(A, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if c.ndim != 1 or A.ndim != 2 or b.ndim != 1:
            raise ValidationError("c and b must be vectors, A a matrix")
        m, n = A.shape
        if m == 0 or n == 0:
            raise ValidationError("empty problems are not supported")
        if c.shape[0] != n or b.shape[0] != m:
            raise ValidationError(
                f"shape mismatch: A is {m}x{n}, c has {c.shape[0]}, b has {b.shape[0]}"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValidationError("A, b, c must all be finite")
        lo = np.zeros(n) if lower is None else np.ascontiguousarray(lower, dtype=np.float64)
        hi = np.full(n, np.inf) if upper is None else np.ascontiguousarray(upper, dtype=np.float64)
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValidationError("bound arrays must have one entry per variable")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValidationError("bounds may be infinite but not NaN")
        if np.any(lo > hi):
            j = int(np.argmax(lo > hi))
            raise ValidationError(f"variable {j} has lower bound above upper bound")
        self.c = c
        self.A = A
        self.rel = _parse_relations(relations, m)
        self.b = b
        self.lower = lo
        self.upper = hi
        self.sense = sense
        self.n = n
        self.m = m
        for arr in (self.c, self.A, self.b, self.lower, self.upper, self.rel):
            arr.setflags(write=False)


@dataclass
class LpSolution:
    status: LpStatus
    objective: Optional[float]
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray]
    reduced_costs: Optional[np.ndarray]
    iterations: int
    certificate: dict = field(default_factory=dict)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def require_optimal(self, what: str = "linear program") -> "LpSolution":
        """Return self, or raise the failure type matching the status."""
        if self.status is LpStatus.OPTIMAL:
            return self
        if self.status is LpStatus.INFEASIBLE:
            raise InfeasibleProblem(f"{what}: no feasible point")
        if self.status is LpStatus.UNBOUNDED:
            raise UnboundedProblem(f"{what}: objective unbounded")
        raise SolverFailure(f"{what}: {self.status.value} ({self.message})")


def _standardize(p: LpProblem):
    """Internal minimization form with slack and artificial columns.

    Returns (A_int F-ordered, b, c_int, lb, ub, basis, vstat, x0, n_real,
    slack_col) where slack_col[i] is the slack column of row i (-1 for
    equality rows) and columns >= n_real are artificials.
    """
    m, n = p.m, p.n
    ineq = np.nonzero(p.rel != EQUAL)[0]
    n_slack = ineq.shape[0]
    slack_col = np.full(m, -1, dtype=np.int64)
    slack_sign = np.zeros(m)
    for k, i in enumerate(ineq):
        slack_col[i] = n + k
        slack_sign[i] = 1.0 if p.rel[i] == LESS_EQUAL else -1.0

    lb = np.concatenate([p.lower, np.zeros(n_slack)])
    ub = np.concatenate([p.upper, np.full(n_slack, np.inf)])
    x0 = np.where(
        p.lower > -np.inf, p.lower, np.where(p.upper < np.inf, p.upper, 0.0)
    )
    vstat_struct = np.where(
        p.lower > -np.inf,
        _sx.AT_LB,
        np.where(p.upper < np.inf, _sx.AT_UB, _sx.FREE_NB),
    ).astype(np.int64)

    r = p.b - p.A @ x0
    basis = np.empty(m, dtype=np.int64)
    art_rows = []
    art_signs = []
    slack_val = np.zeros(n_slack)
    vstat_slack = np.full(n_slack, _sx.AT_LB, dtype=np.int64)
    for i in range(m):
        if slack_col[i] >= 0:
            sv = slack_sign[i] * r[i]
            if sv >= 0.0:
                k = slack_col[i] - n
                slack_val[k] = sv
                vstat_slack[k] = _sx.BASIC
                basis[i] = slack_col[i]
                continue
        art_rows.append(i)
        art_signs.append(1.0 if r[i] >= 0.0 else -1.0)

    n_real = n + n_slack
    n_art = len(art_rows)
    N = n_real + n_art
    A_int = np.zeros((m, N), order="F")
    A_int[:, :n] = p.A
    for k, i in enumerate(ineq):
        A_int[i, n + k] = slack_sign[i]
    art_val = np.zeros(n_art)
    for k, i in enumerate(art_rows):
        A_int[i, n_real + k] = art_signs[k]
        art_val[k] = abs(r[i])
        basis[i] = n_real + k

    lb = np.concatenate([lb, np.zeros(n_art)])
    ub = np.concatenate([ub, np.full(n_art, np.inf)])
    x = np.concatenate([x0, slack_val, art_val])
    vstat = np.concatenate([vstat_struct, vstat_slack, np.full(n_art, _sx.BASIC, dtype=np.int64)])

    c_int = np.zeros(N)
    c_int[:n] = p.c if p.sense == "min" else -p.c
    return A_int, p.b.copy(), c_int, lb, ub, basis, vstat, x, n_real, slack_col


def _certify(p: LpProblem, A_int, c_int, lb, ub, x, y, vstat, n_real, slack_col, tol: Tolerances):
    """Check a claimed-optimal internal solution; returns (ok, report)."""
    n = p.n
    xs = x[:n]
    row_act = p.A @ xs
    res = row_act - p.b
    scale = 1.0 + np.abs(p.b) + np.abs(p.A) @ np.abs(xs)
    viol = np.where(
        p.rel == LESS_EQUAL, np.maximum(res, 0.0),
        np.where(p.rel == GREATER_EQUAL, np.maximum(-res, 0.0), np.abs(res)),
    )
    max_row = float(np.max(viol / scale))

    bviol = np.maximum(
        np.maximum(p.lower - xs, xs - p.upper) / (1.0 + np.abs(xs)), 0.0
    )
    max_bound = float(np.max(bviol))

    d = c_int - y @ A_int
    eps_d = tol.complementarity * (1.0 + float(np.max(np.abs(c_int))))
    dviol = np.zeros_like(d)
    at_lb = vstat == _sx.AT_LB
    at_ub = vstat == _sx.AT_UB
    free_nb = vstat == _sx.FREE_NB
    basic = vstat == _sx.BASIC
    dviol[at_lb] = np.maximum(-d[at_lb], 0.0)
    dviol[at_ub] = np.maximum(d[at_ub], 0.0)
    dviol[free_nb] = np.abs(d[free_nb])
    dviol[basic] = np.abs(d[basic])
    fixed = ub - lb <= 0.0
    dviol[fixed] = 0.0
    max_dual = float(np.max(dviol))

    pobj = float(c_int[:n] @ xs)
    # nonbasic variables sit exactly on their bounds, so d @ x collects the
    # bound terms of the dual objective; basic d are ~0 and free nonbasic x
    # are 0.  Fixed variables pay d * x with whatever sign their price takes.
    nb_mask = ~basic
    dobj = float(p.b @ y + d[nb_mask] @ x[nb_mask])
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))

    slack_user = np.where(p.rel == LESS_EQUAL, -res, res)
    cs = np.abs(y * slack_user)
    cs[p.rel == EQUAL] = 0.0
    max_cs = float(np.max(cs)) / (1.0 + abs(pobj))

    report = {
        "max_row_violation": max_row,
        "max_bound_violation": max_bound,
        "max_dual_violation": max_dual,
        "relative_gap": float(gap),
        "max_complementarity": max_cs,
    }
    ok = (
        max_row <= tol.feasibility
        and max_bound <= tol.feasibility
        and max_dual <= eps_d
        and gap <= tol.gap
        and max_cs <= tol.complementarity
    )
    return ok, report


def solve(problem: LpProblem, tolerances: Optional[Tolerances] = None) -> LpSolution:
    """Solve to a certified vertex optimum (or a definite failure status)."""
    tol = tolerances or Tolerances()
    A_int, b, c_int, lb, ub, basis, vstat, x, n_real, slack_col = _standardize(problem)
    sign = 1.0 if problem.sense == "min" else -1.0

    iters_total = 0
    report: dict = {}
    opt_tol = tol.optimality
    for attempt in range(tol.retries + 1):
        try:
            status, iters, y = _sx.simplex_solve(
                A_int, b, c_int, lb, ub, basis, vstat, x, n_real,
                opt_tol, tol.pivot, tol.feasibility,
                tol.max_iterations - iters_total, tol.refactor_every,
            )
        except Exception as exc:  # basis factorization breakdown
            return LpSolution(
                LpStatus.NUMERICAL_FAILURE, None, None, None, None,
                iters_total, message=f"factorization failed: {exc}",
            )
        iters_total += iters
        if status == _sx.INFEASIBLE:
            return LpSolution(LpStatus.INFEASIBLE, None, None, None, None, iters_total)
        if status == _sx.UNBOUNDED:
            return LpSolution(LpStatus.UNBOUNDED, None, None, None, None, iters_total)
        if status == _sx.MAXITER:
            return LpSolution(
                LpStatus.ITERATION_LIMIT, None, None, None, None, iters_total,
                message=f"no optimum within {tol.max_iterations} pivots",
            )
        ok, report = _certify(
            problem, A_int, c_int, lb, ub, x, y, vstat, n_real, slack_col, tol
        )
        if ok:
            xs = x[:problem.n].copy()
            d_int = c_int - y @ A_int
            return LpSolution(
                LpStatus.OPTIMAL,
                float(problem.c @ xs),
                xs,
                sign * y,
                sign * d_int[:problem.n],
                iters_total,
                certificate=report,
            )
        opt_tol = opt_tol / 10.0  # retry warm with stricter pricing
    return LpSolution(
        LpStatus.NUMERICAL_FAILURE, None, None, None, None, iters_total,
        certificate=report,
        message="certificate failed after retries: " + repr(report),
    )


def backend() -> str:
    """Name of the active kernel backend (for reports and benchmarks)."""
    return "numba" if USING_NUMBA else "numpy"
