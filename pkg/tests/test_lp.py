"""Tests for the certified LP frontend and its simplex kernel.

The fixed 5-variable / 8-row instance below was solved ahead of time by
exact rational vertex enumeration (all active sets of five constraints,
Fraction arithmetic, feasibility filter); the frozen optimum is
1599/32 = 49.96875.  ``test_frozen_oracle_self_check`` re-runs that
enumeration so the frozen value never drifts from its derivation.
"""

from fractions import Fraction as F
from itertools import combinations

import numpy as np
import pytest

from batsopt import lp
from batsopt.errors import InfeasibleProblem, SolverFailure, UnboundedProblem, ValidationError

scipy_opt = pytest.importorskip("scipy.optimize", reason="scipy used as cross-check oracle")


ORACLE_A = [
    [1, -1, -1, 4, -1],
    [-2, 3, -4, -1, -2],
    [-4, 2, 4, 3, -2],
    [0, 3, -2, -1, 4],
    [-3, 4, 2, -1, 3],
    [-1, -1, 1, 4, 2],
    [2, 1, 3, -1, 2],
    [-1, 1, 1, -1, 4],
]
ORACLE_B = [3, 1, 7, 1, 5, 7, 2, 5]
ORACLE_C = [2, 3, 1, 1, 1]
ORACLE_REL = [">=", "<=", "=", "=", ">=", ">=", ">=", "="]
ORACLE_UPPER = np.array([np.inf, np.inf, np.inf, 3.0, np.inf])
ORACLE_OPTIMUM = F(1599, 32)  # exact; 49.96875
ORACLE_ARGMAX = [F(347, 32), F(83, 16), F(269, 32), F(3), F(21, 16)]


def _oracle_problem():
    return lp.LpProblem(
        ORACLE_C, ORACLE_A, ORACLE_REL, ORACLE_B, sense="max", upper=ORACLE_UPPER
    )


def _enumerate_exact_optimum():
    """Brute-force rational vertex enumeration over active sets of size 5."""
    n, m = 5, 8
    Af = [[F(v) for v in row] for row in ORACLE_A]
    bf = [F(v) for v in ORACLE_B]
    cf = [F(v) for v in ORACLE_C]

    def solve5(rows):
        M = [list(r[0]) + [r[1]] for r in rows]
        for col in range(n):
            piv = next((r for r in range(col, n) if M[r][col] != 0), None)
            if piv is None:
                return None
            M[col], M[piv] = M[piv], M[col]
            pv = M[col][col]
            M[col] = [v / pv for v in M[col]]
            for r in range(n):
                if r != col and M[r][col] != 0:
                    f = M[r][col]
                    M[r] = [a - f * p for a, p in zip(M[r], M[col])]
        return [M[r][n] for r in range(n)]

    cons = [(Af[i], bf[i]) for i in range(m)]
    for j in range(n):
        e = [F(0)] * n
        e[j] = F(1)
        cons.append((e, F(0)))
        if np.isfinite(ORACLE_UPPER[j]):
            cons.append((list(e), F(int(ORACLE_UPPER[j]))))
    eq_idx = [i for i in range(m) if ORACLE_REL[i] == "="]
    best = None
    best_x = None
    for combo in combinations(range(len(cons)), n):
        if any(e not in combo for e in eq_idx):
            continue
        x = solve5([cons[k] for k in combo])
        if x is None:
            continue
        ok = True
        for i in range(m):
            lhs = sum(Af[i][j] * x[j] for j in range(n))
            if ORACLE_REL[i] == "<=" and lhs > bf[i]:
                ok = False
                break
            if ORACLE_REL[i] == ">=" and lhs < bf[i]:
                ok = False
                break
            if ORACLE_REL[i] == "=" and lhs != bf[i]:
                ok = False
                break
        if ok and all(
            x[j] >= 0 and (not np.isfinite(ORACLE_UPPER[j]) or x[j] <= F(int(ORACLE_UPPER[j])))
            for j in range(n)
        ):
            obj = sum(cf[j] * x[j] for j in range(n))
            if best is None or obj > best:
                best, best_x = obj, x
    return best, best_x


def test_frozen_oracle_self_check():
    best, best_x = _enumerate_exact_optimum()
    assert best == ORACLE_OPTIMUM
    assert best_x == ORACLE_ARGMAX


def test_scalar_upper_bound_shadow_price():
    p = lp.LpProblem([1.0], [[1.0]], ["<="], [1.0], sense="max")
    s = lp.solve(p)
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.objective == pytest.approx(1.0, abs=1e-12)
    assert s.x[0] == pytest.approx(1.0, abs=1e-12)
    # relaxing the row by one unit buys exactly one unit of objective
    assert s.duals[0] == pytest.approx(1.0, abs=1e-12)


def test_free_variable_with_lower_row():
    p = lp.LpProblem(
        [1.0], [[1.0]], [">="], [3.0], sense="min", lower=np.array([-np.inf])
    )
    s = lp.solve(p)
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.objective == pytest.approx(3.0, abs=1e-12)
    assert s.duals[0] == pytest.approx(1.0, abs=1e-12)


def test_box_and_equality_sensitivities():
    p = lp.LpProblem(
        [2.0, 3.0], [[1.0, 1.0]], ["="], [1.0], sense="max",
        upper=np.array([0.7, 0.7]),
    )
    s = lp.solve(p)
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.objective == pytest.approx(2.7, abs=1e-12)
    assert s.x == pytest.approx([0.3, 0.7], abs=1e-12)
    assert s.duals[0] == pytest.approx(2.0, abs=1e-12)
    # x1 is capped: one more unit of cap trades x0 for x1 at net +1
    assert s.reduced_costs[1] == pytest.approx(1.0, abs=1e-12)
    assert s.reduced_costs[0] == pytest.approx(0.0, abs=1e-12)


def test_infeasible_and_unbounded_statuses():
    inf = lp.solve(lp.LpProblem([1.0], [[1.0]], ["<="], [-1.0], sense="max"))
    assert inf.status is lp.LpStatus.INFEASIBLE
    with pytest.raises(InfeasibleProblem):
        inf.require_optimal()
    unb = lp.solve(lp.LpProblem([1.0], [[1.0]], [">="], [1.0], sense="max"))
    assert unb.status is lp.LpStatus.UNBOUNDED
    with pytest.raises(UnboundedProblem):
        unb.require_optimal()


def test_frozen_instance_matches_exact_enumeration():
    s = lp.solve(_oracle_problem())
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.objective == pytest.approx(float(ORACLE_OPTIMUM), abs=1e-9)
    assert s.x == pytest.approx([float(v) for v in ORACLE_ARGMAX], abs=1e-8)


def test_frozen_instance_certificate():
    s = lp.solve(_oracle_problem())
    cert = s.certificate
    assert cert["max_row_violation"] <= 1e-9
    assert cert["max_bound_violation"] <= 1e-9
    assert cert["relative_gap"] <= 1e-8
    assert cert["max_complementarity"] <= 1e-7


def test_duals_match_finite_difference():
    base = lp.solve(_oracle_problem()).require_optimal()
    h = 1e-5
    for i in (2, 3, 7):  # equality rows, always binding
        b2 = list(ORACLE_B)
        b2[i] += h
        p2 = lp.LpProblem(
            ORACLE_C, ORACLE_A, ORACLE_REL, b2, sense="max", upper=ORACLE_UPPER
        )
        s2 = lp.solve(p2).require_optimal()
        fd = (s2.objective - base.objective) / h
        assert fd == pytest.approx(base.duals[i], abs=1e-6)


def test_vertex_solution_support_bound():
    s = lp.solve(_oracle_problem()).require_optimal()
    off_bounds = np.sum(
        (s.x > 1e-9) & (s.x < ORACLE_UPPER - 1e-9)
    )
    assert off_bounds <= len(ORACLE_B)


def test_bitwise_determinism():
    a = lp.solve(_oracle_problem()).require_optimal()
    b = lp.solve(_oracle_problem()).require_optimal()
    assert a.x.tobytes() == b.x.tobytes()
    assert a.duals.tobytes() == b.duals.tobytes()
    assert a.objective == b.objective
    assert a.iterations == b.iterations


def test_degenerate_duplicated_rows():
    A = [[1.0, 1.0]] * 6 + [[1.0, -1.0]]
    rel = ["<="] * 6 + ["<="]
    b = [1.0] * 6 + [0.5]
    s = lp.solve(lp.LpProblem([1.0, 1.0], A, rel, b, sense="max"))
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.objective == pytest.approx(1.0, abs=1e-10)


def test_equality_system_only():
    p = lp.LpProblem(
        [3.0, 1.0],
        [[1.0, 1.0], [1.0, -1.0]],
        ["=", "="],
        [1.0, 0.0],
        sense="max",
    )
    s = lp.solve(p)
    assert s.status is lp.LpStatus.OPTIMAL
    assert s.x == pytest.approx([0.5, 0.5], abs=1e-12)
    assert s.objective == pytest.approx(2.0, abs=1e-12)


def test_iteration_limit_status():
    s = lp.solve(_oracle_problem(), lp.Tolerances(max_iterations=1))
    assert s.status is lp.LpStatus.ITERATION_LIMIT
    with pytest.raises(SolverFailure):
        s.require_optimal()


@pytest.mark.parametrize("seed", [7, 11, 23])
def test_random_cross_check_against_scipy(seed):
    rng = np.random.default_rng(seed)
    for _ in range(25):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(2, 7))
        A = rng.normal(size=(m, n)).round(3)
        b = rng.normal(scale=2.0, size=m).round(3)
        c = rng.normal(size=n).round(3)
        rel = [("<=", ">=", "=")[k] for k in rng.integers(0, 3, size=m)]
        ub = np.where(rng.random(n) < 0.5, rng.uniform(0.5, 3.0, n).round(2), np.inf)
        p = lp.LpProblem(c, A, rel, b, sense="max", upper=ub)
        s = lp.solve(p)
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        for i in range(m):
            if rel[i] == "<=":
                A_ub.append(A[i])
                b_ub.append(b[i])
            elif rel[i] == ">=":
                A_ub.append(-A[i])
                b_ub.append(-b[i])
            else:
                A_eq.append(A[i])
                b_eq.append(b[i])
        r = scipy_opt.linprog(
            -c,
            A_ub=np.array(A_ub) if A_ub else None,
            b_ub=np.array(b_ub) if b_ub else None,
            A_eq=np.array(A_eq) if A_eq else None,
            b_eq=np.array(b_eq) if b_eq else None,
            bounds=[(0, u if np.isfinite(u) else None) for u in ub],
            method="highs",
        )
        if r.status == 0:
            assert s.status is lp.LpStatus.OPTIMAL
            assert s.objective == pytest.approx(-r.fun, abs=1e-7 * (1 + abs(r.fun)))
        elif r.status == 2:
            assert s.status is lp.LpStatus.INFEASIBLE
        elif r.status == 3:
            assert s.status is lp.LpStatus.UNBOUNDED


def test_validation_rejects_malformed_input():
    with pytest.raises(ValidationError):
        lp.LpProblem([1.0, 2.0], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValidationError):
        lp.LpProblem([1.0], [[1.0]], ["<"], [1.0])
    with pytest.raises(ValidationError):
        lp.LpProblem([1.0], [[1.0]], ["<="], [1.0], sense="maximize")
    with pytest.raises(ValidationError):
        lp.LpProblem([1.0], [[np.nan]], ["<="], [1.0])
    with pytest.raises(ValidationError):
        lp.LpProblem(
            [1.0], [[1.0]], ["<="], [1.0],
            lower=np.array([2.0]), upper=np.array([1.0]),
        )
    with pytest.raises(ValidationError):
        lp.LpProblem([1.0], [[1.0]], ["<=", "<="], [1.0])


def test_problem_arrays_are_frozen():
    p = _oracle_problem()
    with pytest.raises(ValueError):
        p.A[0, 0] = 99.0
    with pytest.raises(ValueError):
        p.b[0] = 99.0
