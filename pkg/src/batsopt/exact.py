"""Cardinality-constrained rate maximization.

Finding the best degree distribution with at most ``budget`` nonzero
masses is a mixed-binary program.  It is solved the classical way:
bisection on the rate over a feasibility oracle

    T(rate) = max over admissible supports z of f(z, rate),

where f(z, rate) is the best worst-case decoding margin any distribution
confined to the support z can guarantee at that rate.  f is concave in z
and the multipliers of its restricted LP reconstruct a supergradient, so
T is computed by outer approximation: evaluate f at a support, record the
first-order cut, maximize the piecewise-linear overestimate over supports
with an exact branch-and-bound, and repeat until the overestimate meets
the best evaluation.

Admissible supports are binary vectors with 1 <= popcount <= budget.  The
empty support carries no distribution (its margin is minus infinity) and
is excluded from the master problem explicitly.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import lp
from .degopt import (
    DegreeDistribution,
    DegreeOptResult,
    Grid,
    ProblemConfig,
    assemble_rate_lp,
    evaluate_rate,
    margin_matrix,
    optimize_degree,
)
from .errors import SolverFailure, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_THETA_TOL = 1e-6
DEFAULT_GAP_TOL = 1e-8
DEFAULT_ROUND_CAP = 200
DEFAULT_BISECT_ROUNDS = 40  # per feasibility test inside the bisection

_ENUM_CUTOFF = 14        # exhaustive master at or below this many degrees
_INT_TOL = 1e-9
_PRUNE_SLACK = 1e-12
_NODE_CAP = 500_000


@dataclass(frozen=True, eq=False)
class Cut:
    """First-order overestimate of the margin, anchored at one support."""

    anchor: np.ndarray       # binary support vector
    value: float             # margin at the anchor
    gradient: np.ndarray     # nonnegative supergradient

    def offset(self) -> float:
        return self.value - float(self.gradient @ self.anchor)


@dataclass
class SubproblemDual:
    """Multipliers of the restricted margin LP.

    ``grid_weights`` are nonnegative and sum to one; ``mass_price`` is the
    shadow price of the unit-mass row; ``degree_gain`` is nonnegative,
    zero on admitted degrees, and bounds how fast the margin can grow when
    an excluded degree is admitted (the supergradient fed into cuts).
    """

    grid_weights: np.ndarray
    degree_gain: np.ndarray
    mass_price: float
    cut_value: float  # constant for cuts; the multipliers' own objective


@dataclass
class OAResult:
    """One outer-approximation run at a fixed rate."""

    value: float             # best margin found (lower bound on T)
    upper: float             # last master bound (upper bound on T)
    z: np.ndarray            # support achieving ``value``
    rounds: int              # master problems solved
    status: str              # converged / feasible_early / infeasible_early / round_cap
    upper_trace: List[float]


@dataclass
class ExactResult:
    """Outcome of the bisection over the feasibility oracle."""

    theta_star: float
    distribution: DegreeDistribution
    z_star: np.ndarray
    bisection_steps: int
    oa_rounds: List[int]
    theta_bracket: Tuple[float, float]
    wall_time: float

    @property
    def support_size(self) -> int:
        return self.distribution.support_size


def _as_support_vector(z, max_degree: int) -> np.ndarray:
    out = np.asarray(z, dtype=np.float64)
    if out.shape != (max_degree,):
        raise ValidationError(
            f"support vector must have shape ({max_degree},), got {out.shape}"
        )
    near0 = np.abs(out) <= 1e-9
    near1 = np.abs(out - 1.0) <= 1e-9
    if not np.all(near0 | near1):
        raise ValidationError("support vector entries must be 0 or 1")
    return np.where(near1, 1.0, 0.0)


def subproblem(decode_probs: np.ndarray, grid: Grid, z, theta: float,
               tolerances: Optional[lp.Tolerances] = None,
               ) -> Tuple[float, Optional[SubproblemDual]]:
    """Best guaranteed margin of a distribution confined to support ``z``.

    Returns the optimal margin and multipliers.  Cuts built from
    ``degree_gain`` overestimate the margin at every other support: the
    multipliers stay dual-feasible when z changes, so their objective
    bounds the margin from above everywhere (concavity in z).  The empty
    support has margin -inf and no multipliers.
    """
    z = np.asarray(z, dtype=np.float64)
    D = z.shape[0]
    z = _as_support_vector(z, D)
    support = [int(i) + 1 for i in np.nonzero(z > 0.5)[0]]
    if not support:
        return -math.inf, None
    Phi_S = margin_matrix(decode_probs, grid, D, support=support)
    G, k = Phi_S.shape
    A = np.zeros((G + 1, k + 1))
    A[:G, :k] = Phi_S
    A[:G, k] = -1.0
    A[G, :k] = 1.0
    b = np.zeros(G + 1)
    b[:G] = -theta * np.log1p(-grid.points)
    b[G] = 1.0
    c = np.zeros(k + 1)
    c[k] = 1.0
    lower = np.zeros(k + 1)
    lower[k] = -np.inf
    prob = lp.LpProblem(c, A, [">="] * G + ["="], b, sense="max", lower=lower)
    sol = lp.solve(prob, tolerances).require_optimal("support margin LP")
    f_val = float(sol.objective)
    alpha = np.maximum(-sol.duals[:G], 0.0)
    total = float(alpha.sum())
    if total > 0.0:
        alpha /= total
    mu = float(sol.duals[G])
    if k == D:
        return f_val, SubproblemDual(alpha, np.zeros(D), mu, f_val)
    Phi = margin_matrix(decode_probs, grid, D)
    tight = _tighten_dual(Phi, grid, support, theta, f_val, tolerances)
    if tight is not None:
        return f_val, tight
    gain = np.maximum(Phi.T @ alpha - mu, 0.0)
    gain[np.asarray(support) - 1] = 0.0  # exact equality at the anchor
    return f_val, SubproblemDual(alpha, gain, mu, f_val)


def _tighten_dual(Phi: np.ndarray, grid: Grid, support: Sequence[int],
                  theta: float, f_val: float,
                  tolerances: Optional[lp.Tolerances]) -> Optional[SubproblemDual]:
    """Re-pick margin-LP multipliers to minimize the largest excluded gain.

    Any multipliers that are feasible for the restricted dual bound the
    margin of EVERY support by their objective plus the largest admitted
    gain, so the vertex the simplex happens to return is rarely the best
    cut generator: its worst gain can sit orders of magnitude above the
    face minimum.  This searches the near-optimal dual face (objective
    within a hair of the true margin) for the flattest gain profile.
    Returns None when the search LP fails, letting callers fall back.
    """
    G, D = Phi.shape
    in_S = np.zeros(D, dtype=bool)
    in_S[np.asarray(support) - 1] = True
    log_terms = theta * np.log1p(-grid.points)
    # variables: alpha (G), mu, g
    n = G + 2
    rows = []
    rhs = []
    rel = []
    row = np.zeros(n)
    row[:G] = 1.0
    rows.append(row)
    rhs.append(1.0)
    rel.append("=")
    for d in range(D):
        row = np.zeros(n)
        row[:G] = Phi[:, d]
        row[G] = -1.0
        if not in_S[d]:
            row[G + 1] = -1.0
        rows.append(row)
        rhs.append(0.0)
        rel.append("<=")
    row = np.zeros(n)
    row[:G] = log_terms
    row[G] = 1.0
    rows.append(row)
    rhs.append(f_val + 1e-9 + 1e-9 * abs(f_val))
    rel.append("<=")
    c = np.zeros(n)
    c[G + 1] = 1.0
    lower = np.zeros(n)
    lower[G] = -np.inf
    prob = lp.LpProblem(c, np.array(rows), rel, np.array(rhs), sense="min",
                        lower=lower)
    sol = lp.solve(prob, tolerances)
    if not sol.optimal:
        return None
    alpha = np.maximum(sol.x[:G], 0.0)
    total = float(alpha.sum())
    if total <= 0.0:
        return None
    alpha /= total
    mu = float(sol.x[G])
    value = mu + float(log_terms @ alpha)
    gain = np.maximum(Phi.T @ alpha - mu, 0.0)
    gain[in_S] = 0.0
    return SubproblemDual(alpha, gain, mu, value)


def _is_lex_smaller(a: np.ndarray, b: np.ndarray) -> bool:
    diff = a - b
    idx = np.nonzero(diff)[0]
    return idx.size > 0 and diff[idx[0]] < 0.0


def _cut_arrays(cuts: Sequence[Cut]) -> Tuple[np.ndarray, np.ndarray]:
    offsets = np.array([cut.offset() for cut in cuts])
    grads = np.vstack([cut.gradient for cut in cuts])
    return offsets, grads


def _enumerate_core(offsets: np.ndarray, grads: np.ndarray, budget: int,
                    ) -> Tuple[np.ndarray, float]:
    """Exhaustive master: every nonzero support within the budget."""
    D = grads.shape[1]
    masks = np.arange(1, 1 << D, dtype=np.int64)
    Z = ((masks[:, None] >> np.arange(D)) & 1).astype(np.float64)
    Z = Z[Z.sum(axis=1) <= budget]
    vals = np.min(offsets[:, None] + grads @ Z.T, axis=0)
    best = float(vals.max())
    ties = np.nonzero(vals >= best - 1e-12 * (1.0 + abs(best)))[0]
    winner = min(ties, key=lambda i: tuple(Z[i]))
    return Z[winner].copy(), best


def _branch_bound_core(offsets: np.ndarray, grads: np.ndarray, budget: int,
                       tolerances: Optional[lp.Tolerances],
                       ) -> Tuple[np.ndarray, float]:
    """Best-first branch-and-bound on the box relaxation.

    Branches on the most fractional coordinate.  Every node also rounds
    its relaxation to a feasible support, so the incumbent is strong from
    the start and the bound-ordered queue can stop as soon as the best
    open bound falls to the incumbent.  Among value ties encountered, the
    lexicographically smaller support wins.  Deterministic throughout.
    """
    t, D = grads.shape
    A = np.zeros((t + 2, D + 1))
    A[:t, :D] = -grads
    A[:t, D] = 1.0
    A[t, :D] = 1.0
    A[t + 1, :D] = 1.0
    b = np.concatenate([offsets, [float(budget), 1.0]])
    rel = ["<="] * (t + 1) + [">="]
    c = np.zeros(D + 1)
    c[D] = 1.0
    lower0 = np.zeros(D + 1)
    lower0[D] = -np.inf
    upper0 = np.ones(D + 1)
    upper0[D] = np.inf

    best_val = -np.inf
    best_z: Optional[np.ndarray] = None

    def consider(zint: np.ndarray) -> None:
        nonlocal best_val, best_z
        val = float(np.min(offsets + grads @ zint))
        if best_z is None or val > best_val + _PRUNE_SLACK:
            best_val, best_z = val, zint.copy()
        elif (abs(val - best_val) <= 1e-9 * (1.0 + abs(val))
              and _is_lex_smaller(zint, best_z)):
            best_z = zint.copy()

    def rounded(zfrac: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                ) -> np.ndarray:
        z = np.zeros(D)
        ones = lower[:D] > 0.5
        z[ones] = 1.0
        room = budget - int(ones.sum())
        free = np.nonzero(~ones & (upper[:D] > 0.5) & (zfrac > 1e-9))[0]
        if room > 0 and free.size:
            take = free[np.argsort(-zfrac[free], kind="stable")][:room]
            z[take] = 1.0
        if z.sum() < 0.5:  # the admissible set excludes the empty support
            z[int(np.nonzero(upper[:D] > 0.5)[0][0])] = 1.0
        return z

    heap = [(-np.inf, 0, lower0, upper0)]
    seq = 1
    nodes = 0
    while heap:
        neg_bound, _, lower, upper = heapq.heappop(heap)
        if best_z is not None and -neg_bound <= best_val + _PRUNE_SLACK:
            break  # bound-ordered queue: nothing left can beat the incumbent
        nodes += 1
        if nodes > _NODE_CAP:
            raise SolverFailure("support master exceeded its node cap")
        prob = lp.LpProblem(c, A, rel, b, sense="max", lower=lower, upper=upper)
        sol = lp.solve(prob, tolerances)
        if sol.status == lp.LpStatus.INFEASIBLE:
            continue
        if not sol.optimal:
            raise SolverFailure(f"support master relaxation: {sol.status.value}")
        bound = float(sol.objective)
        if best_z is not None and bound <= best_val + _PRUNE_SLACK:
            continue
        zfrac = sol.x[:D]
        consider(rounded(zfrac, lower, upper))
        dist = np.abs(zfrac - np.round(zfrac))
        j = int(np.argmax(dist))
        if dist[j] <= _INT_TOL:
            consider(np.clip(np.round(zfrac), 0.0, 1.0))
            continue
        up_zero = upper.copy()
        up_zero[j] = 0.0
        lo_one = lower.copy()
        lo_one[j] = 1.0
        heap_push = heapq.heappush
        heap_push(heap, (-bound, seq, lower, up_zero))     # zero side first
        heap_push(heap, (-bound, seq + 1, lo_one, upper))  # among equal bounds
        seq += 2
    if best_z is None:
        raise SolverFailure("support master found no admissible support")
    return best_z, best_val


def _master_enumerate(cuts: Sequence[Cut], max_degree: int, budget: int,
                      ) -> Tuple[np.ndarray, float]:
    offsets, grads = _cut_arrays(cuts)
    return _enumerate_core(offsets, grads, min(budget, max_degree))


def _master_branch_bound(cuts: Sequence[Cut], max_degree: int, budget: int,
                         tolerances: Optional[lp.Tolerances],
                         ) -> Tuple[np.ndarray, float]:
    offsets, grads = _cut_arrays(cuts)
    return _branch_bound_core(offsets, grads, min(budget, max_degree),
                              tolerances)


def master_solve(cuts: Sequence[Cut], max_degree: int, budget: int,
                 tolerances: Optional[lp.Tolerances] = None,
                 ) -> Tuple[np.ndarray, float]:
    """Maximize the piecewise-linear overestimate over admissible supports.

    Exact.  Coordinates every cut values at zero cannot change any cut,
    so the search runs on the remaining columns (the scatter back keeps
    degree indexing); a spare zeroed coordinate stands in when nothing is
    valued at all.  Small reduced instances are enumerated outright,
    which also settles value ties toward the lexicographically smallest
    support; larger ones go through branch-and-bound.
    """
    if not cuts:
        raise ValidationError("master needs at least one cut")
    if budget < 1:
        raise ValidationError("support budget must be at least 1")
    D = max_degree
    budget = min(budget, D)
    offsets, grads = _cut_arrays(cuts)
    live = np.nonzero(np.any(grads != 0.0, axis=0))[0]
    candidates = []
    if live.size:
        k = min(budget, int(live.size))
        if live.size <= _ENUM_CUTOFF:
            z_red, val = _enumerate_core(offsets, grads[:, live], k)
        else:
            z_red, val = _branch_bound_core(offsets, grads[:, live], k,
                                            tolerances)
        z_full = np.zeros(D)
        z_full[live[z_red > 0.5]] = 1.0
        candidates.append((z_full, val))
    if live.size < D:
        idle = np.nonzero(np.all(grads == 0.0, axis=0))[0]
        z_fill = np.zeros(D)
        z_fill[int(idle[-1])] = 1.0  # the lex-smallest singleton tuple
        candidates.append((z_fill, float(offsets.min())))
    best_z, best_val = candidates[0]
    for z, val in candidates[1:]:
        if val > best_val + _PRUNE_SLACK:
            best_z, best_val = z, val
        elif (abs(val - best_val) <= 1e-9 * (1.0 + abs(val))
              and _is_lex_smaller(z, best_z)):
            best_z = z
    return best_z, best_val


_CAP_QUANTILES = (0.5, 0.8, 0.95)


def _cut_family(anchor: np.ndarray, value: float, gain: np.ndarray) -> List[Cut]:
    """Linear overestimates of the margin derived from one evaluation.

    Cap level 0 is the plain supergradient cut.  Every other cap trades a
    constant penalty for clipping the per-degree surplus, which keeps the
    overestimate honest on supports padded with many small-surplus
    degrees.  The level-0 member makes the family exact at the anchor.
    """
    caps = [0.0]
    positive = gain[gain > 0.0]
    if positive.size:
        caps.extend(float(q) for q in np.quantile(positive, _CAP_QUANTILES))
        caps.append(float(positive.max()))
    family = []
    for cap in sorted(set(caps)):
        family.append(Cut(anchor.copy(), value + cap,
                          np.maximum(gain - cap, 0.0)))
    return family


def outer_approximation(decode_probs: np.ndarray, grid: Grid, theta: float,
                        budget: int, z_init,
                        eps: float = DEFAULT_GAP_TOL,
                        max_rounds: int = DEFAULT_ROUND_CAP,
                        tolerances: Optional[lp.Tolerances] = None,
                        feasible_above: Optional[float] = None,
                        infeasible_below: Optional[float] = None,
                        on_round_cap: str = "raise") -> OAResult:
    """Compute T(theta) = max over supports of the guaranteed margin.

    Alternates between evaluating the margin at a support (adding its
    cuts) and maximizing the cut overestimate; stops when the two meet
    within ``eps``.  The optional thresholds allow early exit as soon as
    the sign of T against them is settled: ``feasible_above`` returns once
    some support proves T at least that large, ``infeasible_below``
    returns once the overestimate drops below it.

    Each evaluation contributes a family of cuts, one per cap level: the
    plain surplus cut plus capped variants ``value + cap + sum of
    (surplus - cap)+``.  A capped variant is valid because the degree
    attaining the largest surplus pays the full amount either way, and it
    stays tight on supports that pad one valuable degree with many
    marginal ones, which the plain cut grossly overestimates.

    Exhausting ``max_rounds`` raises by default; ``on_round_cap="return"``
    instead reports the bracket found so far with status ``round_cap``,
    which the bisection treats as not-proven-feasible.
    """
    if eps <= 0.0:
        raise ValidationError("gap tolerance must be positive")
    if max_rounds < 1:
        raise ValidationError("round cap must be at least 1")
    if on_round_cap not in ("raise", "return"):
        raise ValidationError("on_round_cap must be 'raise' or 'return'")
    z = np.asarray(z_init, dtype=np.float64)
    D = z.shape[0]
    z = _as_support_vector(z, D)
    popcount = int(z.sum())
    if popcount == 0:
        raise ValidationError("initial support must be nonempty")
    if popcount > budget:
        raise ValidationError("initial support exceeds the budget")
    if budget >= D:
        # unconstrained cardinality: the full support dominates everything
        z_all = np.ones(D)
        f_all, _ = subproblem(decode_probs, grid, z_all, theta, tolerances)
        return OAResult(f_all, f_all, z_all, 0, "converged", [f_all])
    f_best, dual = subproblem(decode_probs, grid, z, theta, tolerances)
    z_best = z
    cuts = _cut_family(z, dual.cut_value, dual.degree_gain)
    trace: List[float] = []
    while len(trace) < max_rounds:
        if feasible_above is not None and f_best >= feasible_above:
            upper = trace[-1] if trace else math.inf
            return OAResult(f_best, upper, z_best, len(trace),
                            "feasible_early", trace)
        t_m = time.perf_counter()
        z_next, upsilon = master_solve(cuts, D, budget, tolerances)
        t_m = time.perf_counter() - t_m
        trace.append(upsilon)
        logger.debug("oa round %d: upper=%.3e best=%.3e cuts=%d master=%.2fs",
                     len(trace), upsilon, f_best, len(cuts), t_m)
        if infeasible_below is not None and upsilon < infeasible_below:
            return OAResult(f_best, upsilon, z_best, len(trace),
                            "infeasible_early", trace)
        f_next, dual = subproblem(decode_probs, grid, z_next, theta, tolerances)
        if f_next > f_best:
            f_best, z_best = f_next, z_next
        if abs(upsilon - f_next) <= eps:
            return OAResult(f_best, upsilon, z_best, len(trace),
                            "converged", trace)
        cuts.extend(_cut_family(z_next, dual.cut_value, dual.degree_gain))
    if on_round_cap == "return":
        return OAResult(f_best, trace[-1], z_best, len(trace),
                        "round_cap", trace)
    raise SolverFailure(
        f"no convergence in {max_rounds} rounds; margin bounds "
        f"[{f_best:.9g}, {trace[-1]:.9g}]"
    )


def bisection_max_rate(config: ProblemConfig, budget: int,
                       theta_tol: float = DEFAULT_THETA_TOL,
                       eps_oa: float = DEFAULT_GAP_TOL,
                       max_rounds: int = DEFAULT_BISECT_ROUNDS,
                       nominal: Optional[DegreeOptResult] = None,
                       tolerances: Optional[lp.Tolerances] = None) -> ExactResult:
    """Largest sustainable rate on any support within the budget.

    A rate is deemed sustainable when T(rate) >= -eps_oa; the slack only
    shifts which bisection branch a knife-edge rate takes, and the final
    report re-measures the true rate of the recovered distribution.  The
    bracket starts at the unconstrained optimum, which no budget can beat;
    each feasible step keeps its witness support, warm-starting the next
    oracle call and eventually seeding the reported distribution.  An
    oracle run that exhausts its rounds undecided counts as unsustainable:
    that can only trim the bracket from above by less than the cut
    resolution, and the re-measured witness rate is unaffected.
    """
    t0 = time.perf_counter()
    if budget < 1:
        raise ValidationError("support budget must be at least 1")
    if theta_tol <= 0.0:
        raise ValidationError("rate tolerance must be positive")
    dec = config.decode_probs()
    grid = config.grid()
    D = config.degree_cap()
    budget = min(budget, D)
    nom = nominal if nominal is not None else optimize_degree(config, tolerances)
    masses = nom.distribution.to_dense()
    k = min(budget, int(np.count_nonzero(masses)))
    z = np.zeros(D)
    z[np.argsort(-masses, kind="stable")[:k]] = 1.0
    lo, hi = 0.0, nom.rate + 64.0 * theta_tol
    oa_rounds: List[int] = []
    steps = 0
    while hi - lo > theta_tol:
        mid = 0.5 * (lo + hi)
        res = outer_approximation(
            dec, grid, mid, budget, z, eps=eps_oa, max_rounds=max_rounds,
            tolerances=tolerances,
            feasible_above=-eps_oa, infeasible_below=-eps_oa,
            on_round_cap="return",
        )
        steps += 1
        oa_rounds.append(res.rounds)
        logger.debug("bisection step %d: theta=%.9f %s after %d rounds "
                     "(%.1fs elapsed)", steps, mid, res.status, res.rounds,
                     time.perf_counter() - t0)
        if res.value >= -eps_oa:
            lo, z = mid, res.z
        else:
            hi = mid
    support = [int(i) + 1 for i in np.nonzero(z > 0.5)[0]]
    prob = assemble_rate_lp(dec, grid, D, support=support)
    sol = lp.solve(prob, tolerances).require_optimal("support rate LP")
    dense = np.zeros(D)
    for j, d in enumerate(support):
        dense[d - 1] = max(float(sol.x[j]), 0.0)
    dist = DegreeDistribution.from_dense(dense)
    theta_star = evaluate_rate(dec, grid, dist)
    return ExactResult(
        theta_star=theta_star,
        distribution=dist,
        z_star=z,
        bisection_steps=steps,
        oa_rounds=oa_rounds,
        theta_bracket=(lo, hi),
        wall_time=time.perf_counter() - t0,
    )
