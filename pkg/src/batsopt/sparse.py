"""Support sparsification for optimized degree distributions.

Three routes of increasing effort, all reusing the LP assemblers from
`degopt`:

* direct trimming: zero every mass below a threshold, renormalize;
* slackness screening: solve the explicit dual of the rate LP, keep only
  degrees whose dual screen value sits below a threshold, then restore a
  feasible distribution on that support at the optimal rate;
* iterative reweighted l1: minimize a concave surrogate of support size
  by majorization-minimization, re-solving a weighted mass LP at a pinned
  target rate and reweighting until the weights stop moving.

Every route re-measures the final rate of the trimmed distribution; the
reported rate drop is relative to the nominal optimum actually achieved,
never assumed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import lp
from .degopt import (
    DegreeDistribution,
    DegreeOptResult,
    Grid,
    ProblemConfig,
    assemble_fixed_rate_lp,
    evaluate_rate,
    margin_matrix,
    optimize_degree,
)
from .errors import InfeasibleProblem, SolverFailure, ValidationError

METHOD_TRIM = "direct_trim"
METHOD_COMPLEMENTARY = "complementary_slackness"
METHOD_L1 = "reweighted_l1"

DEFAULT_TRIM_EPSILON = 1e-7
DEFAULT_DUAL_SCREEN_EPSILON = 1e-6


@dataclass
class DualSolution:
    """Optimal multipliers of the rate LP's explicit dual.

    ``rate_price`` equals the primal optimal rate by strong duality.
    ``grid_weights`` put unit log-mass on the binding checkpoints
    (sum of grid_weights[i] * log1p(-x_i) is exactly -1).
    ``screen`` has one nonnegative entry per degree; a strictly positive
    entry certifies that degree carries no mass in any primal optimum.
    """

    rate_price: float
    grid_weights: np.ndarray
    screen: np.ndarray
    iterations: int


@dataclass
class SparseResult:
    distribution: DegreeDistribution
    theta_achieved: float
    baseline_rate: float
    support_size: int
    method: str
    wall_time: float
    iterations: int = 0
    stop_reason: str = ""
    screen_epsilon: Optional[float] = None
    distribution_untrimmed: Optional[DegreeDistribution] = None

    @property
    def rate_drop(self) -> float:
        """Relative rate loss against the nominal optimum."""
        if self.baseline_rate == 0.0:
            return 0.0
        return (self.baseline_rate - self.theta_achieved) / self.baseline_rate


@dataclass(frozen=True)
class L1Options:
    """Knobs of the reweighted surrogate loop (sharpness, stopping, trim)."""

    delta: float = 10.0
    k_max: int = 10
    eps1: float = 1e-3
    eps2: float = DEFAULT_TRIM_EPSILON
    theta_target: Optional[float] = None  # default: the nominal optimum
    theta_backoff: float = 1.0            # multiplier applied to the default

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValidationError("delta must be positive")
        if self.k_max < 1:
            raise ValidationError("k_max must be at least 1")
        if self.eps1 <= 0.0 or self.eps2 <= 0.0:
            raise ValidationError("stopping thresholds must be positive")
        if not 0.0 < self.theta_backoff <= 1.0:
            raise ValidationError("theta_backoff must lie in (0, 1]")


def trim_and_normalize(dist: DegreeDistribution, epsilon: float = DEFAULT_TRIM_EPSILON) -> DegreeDistribution:
    """Zero masses below epsilon, rescale the rest to sum one."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("trim threshold must lie in (0, 1)")
    kept = {d: m for d, m in dist.masses.items() if m >= epsilon}
    if not kept:
        raise ValidationError("trim threshold removed every mass")
    total = sum(kept.values())
    return DegreeDistribution(
        dist.max_degree, {d: m / total for d, m in kept.items()}
    )


def solve_dual(decode_probs: np.ndarray, grid: Grid, max_degree: int,
               tolerances: Optional[lp.Tolerances] = None) -> DualSolution:
    """Solve the rate LP's dual explicitly.

    Variables [grid weights; rate price].  Each degree contributes one row
    capping its weighted margin column by the price; the screen value is
    that row's gap, price minus weighted column.  The last row makes the
    grid weights spend exactly one unit against the log terms.  (Posing
    the screen as row gaps rather than explicit variables gives the solver
    a slack start instead of a few hundred artificials.)
    """
    Phi = margin_matrix(decode_probs, grid, max_degree)
    G, D = Phi.shape
    A = np.zeros((D + 1, G + 1))
    A[:D, :G] = Phi.T
    A[:D, G] = -1.0
    A[D, :G] = np.log1p(-grid.points)
    b = np.zeros(D + 1)
    b[D] = -1.0
    c = np.zeros(G + 1)
    c[G] = 1.0
    lower = np.zeros(G + 1)
    lower[G] = -np.inf
    rel = ["<="] * D + ["="]
    prob = lp.LpProblem(c, A, rel, b, sense="min", lower=lower)
    sol = lp.solve(prob, tolerances).require_optimal("dual rate LP")
    weights = np.maximum(sol.x[:G], 0.0)
    price = float(sol.x[G])
    return DualSolution(
        rate_price=price,
        grid_weights=weights,
        screen=np.maximum(price - Phi.T @ weights, 0.0),
        iterations=sol.iterations,
    )


def support_from_dual(screen: np.ndarray, epsilon: float = DEFAULT_DUAL_SCREEN_EPSILON) -> list:
    """Degrees the dual screen cannot rule out: {d : screen_d < epsilon}."""
    if epsilon <= 0.0:
        raise ValidationError("screen threshold must be positive")
    support = [int(d) + 1 for d in np.nonzero(screen < epsilon)[0]]
    if not support:
        raise ValidationError("screen threshold ruled out every degree")
    return support


def restrict_feasibility(decode_probs: np.ndarray, grid: Grid, max_degree: int,
                         support: Sequence[int], rate: float,
                         tolerances: Optional[lp.Tolerances] = None) -> DegreeDistribution:
    """Any distribution on ``support`` sustaining ``rate``; raises if none."""
    if len(support) == 0:
        raise ValidationError("support must be nonempty")
    prob = assemble_fixed_rate_lp(
        decode_probs, grid, max_degree, rate,
        np.zeros(len(support)), support=support, sense="min",
    )
    sol = lp.solve(prob, tolerances).require_optimal("support feasibility LP")
    dense = np.zeros(max_degree)
    for j, d in enumerate(support):
        dense[int(d) - 1] = sol.x[j]
    return DegreeDistribution.from_dense(dense)


def _nominal(config: ProblemConfig, nominal: Optional[DegreeOptResult],
             tolerances: Optional[lp.Tolerances]) -> DegreeOptResult:
    return nominal if nominal is not None else optimize_degree(config, tolerances)


def sparsify_trim(config: ProblemConfig, epsilon: float = DEFAULT_TRIM_EPSILON,
                  nominal: Optional[DegreeOptResult] = None,
                  tolerances: Optional[lp.Tolerances] = None) -> SparseResult:
    """Trim the nominal optimum directly and renormalize."""
    t0 = time.perf_counter()
    nom = _nominal(config, nominal, tolerances)
    dist = trim_and_normalize(nom.distribution, epsilon)
    theta = evaluate_rate(config.decode_probs(), nom.grid, dist)
    return SparseResult(
        distribution=dist,
        theta_achieved=theta,
        baseline_rate=nom.rate,
        support_size=dist.support_size,
        method=METHOD_TRIM,
        wall_time=time.perf_counter() - t0,
        stop_reason="trimmed",
    )


def sparsify_complementary(config: ProblemConfig,
                           screen_epsilon: float = DEFAULT_DUAL_SCREEN_EPSILON,
                           nominal: Optional[DegreeOptResult] = None,
                           trim_epsilon: float = DEFAULT_TRIM_EPSILON,
                           tolerances: Optional[lp.Tolerances] = None) -> SparseResult:
    """Dual screen -> support restriction -> feasibility at the optimal rate.

    An overly sharp screen can leave the feasibility LP empty; one
    automatic retry widens the screen by doubling its threshold.
    """
    t0 = time.perf_counter()
    dec = config.decode_probs()
    grid = config.grid()
    D = config.degree_cap()
    dual = solve_dual(dec, grid, D, tolerances)
    baseline = dual.rate_price if nominal is None else nominal.rate
    eps = screen_epsilon
    try:
        support = support_from_dual(dual.screen, eps)
        dist = restrict_feasibility(dec, grid, D, support, dual.rate_price, tolerances)
    except (InfeasibleProblem, ValidationError):
        eps = 2.0 * screen_epsilon
        support = support_from_dual(dual.screen, eps)
        dist = restrict_feasibility(dec, grid, D, support, dual.rate_price, tolerances)
    dist = trim_and_normalize(dist, trim_epsilon)
    theta = evaluate_rate(dec, grid, dist)
    return SparseResult(
        distribution=dist,
        theta_achieved=theta,
        baseline_rate=baseline,
        support_size=dist.support_size,
        method=METHOD_COMPLEMENTARY,
        wall_time=time.perf_counter() - t0,
        iterations=dual.iterations,
        stop_reason="restored",
        screen_epsilon=eps,
    )


def surrogate_weights(masses: np.ndarray, delta: float) -> np.ndarray:
    """Reweighting rule: weight_d = 1 / (delta * (alpha + mass_d)).

    alpha = 1/(e^delta - 1) calibrates the log surrogate to hit exactly 1
    at unit mass, so the weight shrinks as the mass grows.
    """
    alpha = 1.0 / math.expm1(delta)
    return 1.0 / (delta * (alpha + masses))


def reweighted_l1(config: ProblemConfig, options: Optional[L1Options] = None,
                  nominal: Optional[DegreeOptResult] = None,
                  tolerances: Optional[lp.Tolerances] = None) -> SparseResult:
    """Majorization-minimization on a log surrogate of support size.

    Loop (at most k_max times): minimize weights @ masses over
    distributions sustaining the target rate; reweight by the surrogate
    rule; stop when the weights move less than eps1 in l1 norm (keeping
    the previous iterate, whose weights generated it) or when a solve
    fails (keeping the previous iterate).  A failure on the very first
    solve means the target rate itself is unattainable and raises.
    Finally trim at eps2 and renormalize.
    """
    opts = options or L1Options()
    t0 = time.perf_counter()
    dec = config.decode_probs()
    grid = config.grid()
    D = config.degree_cap()
    nom = _nominal(config, nominal, tolerances)
    theta = opts.theta_target
    if theta is None:
        theta = nom.rate * opts.theta_backoff
    psi_curr = nom.distribution.to_dense()  # iterate k (initial guess)
    w = np.ones(D)
    k = 1
    solves = 0
    stop = "iteration_cap"
    while k <= opts.k_max:
        prob = assemble_fixed_rate_lp(dec, grid, D, theta, w, sense="min")
        sol = lp.solve(prob, tolerances)
        solves += 1
        if not sol.optimal:
            if k == 1:
                sol.require_optimal("weighted mass LP (first pass)")
            stop = f"solve_{sol.status.value}"
            break
        psi = sol.x
        w_next = surrogate_weights(psi, opts.delta)
        if float(np.abs(w_next - w).sum()) < opts.eps1:
            stop = "weights_converged"
            break
        w = w_next
        psi_curr = psi
        k += 1
    untrimmed = DegreeDistribution.from_dense(psi_curr)
    dist = trim_and_normalize(untrimmed, opts.eps2)
    theta_final = evaluate_rate(dec, grid, dist)
    return SparseResult(
        distribution=dist,
        theta_achieved=theta_final,
        baseline_rate=nom.rate,
        support_size=dist.support_size,
        method=METHOD_L1,
        wall_time=time.perf_counter() - t0,
        iterations=solves,
        stop_reason=stop,
        distribution_untrimmed=untrimmed,
    )
