"""Rate-optimal degree distributions for batch sparse codes.

The design problem: a source draws a degree d from a distribution over
{1..D}, mixes d input packets into a batch, and the receiver decodes by
belief propagation.  A distribution is judged by the largest rate theta
such that the expected decoding margin stays nonnegative along the whole
decoding trajectory; the trajectory is discretized on a grid of recovered
fractions x and the margin at x is

    margin(x) = decode_weights(x) @ masses + theta * log(1 - x)

which is linear in the masses and theta, so maximizing theta is a linear
program.  This module builds that LP, solves it to a certified vertex,
evaluates fixed distributions, and runs grid-refinement studies.  The
companion modules reuse the assemblers here: `sparse` for fixed-rate
support trimming, `exact` for cardinality-constrained search.

Degrees are capped at D = ceil(M / (1 - recovery_fraction)) - 1 by
default: past that point a batch is almost surely decodable only after
the recovery target is already met, so heavier degrees cannot help.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lp
from .errors import ValidationError
from .specfun import FieldParams, RankDistribution, constraint_rows, decodability_vector

_CEIL_SNAP = 1e-9
_MASS_DROP = 1e-12


def default_max_degree(M: int, recovery_fraction: float) -> int:
    """Largest useful degree for a target recovered fraction."""
    if not 0.0 < recovery_fraction < 1.0:
        raise ValidationError("recovery fraction must lie strictly inside (0, 1)")
    v = M / (1.0 - recovery_fraction)
    # snap guards against 400.0000000001-style float noise flipping the ceil
    return int(math.ceil(v - _CEIL_SNAP)) - 1


@dataclass(frozen=True)
class Grid:
    """Strictly increasing recovered-fraction checkpoints ending at the target."""

    points: np.ndarray
    step: Optional[float] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.shape[0] == 0:
            raise ValidationError("grid needs at least one point")
        if pts[0] <= 0.0 or pts[-1] >= 1.0 or np.any(np.diff(pts) <= 0.0):
            raise ValidationError("grid points must increase strictly within (0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def target(self) -> float:
        return float(self.points[-1])


def build_grid(recovery_fraction: float, step: Optional[float] = None,
               count: Optional[int] = None) -> Grid:
    """Uniform grid over (0, recovery_fraction], by step or by point count.

    With ``step``, points run step, 2*step, ... and the target fraction is
    appended when it is not already a multiple.  With ``count``, the grid
    is count points equally spaced ending exactly at the target.
    """
    if not 0.0 < recovery_fraction < 1.0:
        raise ValidationError("recovery fraction must lie strictly inside (0, 1)")
    if (step is None) == (count is None):
        raise ValidationError("specify exactly one of step or count")
    if count is not None:
        if count < 1:
            raise ValidationError("grid count must be positive")
        pts = recovery_fraction * np.arange(1, count + 1) / count
        pts[-1] = recovery_fraction
        return Grid(pts, step=None)
    if not 0.0 < step <= recovery_fraction:
        raise ValidationError("step must lie in (0, recovery_fraction]")
    n_full = int(math.floor(recovery_fraction / step + _CEIL_SNAP))
    pts = step * np.arange(1, n_full + 1)
    if recovery_fraction - pts[-1] > 1e-12:
        pts = np.append(pts, recovery_fraction)
    else:
        pts[-1] = recovery_fraction
    return Grid(pts, step=step)


@dataclass(frozen=True)
class ProblemConfig:
    """One design instance: channel rank statistics plus decoding targets."""

    rank_dist: RankDistribution
    field: FieldParams = field(default_factory=lambda: FieldParams(256))
    recovery_fraction: float = 0.98
    grid_step: Optional[float] = 0.001
    grid_count: Optional[int] = None
    max_degree: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.recovery_fraction < 1.0:
            raise ValidationError("recovery fraction must lie strictly inside (0, 1)")
        if self.grid_step is not None and self.grid_count is not None:
            raise ValidationError("specify grid_step or grid_count, not both")
        if self.max_degree is not None and self.max_degree < 1:
            raise ValidationError("max degree must be at least 1")

    def degree_cap(self) -> int:
        if self.max_degree is not None:
            return self.max_degree
        return default_max_degree(self.rank_dist.M, self.recovery_fraction)

    def grid(self) -> Grid:
        step = self.grid_step
        if step is None and self.grid_count is None:
            step = 0.001
        return build_grid(self.recovery_fraction, step=step, count=self.grid_count)

    def decode_probs(self) -> np.ndarray:
        return decodability_vector(self.rank_dist, self.field.q)


class DegreeDistribution:
    """Probability masses over degrees 1..max_degree (sparse storage)."""

    __slots__ = ("max_degree", "masses")

    def __init__(self, max_degree: int, masses: dict):
        if max_degree < 1:
            raise ValidationError("max degree must be at least 1")
        clean: dict[int, float] = {}
        for d in sorted(masses):
            m = float(masses[d])
            di = int(d)
            if di < 1 or di > max_degree:
                raise ValidationError(f"degree {di} outside 1..{max_degree}")
            if not math.isfinite(m) or m < -1e-9:
                raise ValidationError(f"mass at degree {di} is invalid: {m}")
            if m > _MASS_DROP:
                clean[di] = m
        total = sum(clean.values())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"masses sum to {total}, not 1")
        self.max_degree = int(max_degree)
        self.masses = clean

    @classmethod
    def from_dense(cls, vec: Sequence[float], drop_tol: float = _MASS_DROP) -> "DegreeDistribution":
        v = np.asarray(vec, dtype=np.float64)
        masses = {d + 1: float(v[d]) for d in range(v.shape[0]) if v[d] > drop_tol}
        return cls(v.shape[0], masses)

    def to_dense(self) -> np.ndarray:
        v = np.zeros(self.max_degree)
        for d, m in self.masses.items():
            v[d - 1] = m
        return v

    @property
    def support(self) -> list:
        return sorted(self.masses)

    @property
    def support_size(self) -> int:
        return len(self.masses)

    def total_mass(self) -> float:
        return float(sum(self.masses.values()))

    def expected_degree(self) -> float:
        return float(sum(d * m for d, m in self.masses.items()))

    def normalized(self) -> "DegreeDistribution":
        t = self.total_mass()
        return DegreeDistribution(
            self.max_degree, {d: m / t for d, m in self.masses.items()}
        )

    def to_json_dict(self) -> dict:
        # keys inserted in increasing degree order so serialization is stable
        return {
            "D": self.max_degree,
            "masses": {str(d): self.masses[d] for d in sorted(self.masses)},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DegreeDistribution":
        try:
            D = int(data["D"])
            masses = {int(k): float(v) for k, v in data["masses"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed degree distribution payload: {exc}")
        return cls(D, masses)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    def __eq__(self, other):
        return (
            isinstance(other, DegreeDistribution)
            and self.max_degree == other.max_degree
            and self.masses == other.masses
        )

    def __repr__(self):
        return f"DegreeDistribution(D={self.max_degree}, support={self.support_size})"


def margin_matrix(decode_probs: np.ndarray, grid: Grid, max_degree: int,
                  support: Optional[Sequence[int]] = None) -> np.ndarray:
    """Rows of decode weights: entry (i, j) weights degree j at grid point i.

    With ``support``, only those degree columns are returned (order kept).
    """
    rows = constraint_rows(decode_probs, grid.points, max_degree)
    if support is None:
        return rows
    idx = np.asarray([int(d) - 1 for d in support], dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= max_degree):
        raise ValidationError("support degree outside 1..max_degree")
    return rows[:, idx]


def assemble_rate_lp(decode_probs: np.ndarray, grid: Grid, max_degree: int,
                     support: Optional[Sequence[int]] = None) -> lp.LpProblem:
    """Variables [masses(1..D); rate]; maximize the rate.

    Rows: margin at every grid point stays nonnegative; masses sum to one.
    With ``support``, only those degrees get a mass variable.
    """
    Phi = margin_matrix(decode_probs, grid, max_degree, support=support)
    G, D = Phi.shape
    A = np.zeros((G + 1, D + 1))
    A[:G, :D] = Phi
    A[:G, D] = np.log1p(-grid.points)
    A[G, :D] = 1.0
    b = np.zeros(G + 1)
    b[G] = 1.0
    c = np.zeros(D + 1)
    c[D] = 1.0
    rel = [">="] * G + ["="]
    lower = np.zeros(D + 1)
    lower[D] = -np.inf
    return lp.LpProblem(c, A, rel, b, sense="max", lower=lower)


def assemble_fixed_rate_lp(decode_probs: np.ndarray, grid: Grid, max_degree: int,
                           rate: float, objective: np.ndarray,
                           support: Optional[Sequence[int]] = None,
                           sense: str = "min") -> lp.LpProblem:
    """Mass-only LP at a pinned rate: margin rows become pure lower bounds."""
    Phi = margin_matrix(decode_probs, grid, max_degree, support=support)
    G, D = Phi.shape
    A = np.zeros((G + 1, D))
    A[:G, :] = Phi
    A[G, :] = 1.0
    b = np.zeros(G + 1)
    b[:G] = -rate * np.log1p(-grid.points)
    b[G] = 1.0
    rel = [">="] * G + ["="]
    return lp.LpProblem(objective, A, rel, b, sense=sense)


@dataclass
class DegreeOptResult:
    """Certified nominal optimum plus the dual data the trimmers feed on."""

    rate: float
    distribution: DegreeDistribution
    grid: Grid
    grid_duals: np.ndarray        # nonnegative price of each margin row
    mass_dual: float              # price of the unit-mass row; equals rate
    mass_reduced_costs: np.ndarray  # nonnegative screen values, one per degree
    iterations: int
    backend: str

    @property
    def support_size(self) -> int:
        return self.distribution.support_size


def optimize_degree(config: ProblemConfig,
                    tolerances: Optional[lp.Tolerances] = None) -> DegreeOptResult:
    """Solve the nominal design LP to a certified vertex optimum."""
    dec = config.decode_probs()
    grid = config.grid()
    D = config.degree_cap()
    problem = assemble_rate_lp(dec, grid, D)
    sol = lp.solve(problem, tolerances).require_optimal("rate design LP")
    masses = DegreeDistribution.from_dense(sol.x[:D])
    G = grid.size
    return DegreeOptResult(
        rate=float(sol.objective),
        distribution=masses,
        grid=grid,
        grid_duals=np.maximum(-sol.duals[:G], 0.0),
        mass_dual=float(sol.duals[G]),
        mass_reduced_costs=np.maximum(-sol.reduced_costs[:D], 0.0),
        iterations=sol.iterations,
        backend=lp.backend(),
    )


def evaluate_rate(decode_probs: np.ndarray, grid: Grid,
                  dist: DegreeDistribution) -> float:
    """Largest rate a fixed distribution sustains on this grid.

    The binding checkpoint is the grid point minimizing
    margin_weights(x) @ masses / -log(1 - x).
    """
    Phi = margin_matrix(decode_probs, grid, dist.max_degree)
    num = Phi @ dist.to_dense()
    den = -np.log1p(-grid.points)
    return float(np.min(num / den))


@dataclass(frozen=True)
class ConvergenceRow:
    step: float
    rate: float
    support_size: int
    iterations: int


def convergence_study(config: ProblemConfig, steps: Sequence[float],
                      tolerances: Optional[lp.Tolerances] = None) -> list:
    """Re-solve the design LP across grid steps, coarse to fine."""
    if len(steps) == 0:
        raise ValidationError("need at least one grid step")
    rows = []
    for s in steps:
        cfg = ProblemConfig(
            rank_dist=config.rank_dist,
            field=config.field,
            recovery_fraction=config.recovery_fraction,
            grid_step=float(s),
            grid_count=None,
            max_degree=config.max_degree,
        )
        res = optimize_degree(cfg, tolerances)
        rows.append(ConvergenceRow(float(s), res.rate, res.support_size, res.iterations))
    return rows
