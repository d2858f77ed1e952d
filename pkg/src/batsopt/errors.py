"""Exception types shared across the package.

The CLI maps these onto exit codes: validation errors -> 1, solver
failures -> 2, I/O errors -> 3.
"""


class ValidationError(ValueError):
    """Malformed input: bad distribution, bad config, bad file contents."""


class SolverFailure(RuntimeError):
    """A solve did not produce a usable answer (numerical failure, cap hit)."""


class InfeasibleProblem(SolverFailure):
    """The stated problem admits no feasible point."""


class UnboundedProblem(SolverFailure):
    """The stated problem is unbounded in the optimization direction."""
