"""Exception types shared across the package.

The CLI maps ``DomainError`` to exit code 1 and ``ConvergenceError`` to exit
code 2; everything else propagates as a crash.
"""


class DomainError(ValueError):
    """Invalid parameters, inputs outside their domain, malformed configs."""


class ConvergenceError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


class TruncationError(ConvergenceError):
    """A truncated state space dropped more mass than allowed."""


class StateCapError(RuntimeError):
    """A simulated line-counting process exceeded its state cap."""
