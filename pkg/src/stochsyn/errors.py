"""Exception types shared across the toolbox."""


class StochsynError(Exception):
    """Base class for all toolbox errors."""


class FormulaSyntaxError(StochsynError):
    """Malformed formula text. Carries the offending position and what was expected."""

    def __init__(self, message, position=None, expected=None):
        self.position = position
        self.expected = expected
        if position is not None:
            message = f"{message} (at position {position})"
        if expected:
            message = f"{message}; expected one of: {', '.join(sorted(expected))}"
        super().__init__(message)


class NotCosafeError(StochsynError):
    """Formula falls outside the syntactically co-safe fragment."""


class DimensionMismatch(StochsynError):
    """Operands have incompatible dimensions."""


class EmptyResult(StochsynError):
    """A set computation produced an empty set where a nonempty one is required."""


class NotPsd(StochsynError):
    """Matrix expected to be positive semidefinite is not."""


class Unreachable(StochsynError):
    """No admissible steady state reaches the requested output."""


class JacobianUnavailable(StochsynError):
    """Nonlinear model does not provide the Jacobians needed for linearization."""


class NotStabilizable(StochsynError):
    """Riccati iteration diverged; the pair (A, B) admits no stabilizing feedback."""


class RankDeficient(StochsynError):
    """Fewer nonzero Hankel singular values than the requested reduced order."""


class IllConditioned(StochsynError):
    """Projection matrices cannot be formed reliably."""


class FractionOverflow(StochsynError):
    """Input-space actuation/feedback fractions exceed the unit budget."""


class NoCommonD(StochsynError):
    """No single weighting matrix contracts all local dynamics."""


class Infeasible(StochsynError):
    """No coupling certifies the requested deviation bound.

    ``epsilon_min`` reports the smallest output deviation for which a
    certificate exists (may be ``inf`` when no noise channel is available).
    """

    def __init__(self, message, epsilon_min=None):
        self.epsilon_min = epsilon_min
        if epsilon_min is not None:
            message = f"{message} (minimal feasible epsilon: {epsilon_min:.6g})"
        super().__init__(message)


class IncompatibleWeighting(StochsynError):
    """Relations use weighting matrices with no bounded norm-equivalence constant."""


class NonConvergence(StochsynError):
    """Value iteration failed to converge within the iteration cap."""


class BudgetViolation(StochsynError):
    """Refined inputs can exceed the reserved feedback budget."""


class RelationBreach(StochsynError):
    """Measured state has no abstract counterpart within the relation."""


class VersionMismatch(StochsynError):
    """Controller artifact was written by an incompatible version."""
