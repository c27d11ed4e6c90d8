"""Exception hierarchy.

Errors that mean "a hypothesis of the theory does not hold numerically"
derive from :class:`HypothesisFailure`; the CLI maps them to exit code 2.
Everything else is a usage or numerical problem (exit code 1).
"""


class DepcaLabError(Exception):
    """Base class for all errors raised by depcalab."""


class ConfigError(DepcaLabError, ValueError):
    """Malformed configuration or invalid arguments."""


class HypothesisFailure(DepcaLabError):
    """A standing hypothesis could not be verified on the window."""

    hypothesis = "unspecified hypothesis"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def describe(self):
        return f"{self.hypothesis} not verified: {self}"


class NearSingularJ(HypothesisFailure):
    hypothesis = "invertibility of J(t,s)"


class NoDichotomy(HypothesisFailure):
    hypothesis = "exponential dichotomy of the reduced recursion"


class FitRejected(NoDichotomy):
    """Fitted (alpha, K) do not bound the Green function on the window."""


class BoundViolation(NoDichotomy):
    """Computed bounded solution exceeds the dichotomy bound."""


class NoContraction(HypothesisFailure):
    hypothesis = "contraction of the fixed-point map"


class NonConvergence(HypothesisFailure):
    hypothesis = "fixed-point convergence"


class JacobianFailure(HypothesisFailure):
    hypothesis = "well-posed linearization"


class WindowTooSmall(DepcaLabError):
    """The finite window cannot hold the requested truncation."""

    def __init__(self, message, needed=None):
        super().__init__(message)
        self.needed = needed


class IntegratorBlowUp(DepcaLabError):
    """Non-finite entries while tabulating the transition matrix."""


class ContinuityDefect(DepcaLabError):
    """Reconstructed trajectory jumps at an integer (inconsistent anchors)."""


class UnboundedSequence(DepcaLabError, ValueError):
    """Sequence fails the boundedness precondition of the RAP scans."""


class NonGridShift(DepcaLabError, ValueError):
    """Translation is not a multiple of the grid step."""
