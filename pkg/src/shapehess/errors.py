"""Error taxonomy shared by all modules.

Every failure mode carries a stable ``code`` string so the command line
layer can map it onto an exit code without string matching on messages.
"""


class ShapehessError(Exception):
    """Base class; ``code`` identifies the failure mode."""

    code = "ERROR"

    def __init__(self, message=""):
        super().__init__(f"[{self.code}] {message}" if message else f"[{self.code}]")
        self.message = message


class InvertedElement(ShapehessError):
    """A triangle has non-positive signed area."""

    code = "INVERTED_ELEMENT"


class NoConvergence(ShapehessError):
    """Iteration budget exhausted before reaching tolerance."""

    code = "NO_CONVERGENCE"


class SolverBreakdown(ShapehessError):
    """Sparse factorization failed or verified residual too large."""

    code = "SOLVER_BREAKDOWN"


class ConjugateUnavailable(ShapehessError):
    """The convex conjugate of f (or g) is not implemented for this pair."""

    code = "CONJUGATE_UNAVAILABLE"


class WrongPair(ShapehessError):
    """A specialized route was invoked with an incompatible integrand pair."""

    code = "WRONG_PAIR"


class NonNormalDeformation(ShapehessError):
    """A normal-field-only route received a field with tangential part."""

    code = "NONNORMAL_V"


class SupportViolation(ShapehessError):
    """A compactly-supported field was required but V does not vanish near the boundary."""

    code = "SUPPORT_VIOLATION"


class DegenerateForm(ShapehessError):
    """A quadratic form lost positive definiteness beyond the allowed floor."""

    code = "DEGENERATE_FORM"


class UnsupportedCombination(ShapehessError):
    """Requested options are individually valid but not implemented together."""

    code = "UNSUPPORTED_COMBINATION"


class ConfigError(ShapehessError):
    """Malformed or unknown configuration input."""

    code = "CONFIG_ERROR"
