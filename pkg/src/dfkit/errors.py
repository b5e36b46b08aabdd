"""Exception types shared across the package."""


class DfkitError(Exception):
    """Base class for package-specific errors."""


class ParseError(DfkitError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConsistencyError(ParseError):
    """Duplicate entries in an input file disagree beyond tolerance."""


class SymmetryError(DfkitError, ValueError):
    """An input tensor violates a required symmetry."""


class ConvergenceError(DfkitError, RuntimeError):
    """An iterative solver failed to converge. Carries the final residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PlanError(DfkitError, ValueError):
    """A measurement plan is inconsistent with the Hamiltonian blocks."""


class TargetUnreachableError(DfkitError, ValueError):
    """Requested accuracy lies below the systematic bias floor."""

    def __init__(self, message, bias):
        super().__init__(message)
        self.bias = bias
