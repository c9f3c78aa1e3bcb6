"""Exception hierarchy shared by every stage of the toolkit."""


class SSMEError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SSMEError, ValueError):
    """An argument is outside its admissible range."""


class FormatError(SSMEError, ValueError):
    """A file does not follow the expected layout."""


class UnsupportedError(FormatError):
    pass


class DataError(SSMEError, ValueError):
    """Input samples are invalid (e.g. non-finite)."""


class CubeIOError(SSMEError, OSError):
    pass


class ConsistencyError(SSMEError, ValueError):
    """Two inputs that must agree do not."""


class NumericalError(SSMEError, ArithmeticError):
    pass


class EigenError(NumericalError):
    """Eigen-solver did not converge; ``residuals`` holds the final residual norms."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class StageError(SSMEError):
    """Raised by the pipeline to tag a failure with the stage it occurred in."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
