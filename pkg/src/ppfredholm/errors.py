"""Exception hierarchy shared by all modules."""


class PPFredholmError(Exception):
    """Base class for every error raised by the package."""


class InvalidGeometryError(PPFredholmError, ValueError):
    """Degenerate, self-intersecting or otherwise unusable geometry."""


class InvalidArgumentError(PPFredholmError, ValueError):
    pass


class InvalidModelError(PPFredholmError, ValueError):
    """A moment model or thinning field is outside its admissible range."""


class ModelInconsistencyError(PPFredholmError, RuntimeError):
    pass


class NumericError(PPFredholmError, ArithmeticError):
    """Non-finite values produced during quadrature or evaluation."""


class MeshParseError(PPFredholmError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AssemblyError(PPFredholmError, RuntimeError):
    pass


class SolverStateError(PPFredholmError, RuntimeError):
    pass


class EvaluationError(PPFredholmError, ValueError):
    pass


class FitFailure(PPFredholmError, RuntimeError):
    """A fit did not produce a usable estimate.

    ``best`` carries the last iterate when one exists.
    """

    def __init__(self, message, best=None, columns=None):
        super().__init__(message)
        self.best = best
        self.columns = list(columns) if columns is not None else []


class ConfigError(PPFredholmError, ValueError):
    """Invalid run configuration; ``key`` is the dotted key path."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None and key not in message:
            message = f"{key}: {message}"
        super().__init__(message)


class StudyError(PPFredholmError, RuntimeError):
    """Too many replicate failures; the partial report is attached."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
