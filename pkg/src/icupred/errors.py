"""Exception types shared across the package."""


class IcupredError(Exception):
    """Base class for all package errors."""


class ShapeError(IcupredError, ValueError):
    """Operands have incompatible dimensions. Messages name both shapes."""


class ValidationError(IcupredError, ValueError):
    """Input, label, or configuration violates a documented precondition."""


class ParseError(IcupredError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" [{loc}]"
        super().__init__(f"{message}{loc}")
        self.path = path
        self.line = line


class UndefinedMetricError(IcupredError, ValueError):
    """The requested metric is undefined for this input (e.g. single-class AUROC)."""


class TrainingError(IcupredError, RuntimeError):
    """Training aborted at runtime (e.g. non-finite loss)."""
