"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs or arguments (CLI exit code 1);
everything else deriving from ``PanColorError`` is a runtime failure (exit 2).
"""


class PanColorError(Exception):
    pass


class ValidationError(PanColorError, ValueError):
    pass


class RangeViolationError(ValidationError):
    pass


class ArityError(ValidationError):
    pass


class BundleError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class AssemblyError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class MetricError(ValidationError):
    pass


class TensorFormatError(PanColorError):
    pass


class TrainingDivergenceError(PanColorError):
    def __init__(self, step, what):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step
