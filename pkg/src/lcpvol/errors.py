"""Exception hierarchy shared by all lcpvol modules."""


class LcpError(Exception):
    """Base class for every error raised by lcpvol."""

    kind = "lcp_error"


class DataValidationError(LcpError, ValueError):
    kind = "data_validation"


class BoundsError(LcpError, IndexError):
    kind = "bounds"


class DomainError(LcpError, ValueError):
    kind = "domain"


class DegenerateEstimateError(LcpError, ValueError):
    kind = "degenerate_estimate"


class NumericalError(LcpError, ArithmeticError):
    kind = "numerical"


class UnsupportedInLiveDataError(LcpError):
    kind = "unsupported_in_live_data"


class InvalidSplitError(LcpError, ValueError):
    kind = "invalid_split"


class GeometryError(LcpError, ValueError):
    kind = "geometry"


class SchemeError(LcpError, ValueError):
    kind = "scheme"


class InsufficientHistoryError(LcpError):
    kind = "insufficient_history"


class CalibrationError(LcpError):
    """Raised when no grid value up to the cap meets a scale's risk budget."""

    kind = "calibration"

    def __init__(self, message: str, scale: int, achieved_risk: float, budget: float):
        super().__init__(message)
        self.scale = scale
        self.achieved_risk = achieved_risk
        self.budget = budget


class FitError(LcpError):
    kind = "fit"

    def __init__(self, message: str, last_iterate=None, grad_norm: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class DegenerateComparisonError(LcpError, ZeroDivisionError):
    kind = "degenerate_comparison"


class AlignmentError(LcpError, ValueError):
    kind = "alignment"


class IngestionError(LcpError):
    """CSV ingestion failure; ``line`` is the 1-based file line when known."""

    kind = "ingestion"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(LcpError, ValueError):
    kind = "config"


class ExperimentConfigError(LcpError, ValueError):
    kind = "experiment_config"
