"""Typed errors so callers can choose policy per failure mode."""


class FedselError(Exception):
    """Base class for all fedsel errors."""


class ConfigError(FedselError):
    """Invalid or inconsistent configuration."""


class DimensionError(FedselError):
    """Empty vector or mismatched vector dimensions."""


class NumericError(FedselError):
    """Non-finite values where finite ones are required."""


class LayoutError(FedselError):
    """Mismatched or unknown gradient segment layout."""


class ShapeError(FedselError):
    """Model/batch shape incompatibility."""


class DegenerateGradientError(FedselError):
    """Zero-norm gradient where a similarity needs a nonzero norm."""


class DegenerateStatisticError(FedselError):
    """Zero variance where a standardized moment is undefined."""


class ParseError(FedselError):
    """Malformed input file; message carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(FedselError):
    """Structurally valid file with inconsistent content."""


class EmptyDatasetError(SchemaError):
    """A dataset source yielded no samples."""


class ComparabilityError(FedselError):
    """Gradient summaries from incompatible rounds/sketches/layouts."""


class NumericDivergenceError(FedselError):
    """Training produced NaN/Inf; the run cannot continue."""
