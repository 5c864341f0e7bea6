"""Exception types shared across the package."""


class DpsgdError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(DpsgdError):
    """An array argument has a shape inconsistent with the model or data."""


class ConfigError(DpsgdError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(DpsgdError):
    """Base class for tabular-data ingestion failures."""


class MissingColumnError(DataError):
    """A required column is absent from the input file."""

    def __init__(self, column: str):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class NonNumericError(DataError):
    """A cell that should be numeric could not be parsed."""

    def __init__(self, column: str, row: int, value: str):
        super().__init__(f"non-numeric value {value!r} in column {column!r}, data row {row}")
        self.column = column
        self.row = row
        self.value = value


class EmptyFileError(DataError):
    """The input file has no header or no data rows."""


class DivergenceError(DpsgdError):
    """An optimizer iterate became non-finite or exceeded the divergence guard."""

    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"iterate diverged at step {step}")
        self.step = step


class CalibrationError(DpsgdError):
    """Noise calibration failed (target outside the achievable range)."""


class SingularMatrixError(DpsgdError):
    """A matrix inversion failed; enabling eigenvalue flooring may help."""
