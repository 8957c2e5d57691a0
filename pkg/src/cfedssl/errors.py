"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TrainingError -> 4.
"""


class CfedsslError(Exception):
    """Base class for package errors."""


class ConfigError(CfedsslError):
    """Invalid or inconsistent run configuration."""


class DataError(CfedsslError):
    """Dataset loading or preprocessing failure."""


class ParseError(DataError):
    """Malformed dataset file; message names the offending line."""


class LabelMappingError(DataError):
    """Attack label not present in the taxonomy fixture."""


class TrainingError(CfedsslError):
    """Failure inside a training run, annotated with round/client context."""
