"""Exception taxonomy. CLI exit codes: config 2, data/artifact 3, numeric 4."""


class FlowcastError(Exception):
    """Base class for all package errors."""


class ContractViolation(FlowcastError, ValueError):
    """A documented precondition was broken by the caller."""


class ConfigError(FlowcastError):
    """Invalid run configuration (bad field, bad value, impossible sizes)."""


class DataError(FlowcastError):
    """Malformed input data (CSV ingestion, stride, duplicates)."""


class ArtifactError(FlowcastError):
    """Missing, corrupted, or version/schema-mismatched artifact file."""


class NumericError(FlowcastError, ArithmeticError):
    """NaN or overflow produced inside a numeric primitive."""
