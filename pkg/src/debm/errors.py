"""Exception types shared across the package."""


class DebmError(Exception):
    """Base class for all domain errors raised by this package."""


class SchemaError(DebmError):
    """The structure of an input (header, column names) is invalid."""


class IngestionError(DebmError):
    """A cell or row of an input table could not be ingested."""


class FitError(DebmError):
    """Density or ordering estimation failed on the given data."""
