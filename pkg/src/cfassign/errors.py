"""Exception types shared across the package."""


class CfassignError(Exception):
    """Base class for errors raised by this package."""


class NumericsError(CfassignError):
    """A computation produced non-finite values where finite ones are required."""


class SchemaError(CfassignError):
    """A serialized artifact (dataset, checkpoint, config) failed validation."""
