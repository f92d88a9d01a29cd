"""Exception types shared across the package."""


class CeganError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CeganError, ValueError):
    """An array did not have the shape a contract requires."""


class SchemaError(CeganError, ValueError):
    """Data violated its declared schema (kinds, dims, finiteness)."""


class ConfigError(CeganError, ValueError):
    """A configuration document is malformed or inconsistent."""


class DivergenceError(CeganError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""
