"""Exception hierarchy shared by every module."""


class LayoutGenError(Exception):
    """Base class for all package errors."""


class DimensionError(LayoutGenError, ValueError):
    pass


class GeometryError(LayoutGenError, ValueError):
    pass


class CoverageError(GeometryError):
    def __init__(self, cell):
        self.cell = tuple(int(c) for c in cell)
        super().__init__(f"cell {self.cell} is not covered by any piece")


class ConfigurationError(LayoutGenError, ValueError):
    pass


class ValidationError(LayoutGenError, ValueError):
    pass


class ManifestParseError(LayoutGenError, ValueError):
    pass


class EmptyInputError(LayoutGenError, ValueError):
    pass


class UnsupportedOperationError(LayoutGenError, TypeError):
    pass


class OracleScopeError(LayoutGenError, ValueError):
    pass


class NumericError(LayoutGenError, ArithmeticError):
    pass


class ScopeError(LayoutGenError, ValueError):
    pass


class AssetNotFoundError(LayoutGenError, KeyError):
    pass


class JudgeTransportError(LayoutGenError, ConnectionError):
    """Raised by judge providers when a request could not be delivered."""
