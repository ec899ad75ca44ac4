"""Exception types. Each maps to a CLI exit code."""


class CaalError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(CaalError, ValueError):
    exit_code = 2
    kind = "config"


class BudgetError(ConfigError):
    """Requested more selections than there are candidates."""

    kind = "budget"


class DataError(CaalError, ValueError):
    exit_code = 3
    kind = "data"


class SchemaError(DataError):
    kind = "schema"


class DomainError(DataError):
    kind = "domain"


class ShapeError(DataError):
    kind = "shape"


class NumericError(CaalError, ArithmeticError):
    exit_code = 4
    kind = "numeric"


class ParameterizationError(NumericError):
    kind = "parameterization"
