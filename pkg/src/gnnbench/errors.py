"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ValidationError(ValueError):
    """Input data violates a structural precondition."""


class VocabularyError(ValidationError):
    """A categorical code falls outside the embedding vocabulary."""


class ContractError(RuntimeError):
    """An API contract was violated (e.g. backward on a non-scalar)."""


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""


class DataError(ValueError):
    """A data file is missing or malformed."""


class ParseError(DataError):
    """A serialized record could not be parsed."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class NumericError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


class Diverged(Exception):
    """Training produced non-finite gradients; the run is a result, not a crash."""
