"""Exception types shared across the package."""


class SpectrajError(Exception):
    pass


class ConfigError(SpectrajError, ValueError):
    """Invalid configuration, unknown scene/variant, bad schedule."""


class ParseError(SpectrajError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(SpectrajError, ValueError):
    pass


class NumericError(SpectrajError, ArithmeticError):
    pass


class ShapeError(SpectrajError, ValueError):
    pass
