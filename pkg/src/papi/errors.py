class PapiError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PapiError, ValueError):
    pass


class DegenerateVectorError(PapiError, ValueError):
    pass


class DistributionError(PapiError, ValueError):
    pass


class NumericError(PapiError, ArithmeticError):
    pass


class ParseError(PapiError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IntegrityError(PapiError, ValueError):
    pass


class ConfigError(PapiError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
