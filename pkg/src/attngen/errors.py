"""Exception hierarchy shared across the package."""


class AttnGenError(Exception):
    pass


class ShapeError(AttnGenError, ValueError):
    pass


class UsageError(AttnGenError, RuntimeError):
    pass


class ConfigError(AttnGenError, ValueError):
    pass


class DataError(AttnGenError, ValueError):
    pass


class InvalidCharacterError(DataError):
    def __init__(self, char, position):
        self.char = char
        self.position = position
        super().__init__(f"invalid character {char!r} at position {position}")


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(AttnGenError, FloatingPointError):
    pass


class CheckpointFormatError(AttnGenError, ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass
