class CloudAttentionError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CloudAttentionError, ValueError):
    pass


class ArgumentError(CloudAttentionError, ValueError):
    pass


class ContractError(CloudAttentionError, RuntimeError):
    pass


class NumericError(CloudAttentionError, ArithmeticError):
    pass


class ParseError(CloudAttentionError, ValueError):
    """Malformed input file. `position` is a human string like 'line 3' or 'byte 17'."""

    def __init__(self, path, position: str, message: str):
        self.path = str(path)
        self.position = position
        super().__init__(f"{self.path}: {position}: {message}")


def shape_mismatch(op: str, a: tuple, b: tuple) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")
