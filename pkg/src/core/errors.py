"""Exception hierarchy shared by every compose-lab module."""


class ComposeLabError(Exception):
    """Base class for all errors raised by compose-lab."""


class ShapeError(ComposeLabError, ValueError):
    """Raised when array shapes are inconsistent."""


class NonFiniteError(ComposeLabError, ValueError):
    """Raised when a NaN or Inf shows up where finite values are required.

    Args:
        message (str): Human readable description.
        coordinate (int | None): Offending coordinate, when known.
    """
    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


class DegenerateVector(ComposeLabError, ValueError):
    """Raised when a vector is too short to be normalized.

    Args:
        message (str): Human readable description.
        index (int | None): Row or slot index of the degenerate vector.
    """
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class EmptyAfterCentering(ComposeLabError, ValueError):
    """Raised when every slot of an image coincides with the slot mean."""


class ConfigError(ComposeLabError, ValueError):
    """Raised for invalid experiment configurations.

    Args:
        problems (list[str]): One diagnostic per offending field.
    """
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class ModelFormatError(ComposeLabError, ValueError):
    """Raised when a serialized model file cannot be decoded."""


class NumericalFailure(ComposeLabError, ArithmeticError):
    """Raised when training produces a non-finite loss or parameter."""


class CheckFailure(ComposeLabError):
    """Raised when an embedded numerical check fails.

    Args:
        check (str): Name of the failing check.
        detail (str): Measured value and threshold.
    """
    def __init__(self, check: str, detail: str = ""):
        super().__init__(f"check '{check}' failed" + (f": {detail}" if detail else ""))
        self.check = check
        self.detail = detail
