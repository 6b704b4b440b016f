from typing import Any, Optional, Sequence


class ShapeError(ValueError):
    """
    Raised when a primitive receives operands with incompatible shapes.
    """

    def __init__(self, primitive: str, dims: Sequence[Any], reason: str = "incompatible shapes"):
        self.primitive = primitive
        self.dims = tuple(tuple(d) if isinstance(d, (tuple, list)) else d for d in dims)
        super().__init__(f"{primitive}: {reason} {self.dims}")


class NonFiniteError(FloatingPointError):
    """
    Raised as soon as a NaN or Inf shows up in a forward value or gradient.
    """

    def __init__(self, primitive: str, detail: str = ""):
        self.primitive = primitive
        message = f"non-finite value produced by {primitive}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DatasetValidationError(ValueError):
    """Dataset content violates a dataset invariant."""


class DatasetParseError(ValueError):
    """
    Malformed dataset file. Carries the offending line number (1-based).
    """

    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class TrainingError(RuntimeError):
    """
    A training run aborted. The partial log collected so far travels with it.
    """

    def __init__(self, message: str, log: Optional[Any] = None):
        super().__init__(message)
        self.log = log


class ConsistencyError(AssertionError):
    """Two exact computations that must agree did not."""
