"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BytescanError(Exception):
    """Base class for all package errors."""


class MalformedHex(BytescanError, ValueError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        super().__init__(message)
        self.offset = offset


class ShapeError(BytescanError, ValueError):
    pass


class InvalidCapacity(BytescanError, ValueError):
    pass


class UnknownId(BytescanError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class EmptyWindow(BytescanError, ValueError):
    pass


class EmptyContract(BytescanError, ValueError):
    pass


class EmptyBatch(BytescanError, ValueError):
    pass


class EmptyDataset(BytescanError, ValueError):
    pass


class DatasetDegenerate(BytescanError, ValueError):
    pass


class LabelMismatch(BytescanError, ValueError):
    pass


class MalformedLabel(BytescanError, ValueError):
    pass


class RowError(BytescanError, ValueError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class CheckpointError(BytescanError, ValueError):
    pass


class NetworkError(BytescanError):
    pass


class RateLimited(NetworkError):
    pass


class ApiFormatError(BytescanError, ValueError):
    pass
