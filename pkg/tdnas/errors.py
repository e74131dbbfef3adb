# tdnas/errors.py
from __future__ import annotations


class TdnasError(Exception):
    """Base class for every error raised by the tdnas package."""


class ShapeError(TdnasError, ValueError):
    pass


class DegenerateParameterError(TdnasError, ValueError):
    pass


class StateError(TdnasError, RuntimeError):
    pass


class TrainingError(TdnasError, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class FormatError(TdnasError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class CapacityError(TdnasError, ValueError):
    def __init__(self, message: str, size: int):
        super().__init__(f"{message}: space has {size} candidates")
        self.size = size


class ConfigError(TdnasError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
