"""Exception types shared across the toolkit."""

from __future__ import annotations


class MvrmlError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(MvrmlError):
    """An array dimension does not match the model or batch contract."""


class ArchMismatchError(MvrmlError):
    """Two model states do not share the same architecture."""


class NumericOverflowError(MvrmlError):
    """A forward pass produced non-finite activations."""

    def __init__(self, layer_index: int, detail: str = ""):
        self.layer_index = layer_index
        msg = f"non-finite activations in layer {layer_index}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class StrategyError(MvrmlError):
    """A task-sampling strategy cannot be used with the given sources."""


class DegenerateGeometryError(MvrmlError):
    """Plane construction received coincident or colinear weight vectors."""


class MissingSpecError(MvrmlError):
    """An operation needs generative domain parameters that are absent."""


class CsvFormatError(MvrmlError):
    """A dataset CSV file violates the documented contract."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(MvrmlError):
    """An experiment configuration is invalid; names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
