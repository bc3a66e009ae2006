"""Exception types shared across the package.

Every error the CLI maps to an exit code lives here so the mapping stays
in one place: ConfigError -> 2, DatasetError/CheckpointError -> 3,
DivergenceError -> 4.
"""


class RegimeScopeError(Exception):
    """Base class for all package errors."""


class ConfigError(RegimeScopeError):
    """Malformed or missing run configuration."""


class DatasetError(RegimeScopeError):
    """Unreadable or inconsistent dataset (bad magic, ragged rows, ...)."""


class CheckpointError(RegimeScopeError):
    """Unreadable or malformed parameter checkpoint."""


class LayerShapeError(RegimeScopeError):
    """Shape mismatch inside the network, naming the offending layer."""

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class DivergenceError(RegimeScopeError):
    """Non-finite loss encountered during training."""

    def __init__(self, message: str, batch_index=None):
        self.batch_index = batch_index
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)
