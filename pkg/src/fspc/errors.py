"""Exception types shared across the package."""


class FspcError(Exception):
    """Base class for package errors."""


class DataError(FspcError):
    """Malformed dataset records, manifests, or split violations."""


class NumericError(FspcError):
    """Non-finite values encountered during training or evaluation."""
