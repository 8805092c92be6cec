"""Exception types shared across the package."""


class SignTokError(Exception):
    """Base class for package errors."""


class DataError(SignTokError):
    """Malformed or missing input data (files, records, ids)."""


class ShapeError(SignTokError):
    """Tensor/layer shape mismatch; message names the op and the shapes."""


class CheckpointError(SignTokError):
    """Checkpoint file is malformed or missing a requested component."""


class NumericalError(SignTokError):
    """A numerical verification (e.g. gradient check) failed or hit non-finite values."""
