from typing import Optional, Sequence, Tuple


class VolsegError(Exception):
    """Base class for all the volseg exceptions"""

    pass


class ShapeError(VolsegError, ValueError):
    """Tensor shapes are incompatible with the requested operation.

    The message lists every shape involved.
    """

    shapes: Tuple[Tuple[int, ...], ...]

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class TapeError(VolsegError):
    """The differentiation tape was used incorrectly.

    Raised for a non-scalar loss, a second backward on a consumed tape or
    dtype mixing on a single tape.
    """


class NonDeterministicError(VolsegError):
    """Two forward passes of the same function disagreed."""


class NonFiniteError(VolsegError, FloatingPointError):
    """A NaN or infinite value appeared in a gradient or a loss.

    ``name`` is the offending parameter name for gradients,
    ``epoch`` is set when the training loss diverged.
    """

    name: Optional[str]
    epoch: Optional[int]

    def __init__(
        self, message: str, name: Optional[str] = None, epoch: Optional[int] = None
    ):
        super().__init__(message)
        self.name = name
        self.epoch = epoch


class EmptySurfaceError(VolsegError):
    """A surface distance was requested for an empty surface point set.

    The distance is undefined; callers decide which sentinel to report.
    """


class VolumeFormatError(VolsegError):
    """Base class for the errors reading a volume file."""


class TruncatedVolumeError(VolumeFormatError):
    """The file ended before the end of the header."""


class BadMagicError(VolumeFormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(VolumeFormatError):
    """The file was written with an unknown format version."""


class LengthMismatchError(VolumeFormatError):
    """The payload length does not match the size declared in the header."""


class CheckpointError(VolsegError):
    """A checkpoint container is malformed or does not match the model."""


class ConfigError(VolsegError, ValueError):
    """Invalid run configuration.

    ``lineno`` is the 1-based line of the configuration file, if any.
    """

    lineno: Optional[int]

    def __init__(self, message: str, lineno: Optional[int] = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class LabelError(VolsegError, ValueError):
    """A label volume holds values outside [0, num_classes) or is empty."""
