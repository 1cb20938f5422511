"""Exception classes shared across the package.

Each error class maps to one CLI exit-code family: bad user input,
failed validation of otherwise well-formed data, or runtime failure.
"""


class MpiJpegError(Exception):
    """Base class for all package errors."""


class ShapeError(MpiJpegError):
    """Tensor/image dimensions violate an operation's contract."""


class GeometryError(MpiJpegError):
    """Degenerate camera geometry (non-invertible homography, bad pose)."""


class JpegParseError(MpiJpegError):
    """Malformed JPEG byte stream.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(MpiJpegError):
    """MPI manifest file is missing, malformed, or inconsistent."""


class DatasetError(MpiJpegError):
    """Dataset root cannot provide any usable training scene."""


class CheckpointError(MpiJpegError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""
