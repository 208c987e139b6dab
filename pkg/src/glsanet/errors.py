"""Exception types shared across the package."""


class GlsaError(Exception):
    """Base class for every error raised by glsanet."""


class DimensionError(GlsaError, ValueError):
    """Operand shapes are incompatible."""


class BoundsError(GlsaError, IndexError):
    """A crop or index falls outside a tensor."""


class ContractError(GlsaError, RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class ConfigError(GlsaError, ValueError):
    """Invalid configuration (divisibility, head width, unknown keys...)."""


class DataError(GlsaError, ValueError):
    """Dataset contents are inconsistent (mixed sizes, bad labels)."""


class FormatError(GlsaError, ValueError):
    """A binary file (PPM/PGM/checkpoint) is malformed.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
