"""Exception hierarchy shared by every codec, scheme and the container."""
from __future__ import annotations

from typing import Any


class LocalCodingError(Exception):
    """Base class for all errors raised by the toolkit."""


class OutOfRange(LocalCodingError, IndexError):
    """A bit window or message position lies outside its buffer."""


class IndexOutOfRange(LocalCodingError, IndexError):
    """An enumerative index is outside [0, count)."""


class NotTypical(LocalCodingError, ValueError):
    """A sequence was ranked against a typical set it does not belong to."""


class DensityTooHigh(LocalCodingError, ValueError):
    """A rank dictionary was asked to hold more ones than its density allows."""


class TooManyResiduals(LocalCodingError, ValueError):
    """A group has more non-diamond sub-blocks than its payload has slots."""


class PlanInfeasible(LocalCodingError, ValueError):
    """The requested parameters cannot produce a valid coding plan."""


class CorruptCodeword(LocalCodingError):
    """A codeword is inconsistent with the plan it is decoded under."""


class MalformedStream(CorruptCodeword):
    """An LZ78 phrase stream ended early or referenced an unknown phrase."""


class BlockErrored(LocalCodingError):
    """The addressed block carries the in-band error mark."""


class EncodingIncomplete(LocalCodingError):
    """The fixed-length encoder could not absorb the whole message.

    This is the scheme's error event. It is raised as a value carrier: the
    zero-error wrapper catches it and falls back to raw storage.
    """

    def __init__(self, message: str, partial: Any = None, position: int | None = None) -> None:
        super().__init__(message)
        self.partial = partial
        self.position = position


class ContainerFormatError(LocalCodingError):
    """The container bytes cannot be parsed."""


class BadMagic(ContainerFormatError):
    pass


class BadVersion(ContainerFormatError):
    pass


class TruncatedFile(ContainerFormatError):
    pass
