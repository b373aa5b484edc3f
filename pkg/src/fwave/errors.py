"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class FWaveError(ValueError):
    """Base class for every error raised by the package."""


# record validation
class NonFiniteSample(FWaveError):
    pass


class EmptyRecord(FWaveError):
    pass


class BadSamplingRate(FWaveError):
    pass


class RecordTooShort(FWaveError):
    pass


class RecordTooShortForFilter(FWaveError):
    pass


# ventricular cancellation
class NoBeatsFound(FWaveError):
    pass


class InsufficientBeats(FWaveError):
    pass


class WindowOutOfBounds(FWaveError):
    pass


# spectral analysis
class SegmentTooShort(FWaveError):
    pass


class EmptyBand(FWaveError):
    pass


class AllZeroBand(FWaveError):
    pass


class BadAlpha(FWaveError):
    pass


class NonPositivePower(FWaveError):
    pass


class HarmonicOutOfRange(FWaveError):
    pass


# cohort statistics
class EmptyList(FWaveError):
    pass


class SampleTooSmall(FWaveError):
    pass


# learning
class SingularCovariance(FWaveError):
    pass


class ClassMissing(FWaveError):
    pass


class DimensionMismatch(FWaveError):
    pass


class OneClassOnly(FWaveError):
    pass


class FoldWithoutBothClasses(FWaveError):
    pass


class LengthMismatch(FWaveError):
    pass


# synthesis
class BadParams(FWaveError):
    pass


# file input
class InputFormatError(FWaveError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}" if path is not None else ""
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
