"""Exception types shared across the package."""


class DaqError(Exception):
    """Base class for all mhdaq errors."""


# signal / analysis
class NonConvergence(DaqError):
    pass


class DegenerateFit(DaqError):
    pass


class Unreachable(DaqError):
    pass


# timestamps
class Unsynchronized(DaqError):
    pass


class NonMonotonicSync(DaqError):
    pass


# front-end
class PeriodMismatch(DaqError):
    pass


class DataOverwritten(DaqError):
    pass


class UnknownPort(DaqError, KeyError):
    pass


class FutureTrigger(DaqError):
    pass


class NonMonotonicTrigger(DaqError):
    pass


# wire / storage
class DecodeError(DaqError):
    pass


class TruncatedRecord(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class ProtocolVersionError(DecodeError):
    pass


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class SpillIOFailure(DaqError):
    pass


class UnsortedInput(DaqError):
    pass


class ClockSkewWarning(UserWarning):
    pass


# event building
class DuplicateFragment(DaqError):
    pass


class ForeignSource(DaqError):
    pass


class NonMonotonicTime(DaqError):
    pass


# harness
class ConfigInvalid(DaqError, ValueError):
    pass


class ArgInvalid(DaqError, ValueError):
    pass
