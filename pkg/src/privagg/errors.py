"""Exception hierarchy shared by all layers."""


class PrivaggError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PrivaggError):
    pass


class ZeroInverse(PrivaggError, ZeroDivisionError):
    pass


class DuplicateDomainPoint(PrivaggError, ValueError):
    pass


class LengthMismatch(PrivaggError, ValueError):
    pass


class ArityMismatch(LengthMismatch):
    pass


class TooFewServers(PrivaggError, ValueError):
    pass


class MissingShare(PrivaggError):
    pass


class InvalidInput(PrivaggError):
    """The client refuses to prove a statement that is false."""


class RotationExhausted(PrivaggError):
    pass


class DomainError(PrivaggError, ValueError):
    pass


class DecodeError(PrivaggError):
    pass


class OverflowRisk(DecodeError):
    pass


class NoMajority(DecodeError):
    pass


class BadTripleProof(PrivaggError):
    pass


class MissingRound(PrivaggError):
    pass


class BatchTooSmall(PrivaggError):
    pass


class CountMismatch(PrivaggError):
    pass


class MalformedShare(PrivaggError):
    pass


class WireError(PrivaggError):
    pass


class Truncated(WireError):
    pass


class UnknownType(WireError):
    pass


class LengthOverflow(WireError):
    pass


class BadMac(WireError):
    pass


class ChannelTimeout(PrivaggError, TimeoutError):
    pass


class ConnectionClosed(PrivaggError, ConnectionError):
    pass


class SnapshotCorrupt(PrivaggError):
    pass
