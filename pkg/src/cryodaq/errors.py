"""Exception hierarchy shared by every cryodaq module."""


class CryoDAQError(Exception):
    """Base class for all cryodaq errors."""


class InvalidName(CryoDAQError, ValueError):
    pass


class DuplicateName(CryoDAQError):
    pass


class NotFound(CryoDAQError, LookupError):
    """Unknown channel, either in the registry or on the wire."""


class RegistryFrozen(CryoDAQError):
    pass


class CalibrationError(CryoDAQError, ValueError):
    pass


class IsolationBreach(CryoDAQError):
    """Input exceeded the amplifier isolation limit; the channel is faulted."""

    def __init__(self, volts, limit):
        super().__init__(f"|{volts!r}| V exceeds isolation limit {limit!r} V")
        self.volts = volts
        self.limit = limit


class ConfigInvalid(CryoDAQError, ValueError):
    pass


class ArchiveError(CryoDAQError):
    pass


class TimeRegression(ArchiveError):
    pass


class StorageFull(ArchiveError):
    pass


class KeyNotFound(ArchiveError, LookupError):
    pass


class ProtocolError(CryoDAQError):
    pass


class ReadOnly(CryoDAQError):
    pass


class ConnectionClosed(CryoDAQError, ConnectionError):
    """The peer went away; distinct from a NotFound reply."""


class Timeout(CryoDAQError, TimeoutError):
    pass
