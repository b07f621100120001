"""Dual-rate data acquisition, quench protection and archival for a
simulated superconducting-magnet test facility."""

from cryodaq.errors import (
    ArchiveError,
    ConfigInvalid,
    CryoDAQError,
    DuplicateName,
    InvalidName,
    IsolationBreach,
    KeyNotFound,
    NotFound,
    ProtocolError,
    ReadOnly,
    StorageFull,
    TimeRegression,
)
from cryodaq.registry import (
    CalibrationTable,
    ChannelDescriptor,
    ChannelKind,
    Registry,
    Sample,
    calibrate,
)

__version__ = "0.1.0"

__all__ = [
    "ArchiveError",
    "CalibrationTable",
    "ChannelDescriptor",
    "ChannelKind",
    "ConfigInvalid",
    "CryoDAQError",
    "DuplicateName",
    "InvalidName",
    "IsolationBreach",
    "KeyNotFound",
    "NotFound",
    "ProtocolError",
    "ReadOnly",
    "Registry",
    "Sample",
    "StorageFull",
    "TimeRegression",
    "calibrate",
]
