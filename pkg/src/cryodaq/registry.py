"""Channel identity, metadata and calibration.

Every other module resolves channels through a :class:`Registry`.  Names are
case-sensitive ASCII without whitespace or ``/`` because they become path
components in the archive.
"""

from __future__ import annotations

import bisect
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from cryodaq.condition import AmplifierConfig
from cryodaq.errors import (
    CalibrationError,
    DuplicateName,
    InvalidName,
    NotFound,
    RegistryFrozen,
)

_NAME_RE = re.compile(r"^[\x21-\x7e]+$")


def validate_name(name: str) -> str:
    if not isinstance(name, str) or not name:
        raise InvalidName(f"empty or non-string name: {name!r}")
    if not _NAME_RE.match(name) or "/" in name:
        raise InvalidName(f"name must be printable ASCII without whitespace or '/': {name!r}")
    if name in (".", ".."):
        raise InvalidName(f"reserved name: {name!r}")
    return name


class ChannelKind(enum.Enum):
    FAST = "fast"
    SLOW = "slow"
    SPECTRAL = "spectral"


class CalibrationMode(enum.Enum):
    IDENTITY = "identity"
    PIECEWISE_LINEAR = "piecewise_linear"


class Sample(NamedTuple):
    """One archived record: time index [s], raw value, calibrated value."""

    time_index: float
    raw: float
    calibrated: float


@dataclass(frozen=True)
class CalibrationTable:
    """Monotone piecewise-linear raw to physical map, or the identity."""

    mode: CalibrationMode = CalibrationMode.IDENTITY
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.mode is CalibrationMode.IDENTITY:
            return
        bps = tuple((float(r), float(p)) for r, p in self.breakpoints)
        if len(bps) < 2:
            raise CalibrationError("piecewise-linear table needs at least 2 breakpoints")
        raws = [r for r, _ in bps]
        if any(not (b > a) for a, b in zip(raws, raws[1:])):
            raise CalibrationError("breakpoint raw values must be strictly increasing")
        if not all(np.isfinite(bps).ravel()):
            raise CalibrationError("breakpoints must be finite")
        object.__setattr__(self, "breakpoints", bps)

    @classmethod
    def identity(cls) -> CalibrationTable:
        return cls(CalibrationMode.IDENTITY)

    @classmethod
    def piecewise(cls, breakpoints: Sequence[tuple[float, float]]) -> CalibrationTable:
        return cls(CalibrationMode.PIECEWISE_LINEAR, tuple(breakpoints))

    @classmethod
    def from_file(cls, path: str | Path) -> CalibrationTable:
        """Load a two-column ``raw physical`` text file (``#`` comments allowed)."""
        pairs = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CalibrationError(f"{path}:{lineno}: expected 'raw physical'")
            try:
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise CalibrationError(f"{path}:{lineno}: not a number") from None
        return cls.piecewise(pairs)

    @property
    def is_identity(self) -> bool:
        return self.mode is CalibrationMode.IDENTITY

    @property
    def raw_points(self) -> np.ndarray:
        return np.array([r for r, _ in self.breakpoints], dtype=np.float64)

    @property
    def physical_points(self) -> np.ndarray:
        return np.array([p for _, p in self.breakpoints], dtype=np.float64)

    def __call__(self, raw):
        if np.ndim(raw) == 0:
            return calibrate(self, float(raw))
        return calibrate_array(self, raw)


def calibrate(table: CalibrationTable, raw: float) -> float:
    """Map a raw reading to physical units.

    Identity returns ``raw`` unchanged.  A piecewise-linear table interpolates
    between the bracketing breakpoints and clamps to the endpoint physical
    values outside the table.
    """
    if table.mode is CalibrationMode.IDENTITY:
        return raw
    if raw != raw:
        return raw
    bps = table.breakpoints
    if raw <= bps[0][0]:
        return bps[0][1]
    if raw >= bps[-1][0]:
        return bps[-1][1]
    i = bisect.bisect_right([r for r, _ in bps], raw) - 1
    r0, p0 = bps[i]
    r1, p1 = bps[i + 1]
    return p0 + (raw - r0) * (p1 - p0) / (r1 - r0)


def calibrate_array(table: CalibrationTable, raw) -> np.ndarray:
    """Vectorised :func:`calibrate`; bit-identical element by element."""
    x = np.asarray(raw, dtype=np.float64)
    if table.mode is CalibrationMode.IDENTITY:
        return x.copy()
    r = table.raw_points
    p = table.physical_points
    i = np.clip(np.searchsorted(r, x, side="right") - 1, 0, len(r) - 2)
    r0, r1, p0, p1 = r[i], r[i + 1], p[i], p[i + 1]
    with np.errstate(invalid="ignore"):
        y = p0 + (x - r0) * (p1 - p0) / (r1 - r0)
        y = np.where(x <= r[0], p[0], y)
        y = np.where(x >= r[-1], p[-1], y)
    return y


def invert_calibration(table: CalibrationTable, physical):
    """Raw reading that calibrates to ``physical`` (table must be monotone)."""
    if table.is_identity:
        return physical
    r = table.raw_points
    p = table.physical_points
    if np.all(np.diff(p) > 0):
        return np.interp(physical, p, r)
    if np.all(np.diff(p) < 0):
        return np.interp(physical, p[::-1], r[::-1])
    raise CalibrationError("cannot invert a non-monotone calibration table")


@dataclass(frozen=True)
class ChannelDescriptor:
    device_name: str
    data_name: str
    kind: ChannelKind = ChannelKind.SLOW
    units_raw: str = "V"
    units_cal: str = "V"
    calibration: CalibrationTable = field(default_factory=CalibrationTable.identity)
    amplifier: AmplifierConfig | None = None
    writable: bool = False

    def __post_init__(self):
        validate_name(self.device_name)
        validate_name(self.data_name)
        if "." in self.device_name:
            # "DEVICE.DATA" wire names split on the first dot
            raise InvalidName(f"device name may not contain '.': {self.device_name!r}")
        if not isinstance(self.kind, ChannelKind):
            object.__setattr__(self, "kind", ChannelKind(self.kind))

    @property
    def full_name(self) -> str:
        return f"{self.device_name}.{self.data_name}"


def split_full_name(name: str) -> tuple[str, str]:
    device, sep, data = name.partition(".")
    if not sep:
        raise InvalidName(f"expected DEVICE.DATA, got {name!r}")
    return validate_name(device), validate_name(data)


class Registry:
    """Channel registry.  Ids are dense and assigned in registration order.

    Registration happens single-threaded at startup; after :meth:`freeze` the
    registry is read-only and safe to share between threads.
    """

    def __init__(self):
        self._channels: list[ChannelDescriptor] = []
        self._by_name: dict[tuple[str, str], int] = {}
        self._frozen = False

    def register(self, desc: ChannelDescriptor) -> int:
        if self._frozen:
            raise RegistryFrozen("registry is frozen")
        key = (desc.device_name, desc.data_name)
        if key in self._by_name:
            raise DuplicateName(f"channel {desc.full_name} already registered")
        cid = len(self._channels)
        self._channels.append(desc)
        self._by_name[key] = cid
        return cid

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def lookup(self, device_name: str, data_name: str) -> ChannelDescriptor:
        return self._channels[self.channel_id(device_name, data_name)]

    def channel_id(self, device_name: str, data_name: str) -> int:
        try:
            return self._by_name[(device_name, data_name)]
        except KeyError:
            raise NotFound(f"no channel {device_name}.{data_name}") from None

    def resolve(self, full_name: str) -> int:
        device, _, data = full_name.partition(".")
        return self.channel_id(device, data)

    def __getitem__(self, cid: int) -> ChannelDescriptor:
        if not 0 <= cid < len(self._channels):
            raise NotFound(f"no channel id {cid}")
        return self._channels[cid]

    def __len__(self) -> int:
        return len(self._channels)

    def __iter__(self) -> Iterator[ChannelDescriptor]:
        return iter(self._channels)

    def __contains__(self, full_name: str) -> bool:
        device, _, data = full_name.partition(".")
        return (device, data) in self._by_name
