"""Append-only binary time-series archive.

Layout::

    <root>/YYYY-MM-DD/<DEVICE>/<DATA>.dat    n records, 24*n bytes, no header
    <root>/YYYY-MM-DD/<DEVICE>/<DATA>.meta   UTF-8 "key=value" sidecar

A record is three little-endian IEEE-754 float64 values.  For time series
they are (time_index, raw, calibrated); spectral data is split into a
``<DATA>_AMP`` file of (time_index, frequency_hz, amplitude) and a
``<DATA>_PHS`` file of (time_index, frequency_hz, phase_shift).

Writers hold an exclusive ``flock`` on the data file for the duration of a
batch and readers a shared one, so a reader only ever sees whole batches.
Readers also truncate to whole records, which keeps unlocked tools safe too.
"""

from __future__ import annotations

import errno
import fcntl
import fnmatch
import io
import os
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from cryodaq.errors import KeyNotFound, StorageFull, TimeRegression
from cryodaq.registry import validate_name

RECORD_DTYPE = np.dtype("<f8")
RECORD_SIZE = 24
TEXT_FORMAT = "%.17g %.17g %.17g"

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

KIND_TIMESERIES = "timeseries"
KIND_SPECTRAL_AMPLITUDE = "spectral_amplitude"
KIND_SPECTRAL_PHASE = "spectral_phase"


@dataclass(frozen=True, order=True)
class ArchiveKey:
    date: str
    device_name: str
    data_name: str

    def __post_init__(self):
        if not _DATE_RE.match(self.date):
            raise ValueError(f"date must be YYYY-MM-DD, got {self.date!r}")
        validate_name(self.device_name)
        validate_name(self.data_name)

    @property
    def full_name(self) -> str:
        return f"{self.device_name}.{self.data_name}"

    def with_data(self, data_name: str) -> ArchiveKey:
        return ArchiveKey(self.date, self.device_name, data_name)


@dataclass(frozen=True)
class Gap:
    t_from: float
    t_to: float
    count: int


@dataclass(frozen=True)
class SidecarMeta:
    device_name: str
    data_name: str
    kind: str = KIND_TIMESERIES
    units_raw: str = ""
    units_cal: str = ""
    session_start_utc: str = ""
    fast_rate_hz: float | None = None
    slow_period_s: float | None = None
    gaps: tuple[Gap, ...] = field(default=())

    def dumps(self) -> str:
        lines = [
            f"device_name={self.device_name}",
            f"data_name={self.data_name}",
            f"kind={self.kind}",
            f"units_raw={self.units_raw}",
            f"units_cal={self.units_cal}",
            f"session_start_utc={self.session_start_utc}",
        ]
        if self.fast_rate_hz is not None:
            lines.append(f"fast_rate_hz={self.fast_rate_hz!r}")
        if self.slow_period_s is not None:
            lines.append(f"slow_period_s={self.slow_period_s!r}")
        for g in self.gaps:
            lines.append(f"gap={g.t_from!r} {g.t_to!r} {g.count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> SidecarMeta:
        kw: dict = {}
        gaps = []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad sidecar line {line!r}")
            if key == "gap":
                a, b, n = value.split()
                gaps.append(Gap(float(a), float(b), int(n)))
            elif key in ("fast_rate_hz", "slow_period_s"):
                kw[key] = float(value)
            elif key in cls.__dataclass_fields__:
                kw[key] = value
            else:
                raise ValueError(f"unknown sidecar key {key!r}")
        return cls(gaps=tuple(gaps), **kw)


def format_records(records: np.ndarray) -> str:
    """Text rendering shared by every tool: 17 significant digits, LF lines."""
    rows = np.asarray(records, dtype=np.float64).reshape(-1, 3)
    return "".join((TEXT_FORMAT % (a, b, c)) + "\n" for a, b, c in rows.tolist())


def parse_text(text: str) -> np.ndarray:
    rows = [tuple(float(x) for x in line.split()) for line in text.splitlines() if line.strip()]
    if any(len(r) != 3 for r in rows):
        raise ValueError("text records must have exactly three fields")
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _as_records(records) -> np.ndarray:
    arr = np.ascontiguousarray(records, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"records must have shape (n, 3), got {arr.shape}")
    return arr


@contextmanager
def _locked(fd: int, mode: int):
    fcntl.flock(fd, mode)
    try:
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)


class Archive:
    """Filesystem archive rooted at ``root``.

    One writer per key; any number of concurrent readers.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._last_time: dict[ArchiveKey, float] = {}
        self._meta: dict[ArchiveKey, SidecarMeta] = {}
        self._lock = threading.Lock()

    def data_path(self, key: ArchiveKey) -> Path:
        return self.root / key.date / key.device_name / f"{key.data_name}.dat"

    def meta_path(self, key: ArchiveKey) -> Path:
        return self.root / key.date / key.device_name / f"{key.data_name}.meta"

    def exists(self, key: ArchiveKey) -> bool:
        return self.data_path(key).exists()

    # -- writing ---------------------------------------------------------

    def _write_meta(self, key: ArchiveKey, meta: SidecarMeta) -> None:
        path = self.meta_path(key)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(meta.dumps(), encoding="utf-8")
        os.replace(tmp, path)
        self._meta[key] = meta

    def _ensure(self, key: ArchiveKey, meta: SidecarMeta | None) -> None:
        if key in self._meta:
            return
        path = self.data_path(key)
        if path.exists():
            self._meta[key] = self.read_meta(key)
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        if meta is None:
            meta = SidecarMeta(key.device_name, key.data_name)
        path.touch()
        self._write_meta(key, meta)

    def _last_written(self, key: ArchiveKey, fd: int) -> float:
        if key not in self._last_time:
            size = os.fstat(fd).st_size // RECORD_SIZE * RECORD_SIZE
            if size:
                last = os.pread(fd, RECORD_SIZE, size - RECORD_SIZE)
                self._last_time[key] = float(np.frombuffer(last, RECORD_DTYPE)[0])
            else:
                self._last_time[key] = -np.inf
        return self._last_time[key]

    def append(self, key: ArchiveKey, records, meta: SidecarMeta | None = None) -> int:
        """Append a batch atomically; returns the number of records written.

        Raises TimeRegression (file unchanged) if the batch starts before the
        last stored time index or is not itself time-ordered.
        """
        arr = _as_records(records)
        if len(arr) == 0:
            return 0
        t = arr[:, 0]
        if len(t) > 1 and np.any(t[1:] < t[:-1]):
            raise TimeRegression(f"{key.full_name}: batch time index not nondecreasing")
        with self._lock:
            self._ensure(key, meta)
        payload = arr.astype(RECORD_DTYPE, copy=False).tobytes()
        fd = os.open(self.data_path(key), os.O_RDWR | os.O_APPEND)
        try:
            with _locked(fd, fcntl.LOCK_EX):
                last = self._last_written(key, fd)
                if t[0] < last:
                    raise TimeRegression(
                        f"{key.full_name}: batch starts at {t[0]!r} before last stored {last!r}")
                size = os.fstat(fd).st_size
                try:
                    view = memoryview(payload)
                    while view:
                        n = os.write(fd, view)
                        view = view[n:]
                except OSError as exc:
                    os.ftruncate(fd, size)
                    if exc.errno in (errno.ENOSPC, errno.EDQUOT):
                        raise StorageFull(str(exc)) from exc
                    raise
                self._last_time[key] = float(t[-1])
        finally:
            os.close(fd)
        return len(arr)

    def mark_gap(self, key: ArchiveKey, gap: Gap, meta: SidecarMeta | None = None) -> None:
        """Record records that were generated but never stored."""
        with self._lock:
            self._ensure(key, meta)
            cur = self._meta[key]
            self._write_meta(key, replace(cur, gaps=cur.gaps + (gap,)))

    def write_spectral(self, key_base: ArchiveKey, frames: Sequence[tuple[float, float, float, float]],
                       meta: SidecarMeta | None = None) -> tuple[ArchiveKey, ArchiveKey]:
        """Split (time, freq, amplitude, phase) frames into _AMP and _PHS files."""
        arr = np.asarray(frames, dtype=np.float64).reshape(-1, 4)
        amp_key = key_base.with_data(key_base.data_name + "_AMP")
        phs_key = key_base.with_data(key_base.data_name + "_PHS")
        base = meta or SidecarMeta(key_base.device_name, key_base.data_name)
        amp_meta = replace(base, data_name=amp_key.data_name, kind=KIND_SPECTRAL_AMPLITUDE)
        phs_meta = replace(base, data_name=phs_key.data_name, kind=KIND_SPECTRAL_PHASE)
        self.append(amp_key, arr[:, [0, 1, 2]], amp_meta)
        self.append(phs_key, arr[:, [0, 1, 3]], phs_meta)
        return amp_key, phs_key

    # -- reading ---------------------------------------------------------

    def read_meta(self, key: ArchiveKey) -> SidecarMeta:
        try:
            return SidecarMeta.loads(self.meta_path(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise KeyNotFound(f"no archive entry {key.date}/{key.full_name}") from None

    def _open_read(self, key: ArchiveKey) -> int:
        try:
            return os.open(self.data_path(key), os.O_RDONLY)
        except FileNotFoundError:
            raise KeyNotFound(f"no archive entry {key.date}/{key.full_name}") from None

    def committed_size(self, key: ArchiveKey) -> int:
        """Byte length of the data file as seen by a reader."""
        fd = self._open_read(key)
        try:
            with _locked(fd, fcntl.LOCK_SH):
                return os.fstat(fd).st_size
        finally:
            os.close(fd)

    def _snapshot(self, key: ArchiveKey) -> np.ndarray:
        """Memory-map every complete record as an (n, 3) array."""
        fd = self._open_read(key)
        try:
            with _locked(fd, fcntl.LOCK_SH):
                n = os.fstat(fd).st_size // RECORD_SIZE
                if n == 0:
                    return np.empty((0, 3), dtype=np.float64)
                mm = np.memmap(self.data_path(key), dtype=RECORD_DTYPE, mode="r", shape=(n, 3))
        finally:
            os.close(fd)
        return mm

    def read_all(self, key: ArchiveKey) -> np.ndarray:
        return np.array(self._snapshot(key))

    def query(self, key: ArchiveKey, t_from: float, t_to: float) -> np.ndarray:
        """Records with ``t_from <= time_index <= t_to`` (binary search)."""
        if t_from > t_to:
            raise ValueError("t_from must be <= t_to")
        lo, hi, data = self._range(key, t_from, t_to)
        return np.array(data[lo:hi])

    def _range(self, key: ArchiveKey, t_from: float, t_to: float):
        data = self._snapshot(key)
        times = data[:, 0]
        lo = int(np.searchsorted(times, t_from, side="left"))
        hi = int(np.searchsorted(times, t_to, side="right"))
        return lo, max(lo, hi), data

    def tail(self, key: ArchiveKey, after_time: float) -> np.ndarray:
        """Records with ``time_index > after_time`` written so far."""
        data = self._snapshot(key)
        lo = int(np.searchsorted(data[:, 0], after_time, side="right"))
        return np.array(data[lo:])

    def export(self, key: ArchiveKey, t_from: float = -np.inf, t_to: float = np.inf,
               fmt: str = "binary") -> bytes:
        """Selected records as exact on-disk bytes or as text lines."""
        records = self.query(key, t_from, t_to)
        if fmt == "binary":
            return records.astype(RECORD_DTYPE, copy=False).tobytes()
        if fmt == "text":
            return format_records(records).encode("ascii")
        raise ValueError(f"unknown export format {fmt!r}")

    def list_keys(self, date_filter: str | None = None, name_filter: str | None = None) -> list[ArchiveKey]:
        """Keys under the root, sorted.  Filters are glob patterns matched
        against the date and against ``DEVICE.DATA``."""
        keys = []
        if not self.root.is_dir():
            return keys
        for date_dir in self.root.iterdir():
            if not (date_dir.is_dir() and _DATE_RE.match(date_dir.name)):
                continue
            if date_filter and not fnmatch.fnmatchcase(date_dir.name, date_filter):
                continue
            for dev_dir in date_dir.iterdir():
                if not dev_dir.is_dir():
                    continue
                for f in dev_dir.glob("*.dat"):
                    key = ArchiveKey(date_dir.name, dev_dir.name, f.name[:-4])
                    if name_filter and not fnmatch.fnmatchcase(key.full_name, name_filter):
                        continue
                    keys.append(key)
        return sorted(keys)

    def iter_records(self, key: ArchiveKey) -> Iterator[tuple[float, float, float]]:
        yield from map(tuple, self.read_all(key).tolist())


def read_binary(stream: bytes | io.BufferedIOBase) -> np.ndarray:
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    usable = len(data) // RECORD_SIZE * RECORD_SIZE
    return np.frombuffer(data[:usable], dtype=RECORD_DTYPE).reshape(-1, 3).copy()
