"""In-process table of current channel values.

One writer (the acquisition engine) and many readers.  Values are stored as
immutable tuples and replaced whole under a lock, so a reader never sees a
torn triple.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable

from cryodaq.errors import NotFound, ReadOnly
from cryodaq.registry import Registry, Sample

Listener = Callable[[str, Sample, bool], None]

NAN_SAMPLE = Sample(math.nan, math.nan, math.nan)

SYSTEM_CHANNELS = ("DAQ.STATUS",)


class LiveTable:
    def __init__(self, registry: Registry | None = None, writable: Iterable[str] = ()):
        self._values: dict[str, Sample] = {}
        self._writable: set[str] = set(writable)
        self._listeners: list[Listener] = []
        self._lock = threading.Lock()
        for name in SYSTEM_CHANNELS:
            self._values[name] = NAN_SAMPLE
        if registry is not None:
            for desc in registry:
                self._values[desc.full_name] = NAN_SAMPLE
                if desc.writable:
                    self._writable.add(desc.full_name)

    def declare(self, name: str, writable: bool = False, initial: Sample = NAN_SAMPLE) -> None:
        with self._lock:
            self._values.setdefault(name, Sample(*initial))
            if writable:
                self._writable.add(name)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._values)

    def read(self, name: str) -> Sample:
        with self._lock:
            try:
                return self._values[name]
            except KeyError:
                raise NotFound(f"no channel {name}") from None

    def is_writable(self, name: str) -> bool:
        return name in self._writable

    def set(self, name: str, sample: Sample) -> None:
        """Update without notifying subscribers (status channels)."""
        with self._lock:
            self._values[name] = Sample(*sample)

    def put(self, name: str, sample: Sample) -> Sample:
        """Wire write: only setpoint channels accept values."""
        with self._lock:
            if name not in self._values:
                raise NotFound(f"no channel {name}")
            if name not in self._writable:
                raise ReadOnly(f"channel {name} is read-only")
            self._values[name] = Sample(*sample)
            return self._values[name]

    def publish(self, name: str, sample: Sample, urgent: bool = False) -> None:
        """Update and fan out to listeners.  ``urgent`` events are never dropped."""
        sample = Sample(*sample)
        with self._lock:
            self._values[name] = sample
            listeners = list(self._listeners)
        for fn in listeners:
            fn(name, sample, urgent)

    def add_listener(self, fn: Listener) -> None:
        with self._lock:
            self._listeners.append(fn)

    def remove_listener(self, fn: Listener) -> None:
        with self._lock:
            if fn in self._listeners:
                self._listeners.remove(fn)
