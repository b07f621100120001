"""Dual-rate acquisition engine.

The fast loop samples every fast channel at ``fast_rate_hz``, conditions and
calibrates the block, hands it synchronously to the quench detector and then
offers it to a bounded archive queue.  A full queue never blocks the fast
loop: the block is dropped and a gap marker is written to the channel's
sidecar instead.  Quench triggers bypass the capacity limit.

The slow loop scans slow channels every ``slow_period_s``, archives each
sample and publishes it to the live table.  Both loops run in their own
thread; a third thread drains the archive queue.
"""

from __future__ import annotations

import collections
import enum
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Protocol, Sequence

import numpy as np

from cryodaq import quench
from cryodaq.archive import Archive, ArchiveKey, Gap, SidecarMeta
from cryodaq.condition import condition_block, condition_step
from cryodaq.errors import ArchiveError, ConfigInvalid, IsolationBreach
from cryodaq.quench import DetectorConfig, QuenchTrigger
from cryodaq.registry import ChannelKind, Registry, Sample, calibrate, calibrate_array

log = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 1 << 22  # records (96 MiB of payload)


class TimeMode(enum.Enum):
    REALTIME = "realtime"
    FASTER_THAN_REALTIME = "faster_than_realtime"


class SessionStatus(enum.Enum):
    RUNNING = 0
    COMPLETED = 1
    FAULTED = 2


def session_clock(k: int, rate_hz: float) -> float:
    """Time index of fast sample ``k``; the only clock on the fast path."""
    return k / rate_hz


def _count(duration: float, step_rate: float) -> int:
    """Samples in the closed interval [0, duration]."""
    return math.floor(round(duration * step_rate, 6)) + 1


def format_utc(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass
class AcquisitionConfig:
    fast_rate_hz: float = 100000.0
    fast_channels: Sequence[int] = ()
    slow_period_s: float = 1.0
    slow_channels: Sequence[int] = ()
    session_start_utc: datetime = field(
        default_factory=lambda: datetime(2000, 1, 1, tzinfo=timezone.utc))
    duration_s: float = 1.0
    archive_queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    realtime: bool = False
    max_fast_channels: int = 64
    block_size: int = 16384

    def validate(self, registry: Registry) -> None:
        if not self.fast_rate_hz > 0:
            raise ConfigInvalid("fast_rate_hz must be > 0")
        if not self.slow_period_s > 0:
            raise ConfigInvalid("slow_period_s must be > 0")
        if not self.duration_s >= 0:
            raise ConfigInvalid("duration_s must be >= 0")
        if self.archive_queue_capacity < 1 or self.block_size < 1:
            raise ConfigInvalid("queue capacity and block size must be >= 1")
        fast, slow = list(self.fast_channels), list(self.slow_channels)
        if len(set(fast)) != len(fast) or len(set(slow)) != len(slow):
            raise ConfigInvalid("duplicate channel in acquisition list")
        if set(fast) & set(slow):
            raise ConfigInvalid("fast and slow channel lists overlap")
        if len(fast) > self.max_fast_channels:
            raise ConfigInvalid(f"{len(fast)} fast channels exceeds limit {self.max_fast_channels}")
        for cid in fast:
            desc = registry[cid]
            if desc.kind is not ChannelKind.FAST:
                raise ConfigInvalid(f"{desc.full_name} is not a fast channel")
            if desc.amplifier is None:
                raise ConfigInvalid(f"fast channel {desc.full_name} has no conditioning chain")
        for cid in slow:
            desc = registry[cid]
            if desc.kind is ChannelKind.FAST:
                raise ConfigInvalid(f"{desc.full_name} is a fast channel in the slow list")
            if desc.writable:
                raise ConfigInvalid(f"setpoint {desc.full_name} cannot be scanned")

    @property
    def session_id(self) -> str:
        return self.session_start_utc.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%SZ")

    @property
    def date(self) -> str:
        return self.session_start_utc.astimezone(timezone.utc).strftime("%Y-%m-%d")


def simulated_time_mode(cfg: AcquisitionConfig) -> TimeMode:
    return TimeMode.REALTIME if cfg.realtime else TimeMode.FASTER_THAN_REALTIME


@dataclass
class SessionHandle:
    session_id: str
    status: SessionStatus = SessionStatus.RUNNING
    gap_count: dict[int, int] = field(default_factory=dict)
    gapped_samples: dict[int, int] = field(default_factory=dict)
    generated: dict[int, int] = field(default_factory=dict)
    archived: dict[int, int] = field(default_factory=dict)
    detected: dict[int, int] = field(default_factory=dict)
    faulted: set[int] = field(default_factory=set)
    triggers: list[QuenchTrigger] = field(default_factory=list)
    error: BaseException | None = None
    detector_seconds: float = 0.0
    archive_seconds: float = 0.0
    archive_bytes: int = 0
    wall_seconds: float = 0.0

    @property
    def total_gaps(self) -> int:
        return sum(self.gap_count.values())


class Publisher(Protocol):
    def publish(self, name: str, sample: Sample, urgent: bool = False) -> None: ...

    def set(self, name: str, sample: Sample) -> None: ...


class NullPublisher:
    def publish(self, name, sample, urgent=False):
        pass

    def set(self, name, sample):
        pass


class ArchiveQueue:
    """Bounded FIFO measured in records.  ``offer`` never blocks."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: collections.deque = collections.deque()
        self._queued = 0
        self._cond = threading.Condition()

    def offer(self, item, n_records: int, force: bool = False) -> bool:
        with self._cond:
            if not force and self._queued + n_records > self.capacity:
                return False
            self._items.append((item, n_records))
            self._queued += n_records
            self._cond.notify()
            return True

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            item, n = self._items.popleft()
            self._queued -= n
            return item

    @property
    def queued(self) -> int:
        return self._queued


_CLOSE = object()


class ArchiveWriter(threading.Thread):
    def __init__(self, archive: Archive, queue: ArchiveQueue, handle: SessionHandle):
        super().__init__(name="archive-writer", daemon=True)
        self.archive = archive
        self.queue = queue
        self.handle = handle
        self._lock = threading.Lock()

    def run(self):
        while True:
            item = self.queue.get()
            if item is _CLOSE:
                return
            if self.handle.error is not None:
                continue
            op, cid, key, meta, payload = item
            t0 = time.perf_counter()
            try:
                if op == "append":
                    n = self.archive.append(key, payload, meta)
                    self.handle.archive_bytes += 24 * n
                    if cid is not None:
                        self.handle.archived[cid] = self.handle.archived.get(cid, 0) + n
                elif op == "spectral":
                    self.archive.write_spectral(key, payload, meta)
                    self.handle.archive_bytes += 48 * len(payload)
                elif op == "gap":
                    self.archive.mark_gap(key, payload, meta)
            except (ArchiveError, OSError) as exc:
                log.error("archive write failed for %s: %s", key.full_name, exc)
                self.handle.error = exc
            self.handle.archive_seconds += time.perf_counter() - t0


class AcquisitionEngine:
    def __init__(self, registry: Registry, cfg: AcquisitionConfig, sources: Mapping[int, object],
                 detector: DetectorConfig, archive: Archive, publisher: Publisher | None = None):
        cfg.validate(registry)
        for cid in list(cfg.fast_channels) + list(cfg.slow_channels):
            if cid not in sources:
                raise ConfigInvalid(f"no source for channel {registry[cid].full_name}")
        self.registry = registry
        self.cfg = cfg
        self.sources = sources
        self.detector = detector
        self.archive = archive
        self.publisher = publisher or NullPublisher()
        self.handle = SessionHandle(cfg.session_id)
        self.queue = ArchiveQueue(cfg.archive_queue_capacity)
        self._stop = threading.Event()
        self._wall0 = 0.0
        start = format_utc(cfg.session_start_utc)
        self._keys: dict[int, ArchiveKey] = {}
        self._meta: dict[int, SidecarMeta] = {}
        for cid in cfg.fast_channels:
            self._add_key(cid, start, fast_rate_hz=cfg.fast_rate_hz)
        for cid in cfg.slow_channels:
            self._add_key(cid, start, slow_period_s=cfg.slow_period_s)
        self.trigger_key = ArchiveKey(cfg.date, detector.magnet, "QUENCH_TRIG")
        self.trigger_meta = SidecarMeta(detector.magnet, "QUENCH_TRIG", units_raw="V", units_cal="",
                                        session_start_utc=start, fast_rate_hz=cfg.fast_rate_hz)
        self.mode = simulated_time_mode(cfg)

    def _add_key(self, cid, start, **rate):
        desc = self.registry[cid]
        self._keys[cid] = ArchiveKey(self.cfg.date, desc.device_name, desc.data_name)
        self._meta[cid] = SidecarMeta(desc.device_name, desc.data_name, units_raw=desc.units_raw,
                                      units_cal=desc.units_cal, session_start_utc=start, **rate)

    def stop(self) -> None:
        self._stop.set()

    def _pace(self, t: float) -> None:
        if self.mode is TimeMode.REALTIME:
            delay = self._wall0 + t - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)

    def _status(self, t: float, status: SessionStatus) -> None:
        self.publisher.set("DAQ.STATUS", Sample(t, float(status.value), float(self.handle.total_gaps)))

    def _session_file(self, status: SessionStatus):
        path = self.archive.root / "sessions" / f"{self.handle.session_id}.meta"
        lines = [
            f"session_id={self.handle.session_id}",
            f"session_start_utc={format_utc(self.cfg.session_start_utc)}",
            f"duration_s={self.cfg.duration_s!r}",
            f"fast_rate_hz={self.cfg.fast_rate_hz!r}",
            f"slow_period_s={self.cfg.slow_period_s!r}",
            f"status={status.name.lower()}",
            f"gaps={self.handle.total_gaps}",
        ]
        lines += [f"faulted={self.registry[c].full_name}" for c in sorted(self.handle.faulted)]
        lines += [f"trigger={self.registry[t.channel].full_name} {t.trigger_time_s!r} "
                  f"{t.compensated_volts_at_trigger!r}" for t in self.handle.triggers]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")

    # -- fast path -------------------------------------------------------

    def _gap(self, cid: int, t_from: float, t_to: float, n: int) -> None:
        self.handle.gap_count[cid] = self.handle.gap_count.get(cid, 0) + 1
        self.handle.gapped_samples[cid] = self.handle.gapped_samples.get(cid, 0) + n
        self.queue.offer(("gap", cid, self._keys[cid], self._meta[cid], Gap(t_from, t_to, n)), 0, force=True)

    def _fast_loop(self) -> None:
        cfg, det = self.cfg, self.detector
        chans = list(cfg.fast_channels)
        n_total = _count(cfg.duration_s, cfg.fast_rate_hz) if chans else 0
        amp_state = {cid: 0.0 for cid in chans}
        det_state = {cid: quench.new_state(det, cid, cfg.fast_rate_hz) for cid in chans}
        for k0 in range(0, n_total, cfg.block_size):
            if self._stop.is_set():
                break
            k1 = min(k0 + cfg.block_size, n_total)
            t = np.arange(k0, k1, dtype=np.float64) / cfg.fast_rate_hz
            fired: list[QuenchTrigger] = []
            for cid in chans:
                desc = self.registry[cid]
                src = self.sources[cid]
                dIdt = src.current_rate(t)
                volts = src.volts(t)
                was_faulted = cid in self.handle.faulted
                amp_state[cid], raw, breach = condition_block(desc.amplifier, amp_state[cid], volts)
                if was_faulted:
                    raw[:] = np.nan
                elif breach is not None:
                    # condition_block already blanked the block from the breach on
                    log.warning("isolation breach on %s at t=%r", desc.full_name, float(t[breach]))
                    self.handle.faulted.add(cid)
                rec = np.empty((k1 - k0, 3), dtype=np.float64)
                rec[:, 0] = t
                rec[:, 1] = raw
                rec[:, 2] = calibrate_array(desc.calibration, raw)
                d0 = time.perf_counter()
                trig = quench.detect_block(det, det_state[cid], t, raw, dIdt)
                self.handle.detector_seconds += time.perf_counter() - d0
                self.handle.detected[cid] = self.handle.detected.get(cid, 0) + (k1 - k0)
                if trig is not None:
                    fired.append(trig)
                self.handle.generated[cid] = self.handle.generated.get(cid, 0) + (k1 - k0)
                item = ("append", cid, self._keys[cid], self._meta[cid], rec)
                if not self.queue.offer(item, k1 - k0):
                    self._gap(cid, float(t[0]), float(t[-1]), k1 - k0)
            for trig in sorted(fired, key=lambda tr: (tr.trigger_time_s, tr.channel)):
                self._on_trigger(trig)
            self._pace(float(t[-1]))

    def _on_trigger(self, trig: QuenchTrigger) -> None:
        self.handle.triggers.append(trig)
        log.warning("quench trigger on %s at t=%r s (v_comp=%r V)",
                    self.registry[trig.channel].full_name, trig.trigger_time_s,
                    trig.compensated_volts_at_trigger)
        rec = np.array([trig.record()], dtype=np.float64)
        self.queue.offer(("append", None, self.trigger_key, self.trigger_meta, rec), 1, force=True)
        self.publisher.publish(self.trigger_key.full_name, Sample(*trig.record()), urgent=True)

    # -- slow path -------------------------------------------------------

    def _slow_loop(self) -> None:
        cfg = self.cfg
        chans = list(cfg.slow_channels)
        if not chans:
            return
        amp_state = {cid: 0.0 for cid in chans}
        for k in range(_count(cfg.duration_s, 1.0 / cfg.slow_period_s)):
            t = k * cfg.slow_period_s
            self._pace(t)
            if self._stop.is_set():
                break
            for cid in chans:
                desc = self.registry[cid]
                src = self.sources[cid]
                self.handle.generated[cid] = self.handle.generated.get(cid, 0) + 1
                if desc.kind is ChannelKind.SPECTRAL:
                    frames = src.frames(t)
                    self.queue.offer(("spectral", cid, self._keys[cid], self._meta[cid], frames),
                                     2 * len(frames), force=True)
                    continue
                raw = self._slow_raw(cid, desc, src.volts(t), amp_state)
                sample = Sample(t, raw, calibrate(desc.calibration, raw))
                item = ("append", cid, self._keys[cid], self._meta[cid], np.array([sample]))
                if not self.queue.offer(item, 1):
                    self._gap(cid, t, t, 1)
                self.publisher.publish(desc.full_name, sample)

    def _slow_raw(self, cid, desc, volts, amp_state) -> float:
        if cid in self.handle.faulted:
            return math.nan
        if desc.amplifier is None:
            return float(volts)
        try:
            amp_state[cid], out = condition_step(desc.amplifier, amp_state[cid], volts)
            return out
        except IsolationBreach as exc:
            log.warning("isolation breach on %s: %s", desc.full_name, exc)
            self.handle.faulted.add(cid)
            return math.nan

    # -- driver ----------------------------------------------------------

    def run(self) -> SessionHandle:
        session_path = self.archive.root / "sessions" / f"{self.handle.session_id}.meta"
        if session_path.exists():
            raise ArchiveError(f"session {self.handle.session_id} already exists in {self.archive.root}")
        try:
            self._session_file(SessionStatus.RUNNING)
        except OSError as exc:
            raise ArchiveError(f"archive root not writable: {exc}") from exc
        writer = ArchiveWriter(self.archive, self.queue, self.handle)
        writer.start()
        self._status(0.0, SessionStatus.RUNNING)
        self._wall0 = time.monotonic()
        w0 = time.perf_counter()
        errors: list[BaseException] = []

        def guarded(fn):
            def body():
                try:
                    fn()
                except BaseException as exc:  # surfaced through the handle
                    errors.append(exc)
                    self._stop.set()
            return body

        loops = [threading.Thread(target=guarded(self._fast_loop), name="fast-loop"),
                 threading.Thread(target=guarded(self._slow_loop), name="slow-loop")]
        for th in loops:
            th.start()
        for th in loops:
            th.join()
        self.queue.offer(_CLOSE, 0, force=True)
        writer.join()
        self.handle.wall_seconds = time.perf_counter() - w0
        if errors and self.handle.error is None:
            self.handle.error = errors[0]
        status = SessionStatus.FAULTED if self.handle.error is not None else SessionStatus.COMPLETED
        self.handle.status = status
        self._status(self.cfg.duration_s, status)
        try:
            self._session_file(status)
        except OSError as exc:
            self.handle.error = self.handle.error or exc
            self.handle.status = SessionStatus.FAULTED
        return self.handle


def run_session(cfg: AcquisitionConfig, registry: Registry, sources: Mapping[int, object],
                detector: DetectorConfig, archive: Archive,
                publisher: Publisher | None = None) -> SessionHandle:
    """Run one acquisition session to completion and return its handle."""
    return AcquisitionEngine(registry, cfg, sources, detector, archive, publisher).run()
