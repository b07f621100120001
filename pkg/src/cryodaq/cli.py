"""Operator tools: ``daqd``, ``xyp``, ``xymon`` and ``bench``.

Exit codes::

    daqd   0 ok, 2 config error, 3 archive error, 4 bind error
    xyp    0 ok, 1 key not found, 2 bad flags
    xymon  0 ok (end of stream), 1 connect failure or unknown channel
    bench  0 ok, 3 archive failure

Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import queue
import shutil
import signal
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from cryodaq import config as configmod
from cryodaq.acquire import AcquisitionConfig, AcquisitionEngine, SessionStatus
from cryodaq.archive import Archive, ArchiveKey, format_records
from cryodaq.condition import AmplifierConfig
from cryodaq.errors import ArchiveError, ConfigInvalid, CryoDAQError, KeyNotFound, NotFound
from cryodaq.netproto import ChannelAccessServer, Client, LiveTable, parse_endpoint
from cryodaq.quench import DetectorConfig, stored_energy
from cryodaq.registry import ChannelDescriptor, ChannelKind, Registry, Sample
from cryodaq.simsrc import FieldRampProfile, QuenchScenario, TapSource
from cryodaq.svgplot import render_svg

log = logging.getLogger("cryodaq")

EXIT_OK = 0
EXIT_NOT_FOUND = 1
EXIT_USAGE = 2
EXIT_ARCHIVE = 3
EXIT_BIND = 4


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO),
                        format="%(name)s: %(levelname)s: %(message)s", stream=sys.stderr)


# -- daqd ------------------------------------------------------------------

def daqd(argv=None) -> int:
    p = argparse.ArgumentParser(prog="daqd", description="Run an acquisition session from a config file.")
    p.add_argument("config")
    p.add_argument("--linger", type=float, default=0.0,
                   help="keep serving this many seconds after the session ends")
    p.add_argument("--log-level", default="warning")
    args = p.parse_args(argv)
    _setup_logging(args.log_level)

    try:
        cfg = configmod.load(args.config)
    except ConfigInvalid as exc:
        print(f"daqd: {exc}", file=sys.stderr)
        return EXIT_USAGE

    live = LiveTable(cfg.registry)
    for name, value in cfg.setpoints.items():
        live.set(name, Sample(0.0, value, value))
    server = None
    if cfg.endpoint:
        host, port = parse_endpoint(cfg.endpoint)
        server = ChannelAccessServer(live, host, port)
        try:
            server.start()
        except OSError as exc:
            print(f"daqd: cannot bind {cfg.endpoint}: {exc}", file=sys.stderr)
            return EXIT_BIND
        host, port = server.address
        print(f"daqd: serving on {host}:{port}", file=sys.stderr, flush=True)

    try:
        cfg.archive_root.mkdir(parents=True, exist_ok=True)
        engine = AcquisitionEngine(cfg.registry, cfg.acquisition, cfg.sources, cfg.detector,
                                   Archive(cfg.archive_root), live)
    except OSError as exc:
        print(f"daqd: archive root {cfg.archive_root}: {exc}", file=sys.stderr)
        _close(server)
        return EXIT_ARCHIVE
    except ConfigInvalid as exc:
        print(f"daqd: {exc}", file=sys.stderr)
        _close(server)
        return EXIT_USAGE

    previous = signal.signal(signal.SIGINT, lambda *_: engine.stop())
    try:
        handle = engine.run()
    except ArchiveError as exc:
        print(f"daqd: {exc}", file=sys.stderr)
        _close(server)
        return EXIT_ARCHIVE
    finally:
        signal.signal(signal.SIGINT, previous)

    for trig in handle.triggers:
        msg = f"daqd: quench trigger {cfg.registry[trig.channel].full_name} at {trig.trigger_time_s!r} s"
        if cfg.dump is not None:
            msg += f", dumping {stored_energy(cfg.dump):.6g} J (tau {cfg.dump.tau:.6g} s)"
        print(msg, file=sys.stderr)
    print(f"daqd: session {handle.session_id} {handle.status.name.lower()}, "
          f"{sum(handle.archived.values())} records, {handle.total_gaps} gaps", file=sys.stderr)
    if args.linger > 0 and server is not None:
        time.sleep(args.linger)
    _close(server)
    if handle.status is SessionStatus.FAULTED:
        print(f"daqd: {handle.error}", file=sys.stderr)
        return EXIT_ARCHIVE
    return EXIT_OK


def _close(server):
    if server is not None:
        server.close()


# -- xyp -------------------------------------------------------------------

def _default_root() -> str | None:
    return os.environ.get(configmod.ROOT_ENV)


def _resolve_key(archive: Archive, device: str, data: str, date: str | None) -> ArchiveKey | None:
    if date:
        return ArchiveKey(date, device, data)
    keys = [k for k in archive.list_keys() if k.device_name == device and k.data_name == data]
    return keys[-1] if keys else None


def xyp(argv=None) -> int:
    p = argparse.ArgumentParser(prog="xyp", description="Query, export or plot archived data.")
    p.add_argument("--root", default=_default_root(), help=f"archive root (default ${configmod.ROOT_ENV})")
    p.add_argument("--device", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--date", help="YYYY-MM-DD (default: most recent)")
    p.add_argument("--from", dest="t_from", type=float, default=-math.inf)
    p.add_argument("--to", dest="t_to", type=float, default=math.inf)
    p.add_argument("--format", choices=("text", "binary", "svg"), default="text")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--follow", type=float, metavar="INTERVAL",
                   help="keep polling the archive every INTERVAL seconds")
    p.add_argument("--polls", type=int, help="stop after this many follow polls")
    args = p.parse_args(argv)
    if not args.root:
        p.error(f"--root is required when ${configmod.ROOT_ENV} is unset")
    if args.t_from > args.t_to:
        p.error("--from must not exceed --to")
    if args.follow is not None and args.follow <= 0:
        p.error("--follow interval must be > 0")
    if args.follow is not None and args.format == "svg" and not args.out:
        p.error("--format svg with --follow needs --out")
    try:
        key = _resolve_key(Archive(args.root), args.device, args.data, args.date)
    except ValueError as exc:
        p.error(str(exc))
    archive = Archive(args.root)

    if key is None or not archive.exists(key):
        if args.follow is None:
            print(f"xyp: no archive entry for {args.device}.{args.data}", file=sys.stderr)
            return EXIT_NOT_FOUND
        polls = 0
        while key is None or not archive.exists(key):
            if args.polls is not None and polls >= args.polls:
                print(f"xyp: no archive entry for {args.device}.{args.data}", file=sys.stderr)
                return EXIT_NOT_FOUND
            time.sleep(args.follow)
            polls += 1
            key = _resolve_key(archive, args.device, args.data, args.date)

    try:
        records = archive.query(key, args.t_from, args.t_to)
        meta = archive.read_meta(key)
    except KeyNotFound as exc:
        print(f"xyp: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    title = f"{key.device_name}.{key.data_name} {key.date}"
    y_label = f"{key.data_name} [{meta.units_cal}]" if meta.units_cal else key.data_name

    def emit(rec: np.ndarray, out):
        if args.format == "binary":
            out.write(rec.astype("<f8").tobytes())
        elif args.format == "text":
            out.write(format_records(rec).encode("ascii"))
        else:
            if out.seekable():
                out.seek(0)
                out.truncate()
            out.write(render_svg(all_records, title, "time_index [s]", y_label).encode("utf-8"))
        out.flush()

    all_records = records
    out = open(args.out, "wb") if args.out else sys.stdout.buffer
    try:
        emit(records, out)
        if args.follow is None:
            return EXIT_OK
        last_t = float(records[-1, 0]) if len(records) else args.t_from
        polls = 0
        try:
            while args.polls is None or polls < args.polls:
                time.sleep(args.follow)
                polls += 1
                new = archive.tail(key, last_t) if math.isfinite(last_t) else archive.query(key, args.t_from, args.t_to)
                new = new[(new[:, 0] >= args.t_from) & (new[:, 0] <= args.t_to)]
                if len(new):
                    last_t = float(new[-1, 0])
                    all_records = np.concatenate([all_records, new])
                    emit(new, out)
                    print(f"xyp: +{len(new)} records (total {len(all_records)})", file=sys.stderr, flush=True)
        except KeyboardInterrupt:
            pass
        return EXIT_OK
    finally:
        if args.out:
            out.close()


# -- xymon -----------------------------------------------------------------

def xymon(argv=None) -> int:
    p = argparse.ArgumentParser(prog="xymon", description="Print live values of one channel.")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--channel", required=True, help="DEVICE.DATA")
    p.add_argument("--out", help="also append lines to this file")
    p.add_argument("--count", type=int, help="exit after this many events")
    p.add_argument("--timeout", type=float, default=5.0)
    args = p.parse_args(argv)
    try:
        client = Client.connect(args.server, timeout=args.timeout)
    except (CryoDAQError, OSError, ValueError) as exc:
        print(f"xymon: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    events: queue.Queue = queue.Queue()
    try:
        client.subscribe(args.channel, events.put)
    except NotFound as exc:
        print(f"xymon: server: {exc}", file=sys.stderr)
        client.close()
        return EXIT_NOT_FOUND
    except CryoDAQError as exc:
        print(f"xymon: {exc}", file=sys.stderr)
        client.close()
        return EXIT_NOT_FOUND
    sink = open(args.out, "a", encoding="ascii") if args.out else None
    n = 0
    try:
        while args.count is None or n < args.count:
            value = events.get()
            if value is None:
                break
            line = format_records(np.array([value.triple]))
            sys.stdout.write(line)
            sys.stdout.flush()
            if sink:
                sink.write(line)
                sink.flush()
            n += 1
    except KeyboardInterrupt:
        pass
    finally:
        if sink:
            sink.close()
        client.close()
    return EXIT_OK


# -- bench -----------------------------------------------------------------

def bench(argv=None) -> int:
    p = argparse.ArgumentParser(prog="bench", description="Synthetic fast-path throughput run.")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--rate", type=float, default=100000.0)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--archive-root", help="keep the archive here (default: temporary, removed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--queue-capacity", type=int, default=None)
    args = p.parse_args(argv)
    if args.channels < 1 or args.rate <= 0 or args.duration < 0:
        p.error("channels >= 1, rate > 0, duration >= 0 required")

    registry = Registry()
    sources = {}
    scenario = QuenchScenario(noise_amp_V=args.threshold / 2, seed=args.seed)
    ramp = FieldRampProfile.slow()
    amp = AmplifierConfig(gain=1.0, lp_alpha=1.0, clip_volts=10.0)
    for i in range(args.channels):
        cid = registry.register(ChannelDescriptor("BENCH", f"VT{i:03d}", ChannelKind.FAST, amplifier=amp))
        sources[cid] = TapSource(scenario.for_channel(cid, False), ramp)
    registry.freeze()
    cfg = AcquisitionConfig(fast_rate_hz=args.rate, fast_channels=list(range(args.channels)),
                            duration_s=args.duration, max_fast_channels=max(64, args.channels),
                            session_start_utc=datetime(2000, 1, 1, tzinfo=timezone.utc))
    if args.queue_capacity:
        cfg.archive_queue_capacity = args.queue_capacity
    detector = DetectorConfig(threshold_volts=args.threshold, hold_time_s=0.002)

    tmp = None
    root = args.archive_root
    if root is None:
        tmp = tempfile.mkdtemp(prefix="cryodaq-bench-")
        root = tmp
    try:
        try:
            Path(root).mkdir(parents=True, exist_ok=True)
            engine = AcquisitionEngine(registry, cfg, sources, detector, Archive(root))
            h = engine.run()
        except (ArchiveError, OSError) as exc:
            print(f"bench: archive failure: {exc}", file=sys.stderr)
            return EXIT_ARCHIVE
        if h.status is SessionStatus.FAULTED:
            print(f"bench: archive failure: {h.error}", file=sys.stderr)
            return EXIT_ARCHIVE
        generated = sum(h.generated.values())
        detected = sum(h.detected.values())
        wall = max(h.wall_seconds, 1e-9)
        gen = generated / wall
        det = detected / max(h.detector_seconds, 1e-9)
        arch = h.archive_bytes / 1e6 / max(h.archive_seconds, 1e-9)
        print(f"samples generated: {generated}")
        print(f"samples detected: {detected}")
        print(f"samples archived: {sum(h.archived.values())}")
        print(f"triggers: {len(h.triggers)}")
        print(f"wall seconds: {wall:.3f}")
        print(f"bench: gen={gen:.6g} det={det:.6g} arch={arch:.6g} gaps={h.total_gaps}")
        return EXIT_OK
    finally:
        if tmp:
            shutil.rmtree(tmp, ignore_errors=True)


# -- entry points ----------------------------------------------------------

COMMANDS = {"daqd": daqd, "xyp": xyp, "xymon": xymon, "bench": bench}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help") or argv[0] not in COMMANDS:
        print("usage: cryodaq {daqd,xyp,xymon,bench} [options]", file=sys.stderr)
        return EXIT_OK if argv and argv[0] in ("-h", "--help") else EXIT_USAGE
    return COMMANDS[argv[0]](argv[1:])


def daqd_main() -> int:
    return daqd()


def xyp_main() -> int:
    return xyp()


def xymon_main() -> int:
    return xymon()


def bench_main() -> int:
    return bench()
