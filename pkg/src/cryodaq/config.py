"""Daemon configuration file.

Grammar (UTF-8, one statement per line)::

    # comment            full-line comments start with '#' or ';'
    [section]            one of facility, channels, acquisition, detector,
                         archive, server
    key = value          whitespace around '=' is ignored

Keys may appear once per section, except ``channel`` in ``[channels]``,
which repeats.  A channel line is the full name followed by ``token=value``
pairs::

    channel = MAG1.VTAP1 kind=fast source=tap gain=1 alpha=1 clip=10

Unknown sections, keys or channel tokens are errors that name the line.
See docs/config.md for every key and its default.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from cryodaq.acquire import DEFAULT_QUEUE_CAPACITY, AcquisitionConfig, parse_utc
from cryodaq.condition import DEFAULT_ISOLATION_LIMIT_V, AmplifierConfig
from cryodaq.errors import CalibrationError, ConfigInvalid, CryoDAQError
from cryodaq.quench import DetectorConfig, DumpModel
from cryodaq.registry import (
    CalibrationTable,
    ChannelDescriptor,
    ChannelKind,
    Registry,
    invert_calibration,
    split_full_name,
    validate_name,
)
from cryodaq.simsrc import (
    CooldownProfile,
    CooldownSource,
    FieldRampProfile,
    QuenchScenario,
    RampMode,
    SlowKind,
    SlowParams,
    SlowSource,
    SpectrumSource,
    TapSource,
)

ROOT_ENV = "CRYODAQ_ROOT"

SECTIONS = {
    "facility": {
        "seed", "field_ramp", "ramp_rate_T_per_s", "ramp_duration_s", "current_amps",
        "mutual_inductance_H", "noise_amp_V", "quench_channel", "quench_onset_s",
        "resistive_slope_V_per_s", "cooldown_start_K", "cooldown_base_K", "cooldown_tau_s",
    },
    "channels": {"channel"},
    "acquisition": {
        "fast_rate_hz", "slow_period_s", "duration_s", "session_start_utc", "realtime",
        "archive_queue_capacity", "fast_channels", "slow_channels", "block_size", "max_fast_channels",
    },
    "detector": {
        "threshold_volts", "hold_time_s", "mutual_inductance_H", "magnet",
        "dump_inductance_H", "dump_resistance_ohm",
    },
    "archive": {"root"},
    "server": {"endpoint"},
}

CHANNEL_TOKENS = {
    "kind", "source", "units_raw", "units_cal", "cal", "gain", "alpha", "clip", "isolation",
    "baseline", "amplitude", "period", "phase", "bins", "df", "corner", "initial",
}
_AMP_TOKENS = ("gain", "alpha", "clip", "isolation")
_SOURCES = {"tap", "cooldown", "pressure", "flow", "spectrum", "setpoint"}


class ConfigError(ConfigInvalid):
    def __init__(self, path, lineno: int | None, message: str):
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass
class Entry:
    value: str
    lineno: int


@dataclass
class DaemonConfig:
    path: Path
    registry: Registry
    sources: dict[int, object]
    acquisition: AcquisitionConfig
    detector: DetectorConfig
    archive_root: Path
    endpoint: str | None = None
    dump: DumpModel | None = None
    setpoints: dict[str, float] = field(default_factory=dict)


def parse_sections(text: str, path="<config>") -> dict[str, dict[str, list[Entry]]]:
    """Tokenise the file into ``{section: {key: [entries]}}``."""
    sections: dict[str, dict[str, list[Entry]]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(path, lineno, f"malformed section header {s!r}")
            current = s[1:-1].strip()
            if current not in SECTIONS:
                raise ConfigError(path, lineno, f"unknown section [{current}]")
            if current in sections:
                raise ConfigError(path, lineno, f"duplicate section [{current}]")
            sections[current] = {}
            continue
        key, sep, value = s.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(path, lineno, f"expected 'key = value', got {s!r}")
        if current is None:
            raise ConfigError(path, lineno, "key outside of any section")
        if key not in SECTIONS[current]:
            raise ConfigError(path, lineno, f"unknown key {key!r} in [{current}]")
        bucket = sections[current].setdefault(key, [])
        if bucket and key != "channel":
            raise ConfigError(path, lineno, f"duplicate key {key!r} in [{current}]")
        bucket.append(Entry(value, lineno))
    return sections


class _Section:
    def __init__(self, path, name, entries):
        self.path = path
        self.name = name
        self.entries = entries

    def line(self, key):
        e = self.entries.get(key)
        return e[0].lineno if e else None

    def str(self, key, default=None):
        e = self.entries.get(key)
        return e[0].value if e else default

    def float(self, key, default=None):
        e = self.entries.get(key)
        if not e:
            return default
        try:
            return float(e[0].value)
        except ValueError:
            raise ConfigError(self.path, e[0].lineno, f"{key} must be a number") from None

    def int(self, key, default=None):
        e = self.entries.get(key)
        if not e:
            return default
        try:
            return int(e[0].value)
        except ValueError:
            raise ConfigError(self.path, e[0].lineno, f"{key} must be an integer") from None

    def bool(self, key, default=False):
        e = self.entries.get(key)
        if not e:
            return default
        v = e[0].value.lower()
        if v in ("true", "yes", "1", "on"):
            return True
        if v in ("false", "no", "0", "off"):
            return False
        raise ConfigError(self.path, e[0].lineno, f"{key} must be true or false")


def _parse_cal(value: str, base: Path) -> CalibrationTable:
    if value == "identity":
        return CalibrationTable.identity()
    if ":" in value and "," in value:
        pairs = []
        for item in value.split(","):
            r, _, p = item.partition(":")
            pairs.append((float(r), float(p)))
        return CalibrationTable.piecewise(pairs)
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    return CalibrationTable.from_file(path)


def _channel(entry: Entry, path: Path, base: Path):
    parts = entry.value.split()
    if not parts:
        raise ConfigError(path, entry.lineno, "channel needs a DEVICE.DATA name")
    name, tokens = parts[0], {}
    for tok in parts[1:]:
        k, sep, v = tok.partition("=")
        if not sep or k not in CHANNEL_TOKENS:
            raise ConfigError(path, entry.lineno, f"unknown channel token {tok!r}")
        tokens[k] = v
    try:
        device, data = split_full_name(name)
        kind = ChannelKind(tokens.get("kind", "slow"))
        default_src = {ChannelKind.FAST: "tap", ChannelKind.SPECTRAL: "spectrum"}.get(kind)
        source = tokens.get("source", default_src)
        if source not in _SOURCES:
            raise ConfigInvalid(f"unknown or missing source {source!r}")
        if kind is ChannelKind.FAST and source != "tap":
            raise ConfigInvalid("fast channels must use source=tap")
        if (kind is ChannelKind.SPECTRAL) != (source == "spectrum"):
            raise ConfigInvalid("source=spectrum goes with kind=spectral")
        amp = None
        if any(k in tokens for k in _AMP_TOKENS):
            amp = AmplifierConfig(
                gain=float(tokens.get("gain", 1.0)),
                lp_alpha=float(tokens.get("alpha", 1.0)),
                clip_volts=float(tokens.get("clip", 10.0)),
                isolation_limit_volts=float(tokens.get("isolation", DEFAULT_ISOLATION_LIMIT_V)),
            )
        elif kind is ChannelKind.FAST:
            raise ConfigInvalid(f"fast channel {name} needs a conditioning chain (gain=...)")
        cal = _parse_cal(tokens.get("cal", "identity"), base)
        desc = ChannelDescriptor(device, data, kind, tokens.get("units_raw", "V"),
                                 tokens.get("units_cal", "V"), cal, amp, writable=source == "setpoint")
    except (CryoDAQError, ValueError, OSError) as exc:
        raise ConfigError(path, entry.lineno, str(exc)) from None
    return desc, source, tokens


def load(path: str | os.PathLike) -> DaemonConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(path, None, f"cannot read config: {exc}") from None
    return loads(text, path)


def loads(text: str, path: str | os.PathLike = "<config>") -> DaemonConfig:
    path = Path(path)
    base = path.parent
    raw = parse_sections(text, path)
    sec = {name: _Section(path, name, raw.get(name, {})) for name in SECTIONS}
    fac, acq, det = sec["facility"], sec["acquisition"], sec["detector"]

    try:
        ramp_name = fac.str("field_ramp", "slow")
        if ramp_name == "custom":
            ramp = FieldRampProfile(RampMode.CUSTOM, fac.float("ramp_rate_T_per_s", 1.0),
                                    fac.float("ramp_duration_s", 1.0))
        else:
            ramp = FieldRampProfile.named(ramp_name)
    except ConfigInvalid as exc:
        raise ConfigError(path, fac.line("field_ramp"), str(exc)) from None
    try:
        scenario = QuenchScenario(
            onset_time_s=fac.float("quench_onset_s", math.inf),
            resistive_slope_V_per_s=fac.float("resistive_slope_V_per_s", 100.0),
            mutual_inductance_H=fac.float("mutual_inductance_H", 0.0),
            current_amps=fac.float("current_amps", 50000.0),
            noise_amp_V=fac.float("noise_amp_V", 0.0),
            seed=fac.int("seed", 0),
        )
        cooldown = CooldownProfile(fac.float("cooldown_start_K", 300.0), fac.float("cooldown_base_K", 80.0),
                                   fac.float("cooldown_tau_s", 3600.0))
    except ConfigInvalid as exc:
        raise ConfigError(path, None, f"[facility] {exc}") from None
    quench_channel = fac.str("quench_channel")

    registry = Registry()
    sources: dict[int, object] = {}
    setpoints: dict[str, float] = {}
    lines: dict[str, int] = {}
    for entry in sec["channels"].entries.get("channel", []):
        desc, source, tok = _channel(entry, path, base)
        try:
            cid = registry.register(desc)
        except CryoDAQError as exc:
            raise ConfigError(path, entry.lineno, str(exc)) from None
        lines[desc.full_name] = entry.lineno
        try:
            if source == "tap":
                quenching = desc.full_name == quench_channel
                sources[cid] = TapSource(scenario.for_channel(cid, quenching), ramp)
            elif source == "cooldown":
                sources[cid] = CooldownSource(cooldown, desc.calibration)
                if not desc.calibration.is_identity:
                    invert_calibration(desc.calibration, cooldown.t_base_K)
            elif source in ("pressure", "flow"):
                params = SlowParams(float(tok.get("baseline", 0.0)), float(tok.get("amplitude", 0.0)),
                                    float(tok.get("period", 60.0)), float(tok.get("phase", 0.0)))
                sources[cid] = SlowSource(SlowKind(source), params)
            elif source == "spectrum":
                sources[cid] = SpectrumSource(int(tok.get("bins", 16)), float(tok.get("df", 10.0)),
                                              float(tok.get("corner", 50.0)), ramp)
            elif source == "setpoint":
                setpoints[desc.full_name] = float(tok.get("initial", 0.0))
        except (CryoDAQError, CalibrationError, ValueError) as exc:
            raise ConfigError(path, entry.lineno, str(exc)) from None
    if quench_channel is not None and quench_channel not in lines:
        raise ConfigError(path, fac.line("quench_channel"), f"quench_channel {quench_channel} is not defined")

    def channel_list(key, kinds):
        text = acq.str(key)
        if text is None:
            return [cid for cid, d in enumerate(registry) if d.kind in kinds and not d.writable]
        out = []
        for name in (n.strip() for n in text.split(",") if n.strip()):
            if name not in registry:
                raise ConfigError(path, acq.line(key), f"unknown channel {name}")
            out.append(registry.resolve(name))
        return out

    try:
        start = parse_utc(acq.str("session_start_utc", "2000-01-01T00:00:00Z"))
    except ValueError as exc:
        raise ConfigError(path, acq.line("session_start_utc"), f"bad timestamp: {exc}") from None
    acquisition = AcquisitionConfig(
        fast_rate_hz=acq.float("fast_rate_hz", 100000.0),
        fast_channels=channel_list("fast_channels", {ChannelKind.FAST}),
        slow_period_s=acq.float("slow_period_s", 1.0),
        slow_channels=channel_list("slow_channels", {ChannelKind.SLOW, ChannelKind.SPECTRAL}),
        session_start_utc=start,
        duration_s=acq.float("duration_s", 1.0),
        archive_queue_capacity=acq.int("archive_queue_capacity", DEFAULT_QUEUE_CAPACITY),
        realtime=acq.bool("realtime", False),
        max_fast_channels=acq.int("max_fast_channels", 64),
        block_size=acq.int("block_size", 16384),
    )
    try:
        acquisition.validate(registry)
    except ConfigInvalid as exc:
        raise ConfigError(path, None, f"[acquisition] {exc}") from None

    try:
        detector = DetectorConfig(det.float("threshold_volts", 0.1), det.float("hold_time_s", 0.002),
                                  det.float("mutual_inductance_H", scenario.mutual_inductance_H),
                                  det.str("magnet", "MAGNET"))
        validate_name(detector.magnet)
        dump = None
        if det.str("dump_inductance_H") is not None:
            dump = DumpModel(det.float("dump_inductance_H"), det.float("dump_resistance_ohm", 0.1),
                             scenario.current_amps)
    except CryoDAQError as exc:
        raise ConfigError(path, None, f"[detector] {exc}") from None
    trig_name = f"{detector.magnet}.QUENCH_TRIG"
    if trig_name not in registry:
        registry.register(ChannelDescriptor(detector.magnet, "QUENCH_TRIG", ChannelKind.FAST,
                                            "V", "", amplifier=AmplifierConfig()))
    registry.freeze()

    root = sec["archive"].str("root") or os.environ.get(ROOT_ENV)
    if not root:
        raise ConfigError(path, None, f"no [archive] root and ${ROOT_ENV} is unset")
    root_path = Path(root)
    if not root_path.is_absolute():
        root_path = base / root_path
    return DaemonConfig(path, registry, sources, acquisition, detector, root_path,
                        sec["server"].str("endpoint"), dump, setpoints)
