"""Simulated facility signals standing in for the real hardware.

All sources are pure functions of ``(parameters, seed, t)``, so replaying a
session reproduces every sample bit for bit.  Scalar functions accept a float
``t``; the ``*_array`` variants and the source classes take numpy arrays and
produce the same values element by element.

Slow helium-loop channels follow ``c + a*sin(2*pi*t/period + phase)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from cryodaq.errors import ConfigInvalid
from cryodaq.registry import CalibrationTable, invert_calibration
from cryodaq.rng import noise_at


class RampMode(enum.Enum):
    SLOW = "slow"
    FAST = "fast"
    CUSTOM = "custom"


@dataclass(frozen=True)
class FieldRampProfile:
    mode: RampMode
    rate_T_per_s: float
    duration_s: float

    @classmethod
    def slow(cls) -> FieldRampProfile:
        return cls(RampMode.SLOW, 3.0, 5.0)

    @classmethod
    def fast(cls) -> FieldRampProfile:
        return cls(RampMode.FAST, 20.0, 0.05)

    @classmethod
    def named(cls, name: str) -> FieldRampProfile:
        if name == "slow":
            return cls.slow()
        if name == "fast":
            return cls.fast()
        raise ConfigInvalid(f"unknown field ramp {name!r} (expected slow or fast)")

    def __post_init__(self):
        fixed = {RampMode.SLOW: (3.0, 5.0), RampMode.FAST: (20.0, 0.05)}
        if self.mode in fixed and (self.rate_T_per_s, self.duration_s) != fixed[self.mode]:
            raise ConfigInvalid(f"{self.mode.value} ramp is fixed at {fixed[self.mode]}")
        if self.duration_s < 0:
            raise ConfigInvalid("ramp duration must be >= 0")


def field_at(profile: FieldRampProfile, t):
    """Background field [T]: linear ramp, constant after the ramp ends."""
    if np.ndim(t) == 0:
        return profile.rate_T_per_s * min(t, profile.duration_s)
    return profile.rate_T_per_s * np.minimum(t, profile.duration_s)


@dataclass(frozen=True)
class CooldownProfile:
    t_start_K: float = 300.0
    t_base_K: float = 80.0
    tau_s: float = 3600.0

    def __post_init__(self):
        if not self.t_start_K > self.t_base_K or self.t_base_K < 0:
            raise ConfigInvalid("cool-down needs t_start > t_base >= 0")
        if not self.tau_s > 0:
            raise ConfigInvalid("cool-down tau must be > 0")


def cooldown_at(profile: CooldownProfile, t):
    """Single-exponential thermal-shield temperature [K]."""
    span = profile.t_start_K - profile.t_base_K
    if np.ndim(t) == 0:
        return profile.t_base_K + span * math.exp(-t / profile.tau_s)
    return profile.t_base_K + span * np.exp(-np.asarray(t) / profile.tau_s)


@dataclass(frozen=True)
class QuenchScenario:
    onset_time_s: float = math.inf
    resistive_slope_V_per_s: float = 100.0
    mutual_inductance_H: float = 0.0
    current_amps: float = 50000.0
    noise_amp_V: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.resistive_slope_V_per_s > 0:
            raise ConfigInvalid("resistive slope must be > 0")
        if self.mutual_inductance_H < 0 or self.noise_amp_V < 0:
            raise ConfigInvalid("mutual inductance and noise amplitude must be >= 0")

    def for_channel(self, channel_id: int, quenching: bool) -> QuenchScenario:
        """Per-channel copy with its own noise seed; only quenching taps keep the onset."""
        seed = (self.seed * 1000003 + channel_id + 1) & ((1 << 63) - 1)
        onset = self.onset_time_s if quenching else math.inf
        return QuenchScenario(onset, self.resistive_slope_V_per_s, self.mutual_inductance_H,
                              self.current_amps, self.noise_amp_V, seed)


def voltage_tap_at(sc: QuenchScenario, dI_dt, t):
    """Tap voltage: inductive pickup + deterministic noise + resistive growth."""
    if np.ndim(t) == 0:
        v = sc.mutual_inductance_H * dI_dt
        if sc.noise_amp_V:
            v += noise_at(sc.seed, sc.noise_amp_V, t)
        return v + max(0.0, sc.resistive_slope_V_per_s * (t - sc.onset_time_s))
    t = np.asarray(t, dtype=np.float64)
    v = sc.mutual_inductance_H * np.broadcast_to(np.asarray(dI_dt, dtype=np.float64), t.shape)
    if sc.noise_amp_V:
        v = v + noise_at(sc.seed, sc.noise_amp_V, t)
    return v + np.maximum(0.0, sc.resistive_slope_V_per_s * (t - sc.onset_time_s))


def current_ramp_rate(sc: QuenchScenario, ramp: FieldRampProfile, t):
    """dI/dt [A/s]: the supply ramps 0 -> current_amps alongside the field ramp."""
    if ramp.duration_s <= 0:
        return 0.0 if np.ndim(t) == 0 else np.zeros(np.shape(t))
    rate = sc.current_amps / ramp.duration_s
    if np.ndim(t) == 0:
        return rate if t < ramp.duration_s else 0.0
    return np.where(np.asarray(t) < ramp.duration_s, rate, 0.0)


class SlowKind(enum.Enum):
    PRESSURE = "pressure"
    FLOW_RATE = "flow"


@dataclass(frozen=True)
class SlowParams:
    baseline: float
    amplitude: float = 0.0
    period_s: float = 60.0
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or not self.period_s > 0:
            raise ConfigInvalid("slow channel needs amplitude >= 0 and period > 0")


def slow_channel_at(kind: SlowKind, params: SlowParams, t: float) -> float:
    """Smooth slow-loop baseline.  ``kind`` only selects units downstream."""
    if params.amplitude == 0.0:
        return params.baseline
    return params.baseline + params.amplitude * math.sin(2.0 * math.pi * t / params.period_s + params.phase)


# Source objects used by the acquisition engine.  Each yields sensor volts.

@dataclass(frozen=True)
class TapSource:
    scenario: QuenchScenario
    ramp: FieldRampProfile

    def current_rate(self, t):
        return current_ramp_rate(self.scenario, self.ramp, t)

    def volts(self, t):
        return voltage_tap_at(self.scenario, self.current_rate(t), t)


@dataclass(frozen=True)
class CooldownSource:
    """Temperature sensor; raw volts come from inverting the channel's table."""

    profile: CooldownProfile
    calibration: CalibrationTable

    def volts(self, t: float) -> float:
        return float(invert_calibration(self.calibration, cooldown_at(self.profile, t)))


@dataclass(frozen=True)
class SlowSource:
    kind: SlowKind
    params: SlowParams

    def volts(self, t: float) -> float:
        return slow_channel_at(self.kind, self.params, t)


@dataclass(frozen=True)
class SpectrumSource:
    """Signal-analyser stand-in: single-pole response sampled on a fixed grid.

    Each call returns frames ``(t, f, amplitude, phase)`` for f = df, 2df, ...
    """

    n_bins: int = 16
    df_hz: float = 10.0
    corner_hz: float = 50.0
    field: FieldRampProfile | None = None

    def frames(self, t: float) -> list[tuple[float, float, float, float]]:
        scale = 1.0 if self.field is None else 1.0 + field_at(self.field, t)
        out = []
        for k in range(1, self.n_bins + 1):
            f = k * self.df_hz
            r = f / self.corner_hz
            out.append((t, f, scale / math.sqrt(1.0 + r * r), -math.atan(r)))
        return out
