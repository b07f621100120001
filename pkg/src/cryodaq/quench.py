"""Quench detection and energy-dump model.

The detector compares the inductively compensated tap voltage
``v_comp = raw - M * dI/dt`` against a threshold and fires once the
exceedance (strictly greater) has persisted for ``hold_samples`` consecutive
samples.  The trigger is latching: at most one per channel per session.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cryodaq.errors import ConfigInvalid
from cryodaq.registry import Sample


@dataclass(frozen=True)
class DetectorConfig:
    threshold_volts: float = 0.1
    hold_time_s: float = 0.002
    mutual_inductance_H: float = 0.0
    magnet: str = "MAGNET"

    def __post_init__(self):
        if not self.threshold_volts > 0:
            raise ConfigInvalid("threshold must be > 0")
        if not self.hold_time_s > 0:
            raise ConfigInvalid("hold time must be > 0")
        if self.mutual_inductance_H < 0:
            raise ConfigInvalid("mutual inductance must be >= 0")

    def hold_samples(self, rate_hz: float) -> int:
        # round() absorbs binary representation error, e.g. 0.002 * 1e5
        return max(1, math.ceil(round(self.hold_time_s * rate_hz, 9)))


@dataclass(frozen=True)
class QuenchTrigger:
    channel: int
    trigger_time_s: float
    compensated_volts_at_trigger: float
    sample_index: int

    def record(self) -> tuple[float, float, float]:
        return (self.trigger_time_s, self.compensated_volts_at_trigger, 1.0)


@dataclass
class DetectorState:
    channel: int
    hold_samples: int
    counter: int = 0
    index: int = 0
    fired: QuenchTrigger | None = None


def new_state(cfg: DetectorConfig, channel: int, rate_hz: float) -> DetectorState:
    return DetectorState(channel, cfg.hold_samples(rate_hz))


def detect_step(cfg: DetectorConfig, state: DetectorState, sample: Sample,
                dI_dt: float) -> QuenchTrigger | None:
    """Feed one sample; returns the trigger on the sample where it fires."""
    v_comp = sample.raw - cfg.mutual_inductance_H * dI_dt
    idx = state.index
    state.index += 1
    if state.fired is not None:
        return None
    if v_comp > cfg.threshold_volts:
        state.counter += 1
    else:
        state.counter = 0
    if state.counter >= state.hold_samples:
        state.fired = QuenchTrigger(state.channel, sample.time_index, v_comp, idx)
        return state.fired
    return None


def detect_block(cfg: DetectorConfig, state: DetectorState, times: np.ndarray,
                 raws: np.ndarray, dI_dt) -> QuenchTrigger | None:
    """Vectorised :func:`detect_step` over a contiguous block of samples."""
    n = len(raws)
    start = state.index
    state.index += n
    if state.fired is not None or n == 0:
        return None
    v_comp = raws - cfg.mutual_inductance_H * np.asarray(dI_dt, dtype=np.float64)
    exceed = v_comp > cfg.threshold_volts
    pos = np.arange(n)
    last_reset = np.maximum.accumulate(np.where(exceed, -1, pos))
    counter = np.where(last_reset < 0, state.counter + pos + 1, pos - last_reset)
    hits = np.flatnonzero(counter >= state.hold_samples)
    if hits.size:
        k = int(hits[0])
        state.counter = int(counter[k])
        state.fired = QuenchTrigger(state.channel, float(times[k]), float(v_comp[k]), start + k)
        return state.fired
    state.counter = int(counter[-1])
    return None


@dataclass(frozen=True)
class DumpModel:
    inductance_H: float
    dump_resistance_ohm: float
    initial_current_A: float

    def __post_init__(self):
        if not (self.inductance_H > 0 and self.dump_resistance_ohm > 0):
            raise ConfigInvalid("dump model needs L > 0 and R > 0")
        if self.initial_current_A < 0:
            raise ConfigInvalid("initial current must be >= 0")

    @property
    def tau(self) -> float:
        return self.inductance_H / self.dump_resistance_ohm


def dump_current(model: DumpModel, t_since_trigger: float) -> float:
    return model.initial_current_A * math.exp(-t_since_trigger / model.tau)


def stored_energy(model: DumpModel) -> float:
    return 0.5 * model.inductance_H * model.initial_current_A ** 2


def dissipated_energy_exact(model: DumpModel, t_end: float) -> float:
    """Closed form of the integral of I(t)^2 R over [0, t_end]."""
    return stored_energy(model) * -math.expm1(-2.0 * t_end / model.tau)


def _grid(t_end: float, dt: float) -> np.ndarray:
    n = t_end / dt
    steps = round(n) if abs(n - round(n)) < 1e-9 * max(1.0, n) else math.floor(n)
    edges = np.arange(steps + 1) * dt
    if edges[-1] < t_end:
        edges = np.append(edges, t_end)
    else:
        edges[-1] = t_end
    return edges


def dissipated_energy(model: DumpModel, t_end: float, dt: float, rule: str = "midpoint") -> float:
    """Numerically integrate the dump power I(t)^2 R over [0, t_end].

    ``rule`` is ``"midpoint"`` (default) or ``"trapezoid"``.  The integrand is
    convex, so the midpoint rule never exceeds the exact value and the
    trapezoid rule never falls below it; both errors are bounded by
    :func:`quadrature_error_bound`.
    """
    if not (t_end > 0 and dt > 0):
        raise ValueError("t_end and dt must be > 0")
    if model.initial_current_A == 0:
        return 0.0
    edges = _grid(t_end, dt)
    h = np.diff(edges)
    power = lambda t: model.initial_current_A ** 2 * model.dump_resistance_ohm * np.exp(-2.0 * t / model.tau)  # noqa: E731
    if rule == "midpoint":
        return float(np.sum(h * power(edges[:-1] + 0.5 * h)))
    if rule == "trapezoid":
        p = power(edges)
        return float(np.sum(h * 0.5 * (p[:-1] + p[1:])))
    raise ValueError(f"unknown rule {rule!r}")


def quadrature_error_bound(model: DumpModel, t_end: float, dt: float, rule: str = "midpoint") -> float:
    """Composite-rule bound ``c * t_end * dt^2 * max|f''|`` (c = 1/24 or 1/12)."""
    f2_max = 4.0 / model.tau ** 2 * model.initial_current_A ** 2 * model.dump_resistance_ohm
    c = {"midpoint": 1.0 / 24.0, "trapezoid": 1.0 / 12.0}[rule]
    return c * t_end * dt * dt * f2_max
