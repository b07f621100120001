"""Isolation-amplifier signal conditioning.

Each amplifier is a single-pole discrete low-pass followed by a selectable
gain and output saturation::

    y[n] = y[n-1] + alpha * (x[n] - y[n-1])
    out[n] = clip(gain * y[n], -clip_volts, +clip_volts)

``alpha`` is per sample.  For an analogue RC stage sampled every ``dt``
seconds use ``alpha = dt / (RC + dt)`` (see :func:`alpha_from_rc`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from cryodaq.errors import ConfigInvalid, IsolationBreach

DEFAULT_ISOLATION_LIMIT_V = 20000.0


@dataclass(frozen=True)
class AmplifierConfig:
    gain: float = 1.0
    lp_alpha: float = 1.0
    clip_volts: float = 10.0
    isolation_limit_volts: float = DEFAULT_ISOLATION_LIMIT_V

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigInvalid(f"gain must be > 0, got {self.gain}")
        if not 0 < self.lp_alpha <= 1:
            raise ConfigInvalid(f"lp_alpha must be in (0, 1], got {self.lp_alpha}")
        if not self.clip_volts > 0:
            raise ConfigInvalid(f"clip_volts must be > 0, got {self.clip_volts}")
        if not self.isolation_limit_volts > 0:
            raise ConfigInvalid("isolation_limit_volts must be > 0")


def alpha_from_rc(rc_seconds: float, dt: float) -> float:
    return dt / (rc_seconds + dt)


def condition_step(cfg: AmplifierConfig, state: float, input_volts: float) -> tuple[float, float]:
    """Advance the filter by one sample; returns ``(new_state, output_volts)``.

    Raises IsolationBreach if ``|input_volts|`` exceeds the isolation limit.
    """
    if abs(input_volts) > cfg.isolation_limit_volts:
        raise IsolationBreach(input_volts, cfg.isolation_limit_volts)
    y = state + cfg.lp_alpha * (input_volts - state)
    out = min(max(cfg.gain * y, -cfg.clip_volts), cfg.clip_volts)
    return y, out


def step_response(cfg: AmplifierConfig, n: int) -> float:
    """Unclipped output after ``n`` samples of a unit step from zero state."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return cfg.gain * (1.0 - (1.0 - cfg.lp_alpha) ** n)


def condition_block(cfg: AmplifierConfig, state: float, inputs: np.ndarray):
    """Vectorised conditioning of a block of samples.

    Returns ``(new_state, outputs, breach_index)``.  On the first isolation
    breach the channel is faulted: outputs from that sample on are NaN and
    ``breach_index`` is its position in the block (None otherwise).  The
    recurrence is evaluated as ``alpha*x + (1-alpha)*y``, which matches
    :func:`condition_step` to rounding.
    """
    x = np.asarray(inputs, dtype=np.float64)
    breach = np.flatnonzero(np.abs(x) > cfg.isolation_limit_volts)
    breach_index = int(breach[0]) if breach.size else None
    good = x if breach_index is None else x[:breach_index]
    if cfg.lp_alpha == 1.0:
        y = good.copy()
    elif good.size:
        a = cfg.lp_alpha
        y, _ = lfilter([a], [1.0, a - 1.0], good, zi=[(1.0 - a) * state])
    else:
        y = good.copy()
    new_state = float(y[-1]) if y.size else state
    out = np.empty_like(x)
    np.clip(cfg.gain * y, -cfg.clip_volts, cfg.clip_volts, out=out[: y.size])
    out[y.size:] = np.nan
    return new_state, out, breach_index
