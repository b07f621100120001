import math

import numpy as np
import pytest

from cryodaq.errors import ConfigInvalid
from cryodaq.registry import CalibrationTable, calibrate
from cryodaq.simsrc import (CooldownProfile, CooldownSource, FieldRampProfile, QuenchScenario, RampMode,
                            SlowKind, SlowParams, SpectrumSource, TapSource, cooldown_at, current_ramp_rate,
                            field_at, slow_channel_at, voltage_tap_at)


def test_ramp_end_values_are_exact():
    assert field_at(FieldRampProfile.slow(), 5.0) == 15.0
    assert field_at(FieldRampProfile.fast(), 0.05) == 1.0


def test_field_constant_after_ramp():
    for prof in (FieldRampProfile.slow(), FieldRampProfile.fast()):
        end = field_at(prof, prof.duration_s)
        ts = prof.duration_s + np.array([0.0, 1e-9, 1.0, 1e3])
        assert all(field_at(prof, float(t)) == end for t in ts)
        assert np.all(field_at(prof, ts) == end)


def test_field_array_matches_scalar():
    prof = FieldRampProfile.fast()
    ts = np.linspace(0, 0.1, 101)
    assert field_at(prof, ts).tolist() == [field_at(prof, float(t)) for t in ts]


def test_fixed_modes_reject_other_rates():
    with pytest.raises(ConfigInvalid):
        FieldRampProfile(RampMode.SLOW, 4.0, 5.0)
    FieldRampProfile(RampMode.CUSTOM, 4.0, 5.0)
    assert FieldRampProfile.named("fast") == FieldRampProfile.fast()
    with pytest.raises(ConfigInvalid):
        FieldRampProfile.named("medium")


def test_cooldown_one_tau():
    p = CooldownProfile()
    assert cooldown_at(p, 0.0) == 300.0
    # 80 + 220/e
    assert cooldown_at(p, 3600.0) == pytest.approx(160.9334770577173, rel=1e-12)
    assert cooldown_at(p, 1e7) == pytest.approx(80.0, abs=1e-9)


def test_cooldown_monotone_toward_base():
    v = cooldown_at(CooldownProfile(), np.linspace(0, 36000, 500))
    assert np.all(np.diff(v) < 0) and np.all(v > 80.0)


def test_cooldown_source_round_trips_through_calibration():
    cal = CalibrationTable.piecewise([(0.0, 0.0), (1.0, 100.0), (2.0, 400.0)])
    src = CooldownSource(CooldownProfile(), cal)
    for t in (0.0, 100.0, 3600.0):
        assert calibrate(cal, src.volts(t)) == pytest.approx(cooldown_at(CooldownProfile(), t), rel=1e-12)


def test_tap_quench_growth():
    sc = QuenchScenario(onset_time_s=1.0, resistive_slope_V_per_s=100.0)
    assert voltage_tap_at(sc, 0.0, 0.5) == 0.0
    assert voltage_tap_at(sc, 0.0, 1.02) == pytest.approx(2.0, rel=1e-12)


def test_tap_inductive_pickup():
    sc = QuenchScenario(mutual_inductance_H=1e-6)
    ramp = FieldRampProfile.slow()
    rate = current_ramp_rate(sc, ramp, 1.0)
    assert rate == 10000.0
    assert voltage_tap_at(sc, rate, 1.0) == pytest.approx(0.01)
    assert current_ramp_rate(sc, ramp, 6.0) == 0.0


def test_tap_array_matches_scalar():
    sc = QuenchScenario(onset_time_s=0.01, noise_amp_V=0.05, mutual_inductance_H=2e-6, seed=5)
    src = TapSource(sc, FieldRampProfile.fast())
    ts = np.arange(0, 0.1, 1e-4)
    vec = src.volts(ts)
    scal = [voltage_tap_at(sc, current_ramp_rate(sc, src.ramp, float(t)), float(t)) for t in ts]
    assert vec.tolist() == scal


def test_noise_bounded_and_deterministic():
    sc = QuenchScenario(noise_amp_V=0.05, seed=9)
    ts = np.arange(100000) / 1e5
    a = voltage_tap_at(sc, 0.0, ts)
    assert np.all(np.abs(a) <= 0.05)
    assert np.array_equal(a, voltage_tap_at(sc, 0.0, ts))


def test_for_channel_seeds_differ_and_only_quenching_keeps_onset():
    sc = QuenchScenario(onset_time_s=0.3, seed=1)
    a, b = sc.for_channel(0, True), sc.for_channel(1, False)
    assert a.seed != b.seed
    assert a.onset_time_s == 0.3 and math.isinf(b.onset_time_s)


def test_slow_channel_bounds():
    p = SlowParams(baseline=1.2, amplitude=0.1, period_s=30.0)
    vals = [slow_channel_at(SlowKind.PRESSURE, p, t) for t in np.linspace(0, 60, 601)]
    assert min(vals) >= 1.1 - 1e-12 and max(vals) <= 1.3 + 1e-12
    assert slow_channel_at(SlowKind.FLOW_RATE, SlowParams(2.5), 123.0) == 2.5


def test_spectrum_frames():
    frames = SpectrumSource(n_bins=4, df_hz=25.0, corner_hz=50.0).frames(1.5)
    assert [f for _, f, _, _ in frames] == [25.0, 50.0, 75.0, 100.0]
    _, _, amp, ph = frames[1]
    assert amp == pytest.approx(1 / math.sqrt(2)) and ph == pytest.approx(-math.pi / 4)
