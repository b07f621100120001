import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cryodaq.quench import (DetectorConfig, DumpModel, detect_block, detect_step, dissipated_energy,
                            dissipated_energy_exact, dump_current, new_state, quadrature_error_bound,
                            stored_energy)
from cryodaq.registry import Sample

RATE = 100_000.0


def counter_oracle(v_comp, threshold, hold):
    """Plain loop: index of the first sample ending a run of `hold` exceedances."""
    run = 0
    for i, v in enumerate(v_comp):
        run = run + 1 if v > threshold else 0
        if run == hold:
            return i
    return None


def run_steps(cfg, raws, dI=0.0):
    st_ = new_state(cfg, 0, RATE)
    for i, v in enumerate(raws):
        trig = detect_step(cfg, st_, Sample(i / RATE, float(v), float(v)), dI)
        if trig:
            return trig
    return None


def test_hold_samples():
    cfg = DetectorConfig()
    assert cfg.hold_samples(100_000) == 200
    assert cfg.hold_samples(10_000) == 20
    assert DetectorConfig(hold_time_s=1e-6).hold_samples(1000) == 1


def test_step_at_1000_fires_at_1199():
    raws = np.zeros(3000)
    raws[1000:] = 0.5
    trig = run_steps(DetectorConfig(), raws)
    assert trig.sample_index == 1199
    assert trig.trigger_time_s == 1199 / RATE
    assert trig.compensated_volts_at_trigger == 0.5
    assert trig.record() == (1199 / RATE, 0.5, 1.0)


def test_short_bursts_never_fire():
    raws = np.zeros(5000)
    for start in range(0, 5000, 400):
        raws[start:start + 150] = 1.0
    assert run_steps(DetectorConfig(), raws) is None


def test_threshold_is_strict():
    assert run_steps(DetectorConfig(threshold_volts=0.1), np.full(500, 0.1)) is None


def test_trigger_latches():
    cfg = DetectorConfig()
    s = new_state(cfg, 3, RATE)
    fired = [detect_step(cfg, s, Sample(i / RATE, 1.0, 1.0), 0.0) for i in range(1000)]
    assert sum(f is not None for f in fired) == 1


def test_compensation_suppresses_inductive_pickup():
    cfg = DetectorConfig(mutual_inductance_H=1e-5)
    dI = 1e5  # 1 V of pickup
    assert run_steps(cfg, np.full(2000, 1.0), dI) is None
    assert run_steps(DetectorConfig(), np.full(2000, 1.0), dI).sample_index == 199


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.integers(1, 700))
def test_block_equals_step_and_oracle(seed, hold, block):
    rng = np.random.default_rng(seed)
    raws = rng.choice([0.0, 0.05, 0.2], size=2000, p=[0.1, 0.1, 0.8])
    cfg = DetectorConfig(threshold_volts=0.1, hold_time_s=hold / RATE)
    expected = counter_oracle(raws, 0.1, hold)
    trig = run_steps(cfg, raws)
    assert (trig.sample_index if trig else None) == expected
    st_ = new_state(cfg, 0, RATE)
    t = np.arange(len(raws)) / RATE
    got = None
    for a in range(0, len(raws), block):
        got = got or detect_block(cfg, st_, t[a:a + block], raws[a:a + block], 0.0)
    assert (got.sample_index if got else None) == expected
    if got:
        assert got.trigger_time_s == trig.trigger_time_s


def test_dump_current_after_one_tau():
    m = DumpModel(2.0, 1.0, 50000.0)
    assert dump_current(m, m.tau) == pytest.approx(18393.972058572117, rel=1e-12)
    assert dump_current(m, 0.0) == 50000.0


def test_stored_energy_example():
    assert stored_energy(DumpModel(2.0, 1.0, 50000.0)) == 2.5e9


def test_exact_energy_closed_form():
    m = DumpModel(2.0, 0.5, 50000.0)
    assert dissipated_energy_exact(m, 10 * m.tau) == pytest.approx(2.5e9 * (1 - math.exp(-20)), rel=1e-14)


@pytest.mark.parametrize("rule", ["midpoint", "trapezoid"])
def test_quadrature_within_error_bound(rule):
    m = DumpModel(0.7, 0.3, 50000.0)
    t_end, dt = 10 * m.tau, m.tau / 1000
    exact = dissipated_energy_exact(m, t_end)
    approx = dissipated_energy(m, t_end, dt, rule)
    assert abs(approx - exact) <= quadrature_error_bound(m, t_end, dt, rule)


def test_midpoint_undershoots_trapezoid_overshoots():
    m = DumpModel(1.0, 1.0, 1000.0)
    exact = dissipated_energy_exact(m, 10.0)
    assert dissipated_energy(m, 10.0, 0.01, "midpoint") < exact < dissipated_energy(m, 10.0, 0.01, "trapezoid")


def test_ragged_grid_and_zero_current():
    m = DumpModel(1.0, 1.0, 10.0)
    assert abs(dissipated_energy(m, 1.0, 0.3) - dissipated_energy_exact(m, 1.0)) <= quadrature_error_bound(m, 1.0, 0.3)
    assert dissipated_energy(DumpModel(1.0, 1.0, 0.0), 1.0, 0.1) == 0.0
    with pytest.raises(ValueError):
        dissipated_energy(m, 1.0, 0.1, "simpson")
