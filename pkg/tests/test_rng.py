import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cryodaq.rng import SplitMix64, Xoshiro256StarStar, noise_at, uniform_at, uniform_at_array


def test_splitmix64_reference_values():
    # published reference outputs for seed 1234567
    sm = SplitMix64(1234567)
    assert [sm.next() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_xoshiro_first_output_depends_only_on_s1():
    g = Xoshiro256StarStar(99)
    s1 = g.s[1]
    expected = (((((s1 * 5) & (2**64 - 1)) << 7) | (((s1 * 5) & (2**64 - 1)) >> 57)) & (2**64 - 1)) * 9 % 2**64
    assert g.next() == expected


def test_generator_sequence_is_reproducible():
    a, b = Xoshiro256StarStar(7), Xoshiro256StarStar(7)
    assert [a.next() for _ in range(10)] == [b.next() for _ in range(10)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**63 - 1), st.lists(st.floats(0, 1e4), min_size=1, max_size=40))
def test_vectorised_uniform_matches_full_generator(seed, ts):
    vec = uniform_at_array(seed, np.array(ts))
    assert vec.tolist() == [uniform_at(seed, t) for t in ts]


def test_uniform_range_and_spread():
    u = uniform_at_array(3, np.arange(200000) / 1e5)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_noise_bounds():
    n = noise_at(11, 0.25, np.arange(10000) / 1e5)
    assert np.all(np.abs(n) <= 0.25)
