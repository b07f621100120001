import os
import threading

import numpy as np
import pytest

from cryodaq.archive import (RECORD_SIZE, Archive, ArchiveKey, Gap, SidecarMeta, format_records, parse_text,
                             read_binary)
from cryodaq.errors import KeyNotFound, TimeRegression

KEY = ArchiveKey("2024-03-01", "TS01", "TEMP")


def scan_oracle(records, lo, hi):
    return np.array([r for r in records.tolist() if lo <= r[0] <= hi]).reshape(-1, 3)


def test_single_record_bytes(archive):
    archive.append(KEY, [(1.0, 2.0, 2.0)])
    data = archive.data_path(KEY).read_bytes()
    assert data.hex().upper() == "000000000000F03F" "0000000000000040" "0000000000000040"
    assert archive.export(KEY) == data


def test_thousand_records_grow_file_by_24000(archive):
    archive.append(KEY, [(0.0, 0.0, 0.0)])
    before = os.path.getsize(archive.data_path(KEY))
    t = np.arange(1, 1001, dtype=float)
    archive.append(KEY, np.column_stack([t, t, t]))
    assert os.path.getsize(archive.data_path(KEY)) - before == 24000


def test_time_regression_leaves_file_unchanged(archive):
    archive.append(KEY, [(5.0, 1.0, 1.0)])
    before = archive.data_path(KEY).read_bytes()
    with pytest.raises(TimeRegression):
        archive.append(KEY, [(4.0, 1.0, 1.0)])
    with pytest.raises(TimeRegression):
        archive.append(KEY, [(6.0, 0, 0), (5.5, 0, 0)])
    assert archive.data_path(KEY).read_bytes() == before
    archive.append(KEY, [(5.0, 2.0, 2.0)])  # equal time is allowed


def test_regression_detected_by_fresh_writer(archive):
    archive.append(KEY, [(5.0, 1.0, 1.0)])
    with pytest.raises(TimeRegression):
        Archive(archive.root).append(KEY, [(1.0, 0, 0)])


def test_query_inclusive_bounds(archive):
    t = np.arange(10, dtype=float)
    archive.append(KEY, np.column_stack([t, t * 2, t * 3]))
    q = archive.query(KEY, 2.0, 5.0)
    assert q[:, 0].tolist() == [2.0, 3.0, 4.0, 5.0]
    assert archive.query(KEY, 3.0, 3.0)[:, 0].tolist() == [3.0]
    assert archive.query(KEY, 3.5, 3.6).shape == (0, 3)
    assert archive.query(KEY, -10, 100).shape == (10, 3)
    with pytest.raises(ValueError):
        archive.query(KEY, 2.0, 1.0)


def test_query_duplicated_times(archive):
    archive.append(KEY, [(1.0, 0, 0), (2.0, 1, 1), (2.0, 2, 2), (2.0, 3, 3), (3.0, 4, 4)])
    assert archive.query(KEY, 2.0, 2.0)[:, 1].tolist() == [1, 2, 3]


def test_query_matches_full_scan(archive):
    rng = np.random.default_rng(4)
    for i in range(20):
        key = KEY.with_data(f"Q{i}")
        n = int(rng.integers(0, 500))
        t = np.sort(rng.choice(np.arange(0, 200, 0.5), n))
        rec = np.column_stack([t, rng.normal(size=n), rng.normal(size=n)])
        if n:
            archive.append(key, rec)
        else:
            archive.append(key, np.empty((0, 3)))
            archive.data_path(key).parent.mkdir(parents=True, exist_ok=True)
            archive.data_path(key).touch()
        for _ in range(10):
            lo, hi = sorted(rng.choice(np.arange(-5, 205, 0.5), 2))
            assert np.array_equal(archive.query(key, lo, hi), scan_oracle(rec, lo, hi))


def test_missing_key(archive):
    with pytest.raises(KeyNotFound):
        archive.query(KEY, 0, 1)
    with pytest.raises(KeyNotFound):
        archive.read_meta(KEY)


def test_text_format():
    assert format_records(np.array([[0.0, 1.0, 1.0]])) == "0 1 1\n"
    assert format_records(np.array([[0.1, -2.5e-300, 1e21]])) == "0.10000000000000001 -2.5e-300 1e+21\n"


def test_text_round_trip_is_bit_exact(archive):
    rng = np.random.default_rng(1)
    t = np.cumsum(rng.random(5000))
    rec = np.column_stack([t, rng.normal(size=5000) * 1e6, rng.standard_cauchy(5000)])
    archive.append(KEY, rec)
    text = archive.export(KEY, fmt="text").decode()
    assert parse_text(text).tobytes() == archive.export(KEY, fmt="binary")
    assert np.array_equal(read_binary(archive.export(KEY)), rec)


def test_read_binary_ignores_trailing_partial_record():
    data = np.arange(6, dtype="<f8").tobytes()
    assert read_binary(data + b"\x00" * 5).tolist() == [[0, 1, 2], [3, 4, 5]]


def test_sidecar_round_trip_and_gaps(archive):
    meta = SidecarMeta("TS01", "TEMP", units_raw="V", units_cal="K", session_start_utc="2024-03-01T00:00:00Z",
                       slow_period_s=1.0)
    archive.append(KEY, [(0.0, 1.0, 300.0)], meta)
    archive.mark_gap(KEY, Gap(1.0, 2.0, 2))
    got = archive.read_meta(KEY)
    assert got.units_cal == "K" and got.slow_period_s == 1.0
    assert got.gaps == (Gap(1.0, 2.0, 2),)
    text = archive.meta_path(KEY).read_text()
    assert "units_cal=K" in text and "gap=1.0 2.0 2" in text
    assert SidecarMeta.loads(got.dumps()) == got


def test_spectral_split(archive):
    base = ArchiveKey("2024-03-01", "SA01", "SPEC")
    amp, phs = archive.write_spectral(base, [(0.0, 10.0, 0.9, -0.1), (0.0, 20.0, 0.8, -0.2)])
    assert amp.data_name == "SPEC_AMP" and phs.data_name == "SPEC_PHS"
    assert archive.read_all(amp).tolist() == [[0, 10, 0.9], [0, 20, 0.8]]
    assert archive.read_all(phs).tolist() == [[0, 10, -0.1], [0, 20, -0.2]]
    assert archive.read_meta(amp).kind == "spectral_amplitude"


def test_list_keys_and_filters(archive):
    for date, dev, data in [("2024-03-01", "TS01", "TEMP"), ("2024-03-02", "TS01", "TEMP"),
                            ("2024-03-02", "HE01", "PRES")]:
        archive.append(ArchiveKey(date, dev, data), [(0.0, 0.0, 0.0)])
    assert [k.full_name for k in archive.list_keys()] == ["TS01.TEMP", "HE01.PRES", "TS01.TEMP"]
    assert archive.list_keys(date_filter="2024-03-02", name_filter="HE*") == [ArchiveKey("2024-03-02", "HE01", "PRES")]
    assert archive.list_keys(name_filter="*.TEMP")[0].date == "2024-03-01"


def test_tail(archive):
    t = np.arange(5, dtype=float)
    archive.append(KEY, np.column_stack([t, t, t]))
    assert archive.tail(KEY, 2.0)[:, 0].tolist() == [3.0, 4.0]
    assert archive.tail(KEY, 10.0).shape == (0, 3)


def test_invalid_keys():
    with pytest.raises(ValueError):
        ArchiveKey("2024/03/01", "TS01", "TEMP")
    with pytest.raises(ValueError):
        ArchiveKey("2024-03-01", "../x", "TEMP")


def test_concurrent_reader_never_sees_torn_records(archive):
    errors = []

    def writer():
        t0 = 0.0
        for _ in range(400):
            t = t0 + np.arange(997)
            archive.append(KEY, np.column_stack([t, t, t]))
            t0 += 997

    archive.append(KEY, [(-1.0, -1.0, -1.0)])
    th = threading.Thread(target=writer)
    th.start()
    try:
        while th.is_alive():
            size = archive.committed_size(KEY)
            if size % RECORD_SIZE:
                errors.append(size)
            rec = archive.read_all(KEY)
            if (len(rec) - 1) % 997 or not np.all(rec[:, 0] == rec[:, 2]):
                errors.append(len(rec))
    finally:
        th.join()
    assert errors == []
