import os
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dastraffic.waterfall import (BIN_PITCH_M, SHOT_PERIOD_S, BadMagicError, ChecksumError,
                                  NonFiniteError, TruncatedError, Waterfall, from_bytes,
                                  load_waterfall, render_pgm, save_waterfall, to_bytes)

finite32 = st.floats(-1e6, 1e6, width=32, allow_nan=False, allow_infinity=False)
waterfalls = st.builds(
    Waterfall,
    arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=finite32),
    st.floats(0.01, 10), st.floats(1e-5, 1.0),
)


def test_defaults():
    w = Waterfall(np.zeros((2, 3)))
    assert w.bin_pitch_m == 0.68 and w.shot_period_s == 1 / 1000.04
    assert (w.bins, w.shots) == (2, 3)
    assert w.values.dtype == np.float32


def test_values_are_read_only():
    w = Waterfall(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        w.values[0, 0] = 1.0


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_rejects_non_finite(bad):
    v = np.zeros((2, 2))
    v[1, 0] = bad
    with pytest.raises(ValueError):
        Waterfall(v)


def test_rejects_bad_shape_and_pitch():
    with pytest.raises(ValueError):
        Waterfall(np.zeros(4))
    with pytest.raises(ValueError):
        Waterfall(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Waterfall(np.zeros((1, 1)), bin_pitch_m=0)
    with pytest.raises(ValueError):
        Waterfall(np.zeros((1, 1)), shot_period_s=-1)


def test_one_by_one_file_size_is_sum_of_fields(tmp_path):
    # magic 4 + version 2 + B 4 + M 4 + two f64 pitches 16 = 30-byte header,
    # then 4 payload bytes and an 8-byte trailer
    header = 4 + 2 + 4 + 4 + 8 + 8
    p = tmp_path / "w.dasw"
    save_waterfall(Waterfall(np.zeros((1, 1))), p)
    data = p.read_bytes()
    assert len(data) == header + 4 + 8 == 42
    assert data[:4] == b"DASW" and data[-4:] == b"WSAD"
    magic, version, b, m, pitch, period = struct.unpack_from("<4sHIIdd", data)
    assert (version, b, m, pitch, period) == (1, 1, 1, BIN_PITCH_M, SHOT_PERIOD_S)
    assert struct.unpack_from("<I", data, 34)[0] == zlib.crc32(data[30:34])


@settings(max_examples=60, deadline=None)
@given(waterfalls)
def test_round_trip_bitwise(w):
    back = from_bytes(to_bytes(w))
    assert back == w
    assert back.values.tobytes() == w.values.tobytes()
    assert (back.bin_pitch_m, back.shot_period_s) == (w.bin_pitch_m, w.shot_period_s)


def test_save_load_round_trip(tmp_path, rng):
    w = Waterfall(rng.standard_normal((7, 11)).astype(np.float32), 0.5, 0.002)
    save_waterfall(w, tmp_path / "a.dasw")
    assert load_waterfall(tmp_path / "a.dasw") == w


def test_negative_zero_survives(tmp_path):
    w = Waterfall(np.array([[-0.0, 0.0]]))
    back = from_bytes(to_bytes(w))
    assert np.signbit(back.values[0, 0]) and not np.signbit(back.values[0, 1])


def test_bad_magic():
    data = bytearray(to_bytes(Waterfall(np.zeros((2, 2)))))
    data[:4] = b"XXXX"
    with pytest.raises(BadMagicError, match="bad magic"):
        from_bytes(bytes(data))


def test_truncated_payload():
    data = to_bytes(Waterfall(np.zeros((4, 4))))
    with pytest.raises(TruncatedError, match="truncated"):
        from_bytes(data[:40])
    with pytest.raises(TruncatedError, match="truncated"):
        from_bytes(data[:10])


def test_header_claims_more_than_present():
    data = bytearray(to_bytes(Waterfall(np.zeros((2, 2)))))
    struct.pack_into("<I", data, 6, 1000)
    with pytest.raises(TruncatedError):
        from_bytes(bytes(data))


def test_checksum_mismatch():
    data = bytearray(to_bytes(Waterfall(np.ones((2, 2)))))
    data[31] ^= 0x01
    with pytest.raises(ChecksumError):
        from_bytes(bytes(data))


def test_non_finite_payload_detected():
    payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
    head = struct.pack("<4sHIIdd", b"DASW", 1, 1, 2, 0.68, 0.001)
    data = head + payload + struct.pack("<I4s", zlib.crc32(payload), b"WSAD")
    with pytest.raises(NonFiniteError, match="bin 0, shot 1"):
        from_bytes(data)


def test_errors_are_distinct():
    kinds = {BadMagicError, TruncatedError, ChecksumError, NonFiniteError}
    assert len(kinds) == 4
    assert not issubclass(BadMagicError, TruncatedError)


def test_unwritable_path_leaves_nothing(tmp_path):
    target = tmp_path / "missing-dir" / "w.dasw"
    with pytest.raises(OSError, match="w.dasw"):
        save_waterfall(Waterfall(np.zeros((1, 1))), target)
    assert not target.exists()


def test_failed_write_removes_temp(tmp_path, monkeypatch):
    import dastraffic.waterfall as wf

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(wf.os, "replace", boom)
    with pytest.raises(OSError):
        save_waterfall(Waterfall(np.zeros((1, 1))), tmp_path / "w.dasw")
    assert os.listdir(tmp_path) == []


def _pixels(img, w):
    header = f"P5\n{w.shots} {w.bins}\n255\n".encode()
    assert img.startswith(header)
    return np.frombuffer(img[len(header):], dtype=np.uint8).reshape(w.bins, w.shots)


def test_pgm_zero_maps_to_128():
    w = Waterfall(np.zeros((2, 3)))
    img = render_pgm(w, -1, 1)
    assert len(img) == len(b"P5\n3 2\n255\n") + 6
    assert (_pixels(img, w) == 128).all()


def test_pgm_endpoints_and_clamp():
    w = Waterfall(np.array([[-1.0, 1.0, 5.0, -7.0]]))
    assert _pixels(render_pgm(w, -1, 1), w).tolist() == [[0, 255, 255, 0]]


def test_pgm_needs_ordered_range():
    w = Waterfall(np.zeros((1, 1)))
    for lo, hi in [(1, 1), (2, 1)]:
        with pytest.raises(ValueError):
            render_pgm(w, lo, hi)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, 16, elements=st.floats(-3, 3, width=32)),
       st.floats(-2, 0), st.floats(0.1, 2))
def test_pgm_monotone_and_sized(vals, lo, span):
    w = Waterfall(np.sort(vals)[None, :])
    img = render_pgm(w, lo, lo + span)
    px = _pixels(img, w)[0].astype(int)
    assert (np.diff(px) >= 0).all()
