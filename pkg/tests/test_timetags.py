import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipole_qrng.errors import FormatError
from dipole_qrng.timetags import (
    PTAG_MAGIC,
    Detector,
    TimeTags,
    decode_ptag,
    decode_tags_csv,
    encode_ptag,
    encode_tags_csv,
    read_tags,
    write_ptag,
)


@st.composite
def tag_streams(draw, max_size=200):
    n = draw(st.integers(0, max_size))
    ts = np.sort(np.array(draw(st.lists(st.integers(0, 2**62), min_size=n, max_size=n)), dtype=np.int64))
    det = np.array(draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)), dtype=np.uint8)
    order = np.lexsort((det, ts))
    return TimeTags(ts[order], det[order])


@given(tag_streams())
def test_ptag_round_trip(tags):
    data = encode_ptag(tags)
    assert len(data) == 16 + 9 * len(tags)
    assert decode_ptag(data).equals(tags)


@given(tag_streams(max_size=50))
def test_csv_round_trip(tags):
    assert decode_tags_csv(encode_tags_csv(tags).decode()).equals(tags)


def test_detector_parse():
    assert Detector.parse("r1") is Detector.R1
    assert Detector.parse(2) is Detector.T1
    with pytest.raises(ValueError):
        Detector.parse("X9")


def test_tags_are_read_only():
    tags = TimeTags(np.array([1, 2]), np.array([0, 1], dtype=np.uint8))
    with pytest.raises(ValueError):
        tags.timestamp_ps[0] = 5


def test_sortedness_includes_detector_ties():
    assert not TimeTags(np.array([5, 1]), np.array([0, 0], dtype=np.uint8)).is_sorted()
    assert not TimeTags(np.array([5, 5]), np.array([2, 0], dtype=np.uint8)).is_sorted()
    assert TimeTags(np.array([5, 5]), np.array([0, 2], dtype=np.uint8)).is_sorted()


def test_from_channels_merges_and_breaks_ties_by_detector():
    tags = TimeTags.from_channels({"T1": [10, 20], "R1": [20], "R2": [5]})
    assert tags.timestamp_ps.tolist() == [5, 10, 20, 20]
    assert tags.detector.tolist() == [1, 2, 0, 2]
    assert tags.counts() == {"R1": 1, "R2": 1, "T1": 2}


def _sample():
    return TimeTags(np.array([1, 7, 9]), np.array([0, 2, 1], dtype=np.uint8))


def test_bad_magic_names_expected_magic():
    data = bytearray(encode_ptag(_sample()))
    data[0:4] = b"XXXX"
    with pytest.raises(FormatError, match=r"PTAG1") as exc:
        decode_ptag(bytes(data))
    assert exc.value.offset == 0


def test_truncated_record_offset():
    data = encode_ptag(_sample())[:-4]
    with pytest.raises(FormatError, match="truncated") as exc:
        decode_ptag(data)
    assert exc.value.offset == 16 + 2 * 9


def test_bad_detector_offset():
    data = bytearray(encode_ptag(_sample()))
    data[16 + 9 + 8] = 7
    with pytest.raises(FormatError, match="detector id 7") as exc:
        decode_ptag(bytes(data))
    assert exc.value.offset == 16 + 9 + 8
    assert "byte offset 33" in str(exc.value)


def test_out_of_order_record_offset():
    data = bytearray(encode_ptag(_sample()))
    data[16 + 18 : 16 + 26] = (0).to_bytes(8, "little")
    with pytest.raises(FormatError, match="order") as exc:
        decode_ptag(bytes(data))
    assert exc.value.offset == 16 + 18


def test_bad_version():
    data = bytearray(encode_ptag(_sample()))
    data[6] = 9
    with pytest.raises(FormatError, match="version"):
        decode_ptag(bytes(data))


def test_short_header():
    with pytest.raises(FormatError, match="header"):
        decode_ptag(PTAG_MAGIC)


def test_file_round_trip_and_sniffing(tmp_path):
    tags = _sample()
    write_ptag(tmp_path / "t.bin", tags)
    assert read_tags(tmp_path / "t.bin").equals(tags)
    (tmp_path / "t.txt").write_bytes(encode_tags_csv(tags))
    assert read_tags(tmp_path / "t.txt").equals(tags)
    assert not list(tmp_path.glob(".*.tmp"))


def test_csv_errors_carry_line():
    with pytest.raises(FormatError, match="line 2"):
        decode_tags_csv("timestamp_ps,detector\n12,Q7\n")
