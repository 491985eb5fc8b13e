"""MetaImage pair IO: bit-exact round trips and header policing."""

import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadeseg import (
    BinaryMask,
    FormatError,
    LabelVolume,
    Volume3,
    read_volume,
    write_volume,
)

SPACING = (0.8, 1.2, 2.5)


def _short_volume(dims_xyz=(7, 6, 5), seed=0):
    rng = np.random.default_rng(seed)
    data = rng.integers(-1024, 2048, size=dims_xyz[::-1], dtype=np.int16)
    return Volume3(data, SPACING)


def test_short_round_trip_is_bitwise(tmp_path):
    vol = _short_volume()
    write_volume(vol, tmp_path / "ct.mhd")
    back = read_volume(tmp_path / "ct.mhd")
    assert isinstance(back, Volume3)
    assert back.data.dtype == np.int16
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == SPACING


def test_uchar_round_trip_returns_labels(tmp_path):
    rng = np.random.default_rng(1)
    lab = LabelVolume(rng.integers(0, 5, size=(5, 6, 7), dtype=np.uint8), SPACING)
    write_volume(lab, tmp_path / "seg.mhd")
    back = read_volume(tmp_path / "seg.mhd")
    assert isinstance(back, LabelVolume)
    assert np.array_equal(back.data, lab.data)


def test_float_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(scale=1e-3, size=(4, 3, 2)).astype(np.float32)
    data[0, 0, 0] = np.float32(-0.0)
    vol = Volume3(data, SPACING)
    write_volume(vol, tmp_path / "prob.mhd")
    back = read_volume(tmp_path / "prob.mhd")
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == data.tobytes()


def test_mask_is_written_as_uchar(tmp_path):
    mask = BinaryMask(np.eye(4, dtype=bool)[None].repeat(3, axis=0), (1, 1, 1))
    write_volume(mask, tmp_path / "mask.mhd")
    back = read_volume(tmp_path / "mask.mhd")
    assert isinstance(back, LabelVolume)
    assert set(np.unique(back.data)) == {0, 1}
    assert np.array_equal(back.data.astype(bool), mask.data)


def test_float64_is_downcast_on_write(tmp_path):
    vol = Volume3(np.linspace(0, 1, 24).reshape(2, 3, 4), (1, 1, 1))
    write_volume(vol, tmp_path / "v.mhd")
    back = read_volume(tmp_path / "v.mhd")
    assert back.data.dtype == np.float32
    assert np.array_equal(back.data, vol.data.astype(np.float32))


def test_header_layout(tmp_path):
    write_volume(_short_volume((4, 5, 6)), tmp_path / "ct.mhd")
    lines = (tmp_path / "ct.mhd").read_text().splitlines()
    assert lines == [
        "ObjectType = Image",
        "NDims = 3",
        "DimSize = 4 5 6",
        "ElementSpacing = 0.8 1.2 2.5",
        "ElementType = MET_SHORT",
        "ElementByteOrderMSB = False",
        "ElementDataFile = ct.raw",
    ]


def test_payload_is_x_fastest_little_endian(tmp_path):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)  # [z, y, x]
    write_volume(Volume3(data, (1, 1, 1)), tmp_path / "v.mhd")
    raw = (tmp_path / "v.raw").read_bytes()
    assert raw == np.arange(24, dtype="<i2").tobytes()


def _write_pair(tmp_path, header: str, payload: bytes, name="bad"):
    (tmp_path / f"{name}.mhd").write_text(header)
    (tmp_path / f"{name}.raw").write_bytes(payload)
    return tmp_path / f"{name}.mhd"


def _header(**overrides):
    fields = {
        "ObjectType": "Image",
        "NDims": "3",
        "DimSize": "4 5 6",
        "ElementSpacing": "1 1 1",
        "ElementType": "MET_SHORT",
        "ElementByteOrderMSB": "False",
        "ElementDataFile": "bad.raw",
    }
    fields.update(overrides)
    return "".join(f"{k} = {v}\n" for k, v in fields.items() if v is not None)


def test_payload_size_mismatch(tmp_path):
    path = _write_pair(tmp_path, _header(), np.zeros(119, np.int16).tobytes())
    with pytest.raises(FormatError, match="238 bytes, header implies 240"):
        read_volume(path)


def test_big_endian_is_refused(tmp_path):
    path = _write_pair(
        tmp_path,
        _header(ElementByteOrderMSB="True"),
        np.zeros(120, np.int16).tobytes(),
    )
    with pytest.raises(FormatError, match="big-endian"):
        read_volume(path)


def test_unknown_header_key_is_named(tmp_path):
    path = _write_pair(
        tmp_path, _header() + "Offset = 0 0 0\n", np.zeros(120, np.int16).tobytes()
    )
    with pytest.raises(FormatError, match="Offset"):
        read_volume(path)


def test_missing_header_key_is_named(tmp_path):
    path = _write_pair(
        tmp_path, _header(ElementSpacing=None), np.zeros(120, np.int16).tobytes()
    )
    with pytest.raises(FormatError, match="ElementSpacing"):
        read_volume(path)


def test_duplicate_key_rejected(tmp_path):
    path = _write_pair(
        tmp_path, _header() + "NDims = 3\n", np.zeros(120, np.int16).tobytes()
    )
    with pytest.raises(FormatError, match="duplicate"):
        read_volume(path)


def test_bad_field_values(tmp_path):
    payload = np.zeros(120, np.int16).tobytes()
    for overrides, needle in [
        ({"ObjectType": "Mesh"}, "ObjectType"),
        ({"NDims": "2"}, "NDims"),
        ({"ElementType": "MET_DOUBLE"}, "MET_DOUBLE"),
        ({"DimSize": "4 five 6"}, "DimSize"),
        ({"ElementSpacing": "1 0 1"}, "ElementSpacing"),
    ]:
        path = _write_pair(tmp_path, _header(**overrides), payload)
        with pytest.raises(FormatError, match=needle):
            read_volume(path)


def test_missing_files_raise_format_error(tmp_path):
    with pytest.raises(FormatError, match="header"):
        read_volume(tmp_path / "absent.mhd")
    (tmp_path / "orphan.mhd").write_text(_header(ElementDataFile="orphan.raw"))
    with pytest.raises(FormatError, match="payload"):
        read_volume(tmp_path / "orphan.mhd")


@settings(deadline=None, max_examples=25)
@given(
    dims=st.tuples(*[st.integers(1, 6)] * 3),
    kind=st.sampled_from(["MET_SHORT", "MET_UCHAR", "MET_FLOAT"]),
    seed=st.integers(0, 2**16),
)
def test_round_trip_property(dims, kind, seed):
    rng = np.random.default_rng(seed)
    shape = dims[::-1]
    if kind == "MET_SHORT":
        vol = Volume3(rng.integers(-3000, 3000, shape, dtype=np.int16), (1, 1, 1))
    elif kind == "MET_UCHAR":
        vol = LabelVolume(rng.integers(0, 255, shape, dtype=np.uint8), (1, 1, 1))
    else:
        vol = Volume3(rng.normal(size=shape).astype(np.float32), (1, 1, 1))
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "v.mhd")
        write_volume(vol, path)
        back = read_volume(path)
        assert back.data.tobytes() == vol.data.tobytes()
        assert back.dims == vol.dims
