"""MetaImage (.mhd + .raw) reading and writing.

The header is a short text file of ``Key = Value`` lines; the payload is a
separate raw file in little-endian, x-fastest order, which is exactly the C
layout of our ``[z, y, x]`` arrays, so round trips are bitwise.  Scalar CT
goes out as MET_SHORT, derived float images as MET_FLOAT, and labels or
masks as MET_UCHAR.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError
from .volume import BinaryMask, LabelVolume, Volume3

_ELEMENT_DTYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
    "MET_FLOAT": np.dtype("<f4"),
}
_HEADER_KEYS = (
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementSpacing",
    "ElementType",
    "ElementByteOrderMSB",
    "ElementDataFile",
)


def _element_type(data: np.ndarray) -> str:
    for name, dt in _ELEMENT_DTYPES.items():
        if data.dtype == dt:
            return name
    raise FormatError(f"no MetaImage element type for dtype {data.dtype}")


def _paths(path):
    header = os.fspath(path)
    stem = header[:-4] if header.endswith(".mhd") else header
    return header, stem + ".raw"


def write_volume(vol, path) -> None:
    """Write a Volume3 / LabelVolume / BinaryMask as an .mhd/.raw pair."""
    if isinstance(vol, BinaryMask):
        data = vol.data.astype(np.uint8)
    elif isinstance(vol, (Volume3, LabelVolume)):
        data = np.ascontiguousarray(vol.data)
        if data.dtype == np.float64:
            data = data.astype(np.float32)
    else:
        raise FormatError(f"cannot write object of type {type(vol).__name__}")
    header_path, raw_path = _paths(path)
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementSpacing = {sx:g} {sy:g} {sz:g}",
        f"ElementType = {_element_type(data)}",
        "ElementByteOrderMSB = False",
        f"ElementDataFile = {os.path.basename(raw_path)}",
    ]
    with open(header_path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    with open(raw_path, "wb") as f:
        f.write(data.tobytes())


def _parse_header(text: str, path) -> dict:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {lineno} is not 'Key = Value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _HEADER_KEYS:
            raise FormatError(f"{path}: unknown header key {key!r}")
        if key in fields:
            raise FormatError(f"{path}: duplicate header key {key!r}")
        fields[key] = value.strip()
    for key in _HEADER_KEYS:
        if key not in fields:
            raise FormatError(f"{path}: missing header key {key!r}")
    return fields


def read_volume(path):
    """Read an .mhd/.raw pair; MET_UCHAR comes back as a LabelVolume."""
    header_path, _ = _paths(path)
    try:
        with open(header_path, "r", encoding="ascii") as f:
            fields = _parse_header(f.read(), header_path)
    except OSError as e:
        raise FormatError(f"cannot read header {header_path}: {e}") from e

    if fields["ObjectType"] != "Image":
        raise FormatError(f"{header_path}: ObjectType must be Image")
    if fields["NDims"] != "3":
        raise FormatError(f"{header_path}: NDims must be 3")
    if fields["ElementByteOrderMSB"] != "False":
        raise FormatError(f"{header_path}: big-endian payloads are not supported")
    if fields["ElementType"] not in _ELEMENT_DTYPES:
        raise FormatError(f"{header_path}: ElementType {fields['ElementType']!r} not supported")
    try:
        dims = tuple(int(t) for t in fields["DimSize"].split())
        spacing = tuple(float(t) for t in fields["ElementSpacing"].split())
    except ValueError as e:
        raise FormatError(f"{header_path}: bad DimSize/ElementSpacing: {e}") from e
    if len(dims) != 3 or min(dims) < 1:
        raise FormatError(f"{header_path}: DimSize must be three positive integers")
    if len(spacing) != 3 or min(spacing) <= 0:
        raise FormatError(f"{header_path}: ElementSpacing must be three positive numbers")

    dtype = _ELEMENT_DTYPES[fields["ElementType"]]
    raw_path = os.path.join(os.path.dirname(header_path), fields["ElementDataFile"])
    try:
        with open(raw_path, "rb") as f:
            payload = f.read()
    except OSError as e:
        raise FormatError(f"cannot read payload {raw_path}: {e}") from e
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{raw_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims[::-1]).copy()
    if fields["ElementType"] == "MET_UCHAR":
        return LabelVolume(data, spacing)
    return Volume3(data, spacing)
