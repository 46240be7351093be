"""
A small versioned binary container for model checkpoints and prepared
documents.

Layout of a container file:

    magic            4 bytes, identifies the payload kind
    version          uint32, little-endian
    header length    uint32, little-endian
    header           UTF-8 JSON object with sorted keys
    arrays           raw payloads in the order of the header's "arrays" list

The header's "arrays" entry lists ``{"name", "dtype", "shape"}`` for every
array. Floating point arrays are stored as ``<f8`` and integer arrays as
``<i8``, both little-endian regardless of the host.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from .errors import InputError

__all__ = ["read_container", "write_container"]

_PREAMBLE = struct.Struct("<4sII")
_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "<i8"}


def write_container(
    path: Union[str, Path],
    magic: bytes,
    version: int,
    header: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> None:
    """
    Write a container file.

    Arguments:
        path: Destination file.
        magic: Four-byte payload identifier.
        version: Format version of the payload.
        header: JSON-serialisable metadata. Must not contain the key "arrays".
        arrays: Named arrays, written in mapping order.
    """
    assert len(magic) == 4
    assert "arrays" not in header

    converted = []
    for name, array in arrays.items():
        dtype = _DTYPES[np.asarray(array).dtype.kind]
        converted.append((name, np.ascontiguousarray(array, dtype=dtype)))

    full_header = dict(header)
    full_header["arrays"] = [
        {"name": name, "dtype": array.dtype.str, "shape": list(array.shape)}
        for name, array in converted
    ]
    encoded = json.dumps(full_header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as stream:
        stream.write(_PREAMBLE.pack(magic, version, len(encoded)))
        stream.write(encoded)
        for _, array in converted:
            stream.write(array.tobytes())


def read_container(
    path: Union[str, Path], magic: bytes, version: int
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a container file written by `write_container`.

    Returns:
        The header (without the array manifest) and the arrays by name.

    Raises:
        InputError: The file is truncated, has a different magic or a
            different format version.
    """
    data = Path(path).read_bytes()
    if len(data) < _PREAMBLE.size:
        raise InputError(f"‘{path}’ is too short to be a checkpoint.")

    found_magic, found_version, header_length = _PREAMBLE.unpack_from(data)
    if found_magic != magic:
        raise InputError(
            f"‘{path}’ is not a {magic.decode('ascii')} file "
            f"(found {found_magic!r})."
        )
    if found_version != version:
        raise InputError(
            f"‘{path}’ has format version {found_version}, expected {version}."
        )

    offset = _PREAMBLE.size
    header = json.loads(data[offset : offset + header_length].decode("utf-8"))
    offset += header_length

    arrays: Dict[str, np.ndarray] = {}
    for entry in header.pop("arrays"):
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(data):
            raise InputError(f"‘{path}’ is truncated in array ‘{entry['name']}’.")
        native = dtype.newbyteorder("=")
        if count == 0:
            arrays[entry["name"]] = np.zeros(shape, dtype=native)
            continue
        array = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        # Native byte order and a writable copy, detached from the file buffer.
        arrays[entry["name"]] = array.astype(native, copy=True).reshape(shape)
        offset += size

    return header, arrays
