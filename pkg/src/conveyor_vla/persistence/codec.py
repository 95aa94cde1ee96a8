"""Little-endian named-tensor codec shared by episode and checkpoint files.

File layout: 4-byte magic, u32 version, an optional header section written by
the caller, then named tensors until end of file. A tensor is a u16 name
length, the UTF-8 name, a u8 rank, rank u32 dims and float32 data.
"""

import struct
from collections.abc import Iterator, Mapping
from typing import BinaryIO

import numpy as np

from conveyor_vla.errors import FormatError

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def write_preamble(f: BinaryIO, magic: bytes, version: int) -> None:
    f.write(magic)
    f.write(_U32.pack(version))


def read_preamble(f: BinaryIO, magic: bytes, supported: int) -> int:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version = _U32.unpack(_read_exact(f, _U32.size, "version"))[0]
    if version != supported:
        raise FormatError(f"unsupported format version {version} (supported: {supported})")
    return version


def write_blob(f: BinaryIO, blob: bytes) -> None:
    f.write(_U32.pack(len(blob)))
    f.write(blob)


def read_blob(f: BinaryIO, what: str) -> bytes:
    n = _U32.unpack(_read_exact(f, _U32.size, f"{what} length"))[0]
    return _read_exact(f, n, what)


def write_tensor(f: BinaryIO, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(np.asarray(array), dtype=_F32)
    f.write(_U16.pack(len(encoded)))
    f.write(encoded)
    f.write(_U8.pack(arr.ndim))
    for dim in arr.shape:
        f.write(_U32.pack(dim))
    f.write(arr.tobytes(order="C"))


def write_tensors(f: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    for name, array in tensors.items():
        write_tensor(f, name, array)


def iter_tensors(f: BinaryIO) -> Iterator[tuple[str, np.ndarray]]:
    while True:
        head = f.read(_U16.size)
        if not head:
            return
        if len(head) != _U16.size:
            raise FormatError("truncated file while reading tensor name length")
        name_len = _U16.unpack(head)[0]
        name = _read_exact(f, name_len, "tensor name").decode("utf-8")
        rank = _U8.unpack(_read_exact(f, _U8.size, f"rank of {name}"))[0]
        dims = tuple(
            _U32.unpack(_read_exact(f, _U32.size, f"dims of {name}"))[0] for _ in range(rank)
        )
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = _read_exact(f, count * _F32.itemsize, f"data of {name}")
        yield name, np.frombuffer(raw, dtype=_F32).reshape(dims).astype(np.float32)


def read_tensors(f: BinaryIO) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for name, arr in iter_tensors(f):
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        tensors[name] = arr
    return tensors
