"""Binary container shared by the dataset and checkpoint file formats.

Layout (all integers little-endian):

    magic           4 bytes
    version         u32
    metadata        u64 byte length + UTF-8 JSON
    tensor count    u64
    per tensor:
        name        u64 byte length + UTF-8
        rank        u32
        dims        u64 each
        dtype tag   u8 (0 = float64)
        data        raw float64, little-endian, row-major

Readers report precise byte offsets on magic, version, truncation and
duplicate-name violations so corruption is diagnosable.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Dict, Tuple

import numpy as np

from .errors import (
    DuplicateTensorError,
    FormatError,
    MagicError,
    TruncatedFileError,
    VersionError,
)

DTYPE_F64 = 0

# Keep name lengths sane; anything bigger is more likely corruption than intent.
_MAX_BLOB = 1 << 40


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    offset = fh.tell()
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(
            f"file truncated reading {what}: wanted {n} bytes, got {len(data)}", offset
        )
    return data


def write_container(
    fh: BinaryIO, magic: bytes, version: int, metadata: dict, tensors: Dict[str, np.ndarray]
) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    fh.write(magic)
    fh.write(struct.pack("<I", version))
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<Q", len(meta_bytes)))
    fh.write(meta_bytes)
    fh.write(struct.pack("<Q", len(tensors)))
    # Name-sorted so that save -> load -> save is byte-stable.
    for name, arr in sorted(tensors.items()):
        name_bytes = name.encode("utf-8")
        fh.write(struct.pack("<Q", len(name_bytes)))
        fh.write(name_bytes)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(struct.pack("<B", DTYPE_F64))
        fh.write(arr.astype("<f8", copy=False).tobytes())


def read_container(
    fh: BinaryIO, expected_magic: bytes, expected_version: int
) -> Tuple[dict, Dict[str, np.ndarray]]:
    magic = _read_exact(fh, 4, "magic")
    if magic != expected_magic:
        raise MagicError(
            f"bad magic: expected {expected_magic!r}, found {magic!r}", 0
        )
    version_offset = fh.tell()
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != expected_version:
        raise VersionError(
            f"unsupported version {version}, expected {expected_version}", version_offset
        )
    meta_len_offset = fh.tell()
    (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
    if meta_len > _MAX_BLOB:
        raise FormatError(f"implausible metadata length {meta_len}", meta_len_offset)
    meta_bytes = _read_exact(fh, meta_len, "metadata")
    try:
        metadata = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", meta_len_offset + 8) from exc
    (count,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor count"))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len_offset = fh.tell()
        (name_len,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor name length"))
        if name_len > _MAX_BLOB:
            raise FormatError(f"implausible name length {name_len}", name_len_offset)
        name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
        if name in tensors:
            raise DuplicateTensorError(f"duplicate tensor name {name!r}", name_len_offset)
        (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
        dims = []
        for _ in range(rank):
            (dim,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor dim"))
            dims.append(dim)
        tag_offset = fh.tell()
        (tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
        if tag != DTYPE_F64:
            raise FormatError(f"unknown dtype tag {tag}", tag_offset)
        n_elem = 1
        for dim in dims:
            n_elem *= dim
        raw = _read_exact(fh, 8 * n_elem, f"tensor data for {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return metadata, tensors


def container_size(metadata: dict, tensors: Dict[str, np.ndarray]) -> int:
    """Exact byte size a container will occupy on disk."""
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    size = 4 + 4 + 8 + len(meta_bytes) + 8
    for name, arr in tensors.items():
        size += 8 + len(name.encode("utf-8")) + 4 + 8 * arr.ndim + 1 + 8 * arr.size
    return size
