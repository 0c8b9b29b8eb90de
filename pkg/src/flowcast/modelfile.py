"""Checksummed binary container for trained artifacts (encoder weights and
full models): a JSON metadata block plus named float64 arrays, every block
CRC-protected so corruption and version skew fail loudly."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ArtifactError

_MAGIC = b"FCMF"
_VERSION = 1


def save_artifact(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta)
    meta["kind"] = kind
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<H", _VERSION)
    out += struct.pack("<I", len(meta_blob)) + meta_blob
    out += struct.pack("<I", zlib.crc32(meta_blob))
    out += struct.pack("<I", len(arrays))
    for name, value in arrays.items():
        encoded = name.encode()
        arr = np.asarray(value, dtype="<f8")  # tobytes() copies in C order
        block = bytearray()
        block += struct.pack("<H", len(encoded)) + encoded
        block += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            block += struct.pack("<I", dim)
        block += arr.tobytes()
        out += struct.pack("<Q", len(block)) + block
        out += struct.pack("<I", zlib.crc32(bytes(block)))
    Path(path).write_bytes(bytes(out))


def load_artifact(path, expected_kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(
            f"artifact not found: {path}; run the stage that produces it first"
        )
    raw = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ArtifactError(f"{path}: truncated artifact")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    def unpack(fmt: str):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if take(4) != _MAGIC:
        raise ArtifactError(f"{path}: not a flowcast artifact")
    (version,) = unpack("<H")
    if version != _VERSION:
        raise ArtifactError(
            f"{path}: artifact version {version} unsupported (expected "
            f"{_VERSION}); regenerate it with this build"
        )
    (meta_len,) = unpack("<I")
    meta_blob = take(meta_len)
    (meta_crc,) = unpack("<I")
    if zlib.crc32(meta_blob) != meta_crc:
        raise ArtifactError(f"{path}: metadata failed its checksum")
    meta = json.loads(meta_blob.decode())
    if meta.get("kind") != expected_kind:
        raise ArtifactError(
            f"{path}: artifact kind {meta.get('kind')!r} where {expected_kind!r} "
            "was required; check the stage wiring"
        )
    (n_arrays,) = unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for i in range(n_arrays):
        (block_len,) = unpack("<Q")
        block = take(block_len)
        (crc,) = unpack("<I")
        if zlib.crc32(block) != crc:
            raise ArtifactError(f"{path}: array block {i} failed its checksum")
        arrays.update([_parse_array(block, path)])
    if pos != len(raw):
        raise ArtifactError(f"{path}: {len(raw) - pos} trailing bytes")
    return meta, arrays


def _parse_array(block: bytes, path) -> tuple[str, np.ndarray]:
    pos = 0
    (name_len,) = struct.unpack_from("<H", block, pos)
    pos += 2
    name = block[pos:pos + name_len].decode()
    pos += name_len
    (ndim,) = struct.unpack_from("<B", block, pos)
    pos += 1
    shape = []
    for _ in range(ndim):
        (dim,) = struct.unpack_from("<I", block, pos)
        pos += 4
        shape.append(dim)
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(block, dtype="<f8", count=count, offset=pos)
    return name, data.reshape(shape).copy()
