"""Bit-exact binary codec for sparse structures and structured latents.

Little-endian layout::

    magic   "NVX1"                      4 bytes
    kind    u8   (0 occupancy, 1 latent)
    res     u16
    count   u32
    chans   u16  (latent kind only)
    coords  count x 3 u16, linear-index order
    latents count x chans f32, same order (latent kind only)
    crc32   u32 over all preceding bytes
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import BadMagic, ChecksumMismatch, MalformedNvx, TruncatedFile, UnsupportedVersion
from .grid import COORD_DTYPE, SparseStructure, StructuredLatent, _freeze, linear_index

MAGIC = b"NVX1"
KIND_OCCUPANCY = 0
KIND_LATENT = 1

_HEADER = struct.Struct("<BHI")
_CHANS = struct.Struct("<H")
_CRC = struct.Struct("<I")


def encode_nvx(payload) -> bytes:
    if isinstance(payload, SparseStructure):
        kind, channels = KIND_OCCUPANCY, None
    elif isinstance(payload, StructuredLatent):
        kind, channels = KIND_LATENT, payload.channels
    else:
        raise TypeError(f"cannot encode {type(payload).__name__}")

    buf = bytearray(MAGIC)
    buf += _HEADER.pack(kind, payload.resolution, payload.voxel_sum)
    if kind == KIND_LATENT:
        buf += _CHANS.pack(channels)
    buf += np.ascontiguousarray(payload.coords, dtype="<u2").tobytes()
    if kind == KIND_LATENT:
        buf += np.ascontiguousarray(payload.latents, dtype="<f4").tobytes()
    buf += _CRC.pack(zlib.crc32(bytes(buf)))
    return bytes(buf)


def decode_nvx(data: bytes):
    if len(data) < len(MAGIC):
        raise TruncatedFile(f"{len(data)} bytes is too short for a header")
    if data[:4] != MAGIC:
        if data[:3] == MAGIC[:3]:
            raise UnsupportedVersion(f"unsupported format version {data[3:4]!r}")
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < 4 + _HEADER.size + _CRC.size:
        raise TruncatedFile(f"{len(data)} bytes is too short for a header")

    kind, resolution, count = _HEADER.unpack_from(data, 4)
    offset = 4 + _HEADER.size
    if kind == KIND_LATENT:
        if len(data) < offset + _CHANS.size + _CRC.size:
            raise TruncatedFile("file ends inside the channel field")
        (channels,) = _CHANS.unpack_from(data, offset)
        offset += _CHANS.size
        payload_size = count * 3 * 2 + count * channels * 4
    elif kind == KIND_OCCUPANCY:
        channels = None
        payload_size = count * 3 * 2
    else:
        raise MalformedNvx(f"unknown payload kind {kind}")

    expected = offset + payload_size + _CRC.size
    if len(data) < expected:
        raise TruncatedFile(f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise MalformedNvx(f"{len(data) - expected} trailing bytes after checksum")

    (stored_crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(data[: expected - _CRC.size]) != stored_crc:
        raise ChecksumMismatch("payload does not match stored CRC32")

    coords = np.frombuffer(data, dtype="<u2", count=count * 3, offset=offset)
    coords = coords.reshape(count, 3).astype(COORD_DTYPE)
    if count and int(coords.max()) >= resolution:
        raise MalformedNvx("coordinate out of bounds for stored resolution")
    lin = linear_index(coords, resolution)
    if count > 1 and not (np.diff(lin) > 0).all():
        raise MalformedNvx("coords not in canonical linear-index order")
    if resolution < 2:
        raise MalformedNvx(f"resolution {resolution} below minimum")

    if kind == KIND_OCCUPANCY:
        return SparseStructure(resolution=resolution, coords=_freeze(coords))

    if channels < 1:
        raise MalformedNvx("latent channel count must be >= 1")
    lat = np.frombuffer(data, dtype="<f4", count=count * channels, offset=offset + count * 3 * 2)
    lat = np.ascontiguousarray(lat.reshape(count, channels))
    if not np.isfinite(lat).all():
        raise MalformedNvx("non-finite latent values")
    return StructuredLatent(resolution=resolution, coords=_freeze(coords), latents=_freeze(lat))


def write_nvx(payload, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_nvx(payload))


def read_nvx(path):
    with open(path, "rb") as fh:
        return decode_nvx(fh.read())


def inspect_nvx(path) -> dict:
    """Decode a file and summarize its header fields."""
    with open(path, "rb") as fh:
        data = fh.read()
    payload = decode_nvx(data)
    info = {
        "path": str(path),
        "kind": "latent" if isinstance(payload, StructuredLatent) else "occupancy",
        "resolution": payload.resolution,
        "count": payload.voxel_sum,
        "bytes": len(data),
        "crc_ok": True,
    }
    if isinstance(payload, StructuredLatent):
        info["channels"] = payload.channels
    return info
