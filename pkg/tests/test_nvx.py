import numpy as np
import pytest

from voxedit import make_latent, make_sparse, read_nvx, write_nvx
from voxedit.errors import (
    BadMagic,
    ChecksumMismatch,
    MalformedNvx,
    NvxError,
    TruncatedFile,
    UnsupportedVersion,
)
from voxedit.nvx import decode_nvx, encode_nvx

from oracles import random_structure_coords


def random_structure(rng, resolution=16):
    return make_sparse(random_structure_coords(rng, resolution, rng.uniform(0.005, 0.3)), resolution)


def random_latent(rng, resolution=16, channels=8):
    coords = random_structure_coords(rng, resolution, rng.uniform(0.005, 0.3))
    s = make_sparse(coords, resolution)
    lat = rng.standard_normal((s.voxel_sum, channels)).astype(np.float32)
    return make_latent(s.coords, lat, resolution)


def test_empty_structure_is_15_bytes(tmp_path):
    path = tmp_path / "empty.nvx"
    s = make_sparse([], 64)
    write_nvx(s, path)
    assert path.stat().st_size == 15
    assert read_nvx(path) == s


def test_occupancy_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "s.nvx"
    for _ in range(50):
        s = random_structure(rng)
        write_nvx(s, path)
        assert read_nvx(path) == s


def test_latent_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "z.nvx"
    for _ in range(30):
        z = random_latent(rng)
        write_nvx(z, path)
        back = read_nvx(path)
        assert back == z
        assert back.latents.tobytes() == z.latents.tobytes()


def test_large_latent_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    coords = random_structure_coords(rng, 32, 1000 / 32**3)
    s = make_sparse(coords, 32)
    z = make_latent(s.coords, rng.standard_normal((s.voxel_sum, 8)).astype(np.float32), 32)
    path = tmp_path / "big.nvx"
    write_nvx(z, path)
    assert encode_nvx(read_nvx(path)) == path.read_bytes()


def test_single_byte_corruption_detected():
    rng = np.random.default_rng(5)
    z = random_latent(rng, resolution=8, channels=4)
    data = bytearray(encode_nvx(z))
    for pos in range(len(data)):
        corrupted = bytearray(data)
        corrupted[pos] ^= 0x5A
        with pytest.raises(NvxError):
            decode_nvx(bytes(corrupted))


def test_flipped_payload_byte_is_checksum_mismatch():
    s = make_sparse([(1, 2, 3), (4, 5, 6)], 16)
    data = bytearray(encode_nvx(s))
    data[-6] ^= 0x01  # inside the coords payload
    with pytest.raises(ChecksumMismatch):
        decode_nvx(bytes(data))


def test_bad_magic_and_version():
    s = make_sparse([], 8)
    data = bytearray(encode_nvx(s))
    other = bytearray(data)
    other[:4] = b"JUNK"
    with pytest.raises(BadMagic):
        decode_nvx(bytes(other))
    v2 = bytearray(data)
    v2[3] = ord("2")
    with pytest.raises(UnsupportedVersion):
        decode_nvx(bytes(v2))


def test_truncation():
    s = make_sparse([(0, 0, 0), (1, 1, 1)], 8)
    data = encode_nvx(s)
    for cut in (0, 3, 8, len(data) - 1):
        with pytest.raises(TruncatedFile):
            decode_nvx(data[:cut])


def test_trailing_bytes_rejected():
    data = encode_nvx(make_sparse([], 8)) + b"\x00"
    with pytest.raises(MalformedNvx):
        decode_nvx(data)


def test_unknown_kind_rejected():
    import struct
    import zlib

    buf = bytearray(b"NVX1") + struct.pack("<BHI", 9, 8, 0)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with pytest.raises(MalformedNvx):
        decode_nvx(bytes(buf))


def test_noncanonical_order_rejected():
    import struct
    import zlib

    coords = np.array([[1, 0, 0], [0, 0, 0]], dtype="<u2")
    buf = bytearray(b"NVX1") + struct.pack("<BHI", 0, 8, 2) + coords.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with pytest.raises(MalformedNvx):
        decode_nvx(bytes(buf))


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        read_nvx(tmp_path / "nope.nvx")
