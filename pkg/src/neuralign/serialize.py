"""Binary artifact containers.

Every artifact shares one container layout: a 4-byte magic, a u16 format
version, a structured little-endian payload, and a trailing CRC32 of the
payload. Model files use magic "NAF1"; watermark records, codebooks and
trigger sets use sibling magics so a reader can tell artifacts apart.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .network import ACTIVATION_TAGS, TAG_ACTIVATIONS, DenseLayer, Network

MAGIC_MODEL = b"NAF1"
MAGIC_RECORD = b"NAR1"
MAGIC_CODEBOOK = b"NAC1"
MAGIC_TRIGGERS = b"NAT1"
FORMAT_VERSION = 1

_HEADER_LEN = 6  # magic + version


class FormatError(ValueError):
    """Malformed, truncated, or corrupt artifact file."""


class IntegrityError(RuntimeError):
    """Content fails its checksum, or artifacts that must agree do not."""


class PayloadWriter:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u16(self, v: int):
        self.buf += struct.pack("<H", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def u64(self, v: int):
        self.buf += struct.pack("<Q", v)

    def f64(self, v: float):
        self.buf += struct.pack("<d", v)

    def text(self, s: str):
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("string too long to serialize")
        self.u16(len(raw))
        self.buf += raw

    def f32_array(self, arr: np.ndarray):
        self.buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()

    def f64_array(self, arr: np.ndarray):
        self.buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()

    def raw(self, data: bytes):
        self.buf += data

    def bytes_value(self) -> bytes:
        return bytes(self.buf)


class PayloadReader:
    """Sequential reader that reports absolute byte offsets on truncation."""

    def __init__(self, data: bytes, base_offset: int = _HEADER_LEN):
        self.data = data
        self.off = 0
        self.base = base_offset

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"file truncated at byte {self.base + len(self.data)} "
                f"(needed {n} more bytes at byte {self.base + self.off})"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u16()
        return self._take(n).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * count), dtype="<f4").copy()

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype="<f8").copy()

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def expect_end(self):
        if self.off != len(self.data):
            raise FormatError(f"unexpected trailing bytes at byte {self.base + self.off}")


def write_container(path, magic: bytes, payload: bytes) -> None:
    data = magic + struct.pack("<H", FORMAT_VERSION) + payload + struct.pack("<I", zlib.crc32(payload))
    Path(path).write_bytes(data)


def read_container(path, magic: bytes) -> bytes:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != magic:
        raise FormatError(f"bad magic at byte 0: expected {magic!r}, got {raw[:4]!r}")
    if len(raw) < _HEADER_LEN:
        raise FormatError(f"file truncated at byte {len(raw)} (no format version)")
    version = struct.unpack_from("<H", raw, 4)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} at byte 4")
    if len(raw) < _HEADER_LEN + 4:
        raise FormatError(f"file truncated at byte {len(raw)} (no checksum)")
    payload = raw[_HEADER_LEN:-4]
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(payload) != stored_crc:
        raise IntegrityError(f"payload checksum mismatch at byte {len(raw) - 4}")
    return payload


def _model_payload(net: Network) -> bytes:
    w = PayloadWriter()
    w.u16(len(net.layers))
    for layer in net.layers:
        w.u32(layer.in_dim)
        w.u32(layer.out_dim)
        w.u8(ACTIVATION_TAGS[layer.activation])
        w.f32_array(layer.weights)
        w.f32_array(layer.biases)
    return w.bytes_value()


def save_model(net: Network, path) -> None:
    write_container(path, MAGIC_MODEL, _model_payload(net))


def load_model(path) -> Network:
    r = PayloadReader(read_container(path, MAGIC_MODEL))
    n_layers = r.u16()
    layers = []
    for i in range(n_layers):
        in_dim = r.u32()
        out_dim = r.u32()
        tag = r.u8()
        if tag not in TAG_ACTIVATIONS:
            raise FormatError(f"unknown activation tag {tag} at byte {r.base + r.off - 1}")
        weights = r.f32_array(out_dim * in_dim).reshape(out_dim, in_dim)
        biases = r.f32_array(out_dim)
        layers.append(DenseLayer(f"dense{i}", weights, biases, TAG_ACTIVATIONS[tag]))
    r.expect_end()
    return Network(layers)


def model_digest(net: Network) -> str:
    import hashlib

    return hashlib.sha256(_model_payload(net)).hexdigest()


def file_sha256(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
