"""
``.nfic`` container.

Little-endian fixed header followed by the two range-coded payloads::

    offset  size  field
    0       4     magic  b"NFIC"
    4       1     version (u8, currently 1)
    5       1     lambda_id (u8)
    6       2     width  (u16)
    8       2     height (u16)
    10      4     hyper payload length (u32)
    14      ...   hyper payload, then latent payload to end of file

The latent payload length is implied by the file size.  Width and height
are multiples of 64, the anchor codec's total stride.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from src.errors import BadMagicError, LengthMismatchError, ParseError, UnsupportedVersionError

MAGIC = b"NFIC"
VERSION = 1
HEADER = struct.Struct("<4sBBHHI")
HEADER_SIZE = HEADER.size  # 14
SIZE_MULTIPLE = 64


@dataclass(frozen=True)
class BitstreamContainer:
    lambda_id: int
    width: int
    height: int
    hyper_payload: bytes = b""
    latent_payload: bytes = b""
    version: int = VERSION
    magic: bytes = MAGIC

    def __post_init__(self) -> None:
        if not (0 < self.width < 1 << 16 and 0 < self.height < 1 << 16):
            raise ParseError(f"image size {self.width}x{self.height} outside u16 range")
        if not 0 <= self.lambda_id < 256:
            raise ParseError(f"lambda_id {self.lambda_id} does not fit in a u8")

    @property
    def payload_lengths(self) -> tuple[int, int]:
        return len(self.hyper_payload), len(self.latent_payload)

    @property
    def num_bytes(self) -> int:
        return HEADER_SIZE + sum(self.payload_lengths)

    @property
    def bpp(self) -> float:
        return 8 * self.num_bytes / (self.width * self.height)


def serialize(container: BitstreamContainer) -> bytes:
    header = HEADER.pack(
        container.magic,
        container.version,
        container.lambda_id,
        container.width,
        container.height,
        len(container.hyper_payload),
    )
    return header + container.hyper_payload + container.latent_payload


def parse(data: bytes) -> BitstreamContainer:
    if len(data) < HEADER_SIZE:
        raise LengthMismatchError(
            f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header"
        )
    magic, version, lambda_id, width, height, hyper_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}; expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} is not supported")
    body = data[HEADER_SIZE:]
    if hyper_len > len(body):
        raise LengthMismatchError(
            f"hyper payload length {hyper_len} exceeds the {len(body)} bytes available"
        )
    if width == 0 or height == 0 or width % SIZE_MULTIPLE or height % SIZE_MULTIPLE:
        raise ParseError(
            f"invalid image size {width}x{height}; both sides must be positive multiples of {SIZE_MULTIPLE}"
        )
    return BitstreamContainer(
        lambda_id=lambda_id,
        width=width,
        height=height,
        hyper_payload=bytes(body[:hyper_len]),
        latent_payload=bytes(body[hyper_len:]),
        version=version,
    )
