"""
``.nfic`` container tests.

Requirements asserted:
  • 14-byte little-endian header in the documented field order
  • Parse rejects bad magic, unknown versions and inconsistent lengths
  • Parse rejects image sizes the anchor codec cannot have produced
  • bpp counts header and both payloads
"""
from __future__ import annotations

import struct

import pytest

from src.codec.container import HEADER_SIZE, MAGIC, BitstreamContainer, parse, serialize
from src.errors import BadMagicError, LengthMismatchError, ParseError, UnsupportedVersionError


@pytest.fixture
def container() -> BitstreamContainer:
    return BitstreamContainer(
        lambda_id=3, width=192, height=128,
        hyper_payload=b"\x00\x11\x22\x33\x44\x55",
        latent_payload=b"\x00" + bytes(range(1, 40)),
    )


class TestLayout:

    def test_header_is_fourteen_bytes(self, container):
        data = serialize(container)
        assert HEADER_SIZE == 14
        assert len(data) == 14 + 6 + 40

    def test_header_fields(self, container):
        data = serialize(container)
        assert data[:4] == MAGIC
        assert data[4] == 1, "version byte"
        assert data[5] == 3, "lambda_id byte"
        assert struct.unpack_from("<HHI", data, 6) == (192, 128, 6)
        assert data[14:20] == container.hyper_payload
        assert data[20:] == container.latent_payload

    def test_parse_restores_every_field(self, container):
        assert parse(serialize(container)) == container

    def test_bpp_counts_whole_file(self, container):
        assert container.bpp == pytest.approx(8 * 60 / (192 * 128))

    def test_empty_latent_payload_is_allowed(self):
        c = BitstreamContainer(lambda_id=0, width=64, height=64, hyper_payload=b"\x00" * 5)
        assert parse(serialize(c)).latent_payload == b""


class TestParseErrors:

    def test_bad_magic(self, container):
        data = bytearray(serialize(container))
        data[:4] = b"PNG\x00"
        with pytest.raises(BadMagicError):
            parse(bytes(data))

    def test_unsupported_version(self, container):
        data = bytearray(serialize(container))
        data[4] = 2
        with pytest.raises(UnsupportedVersionError):
            parse(bytes(data))

    def test_hyper_length_beyond_file(self, container):
        data = bytearray(serialize(container))
        struct.pack_into("<I", data, 10, 10_000)
        with pytest.raises(LengthMismatchError):
            parse(bytes(data))

    def test_shorter_than_header(self):
        with pytest.raises(LengthMismatchError):
            parse(MAGIC + b"\x01")

    def test_zero_size(self, container):
        data = bytearray(serialize(container))
        struct.pack_into("<H", data, 6, 0)
        with pytest.raises(ParseError):
            parse(bytes(data))

    def test_fields_must_fit_header(self):
        with pytest.raises(ParseError):
            BitstreamContainer(lambda_id=256, width=64, height=64)
        with pytest.raises(ParseError):
            BitstreamContainer(lambda_id=0, width=1 << 16, height=64)

    @pytest.mark.parametrize("width, height", [(32, 32), (100, 64), (64, 65)])
    def test_size_not_a_multiple_of_64(self, width, height):
        data = serialize(BitstreamContainer(
            lambda_id=0, width=width, height=height,
            hyper_payload=b"\x00" * 5, latent_payload=b"\x00" * 5,
        ))
        with pytest.raises(ParseError, match="multiples of 64"):
            parse(data)
