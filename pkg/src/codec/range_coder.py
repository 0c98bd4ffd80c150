"""
Range coder over fixed-precision cumulative frequency tables.

Carry-propagating coder with a 32-bit range and a 33-bit low register
(cache + pending-0xFF scheme, so no bits are lost on carry).  Every table
sums to ``2**16`` and gives each symbol a frequency of at least 1.

Stream layout: ``N + 5`` bytes for ``N`` renormalisation shifts.  The first
byte is always 0.  After the last symbol the decoder's code register must be
exactly 0 with every byte consumed; anything else is reported as a
``DecodeError``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from src.errors import CodingError, DecodeError

logger = logging.getLogger(__name__)

PRECISION_BITS = 16
TOTAL_FREQ = 1 << PRECISION_BITS

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_FLUSH_BYTES = 5


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CdfTable:
    """Cumulative counts for symbols ``lower..upper`` (``cum`` has K+1 entries)."""

    lower: int
    upper: int
    cum: np.ndarray

    def __post_init__(self) -> None:
        cum = self.cum
        if cum.ndim != 1 or cum.size != self.upper - self.lower + 2:
            raise CodingError(
                f"table for [{self.lower}, {self.upper}] needs "
                f"{self.upper - self.lower + 2} cumulative entries, got {cum.size}"
            )
        if cum[0] != 0 or cum[-1] != TOTAL_FREQ:
            raise CodingError("cumulative table must start at 0 and end at 2**16")
        if np.any(np.diff(cum) < 1):
            raise CodingError("every symbol needs a frequency of at least 1")

    @property
    def num_symbols(self) -> int:
        return self.upper - self.lower + 1

    def frequencies(self) -> np.ndarray:
        return np.diff(self.cum)

    def probability(self, symbol: int) -> float:
        i = symbol - self.lower
        return float(self.cum[i + 1] - self.cum[i]) / TOTAL_FREQ

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CdfTable):
            return NotImplemented
        return (
            self.lower == other.lower
            and self.upper == other.upper
            and np.array_equal(self.cum, other.cum)
        )

    @classmethod
    def from_pmf(cls, pmf: np.ndarray, lower: int) -> "CdfTable":
        cum = pmf_to_cum(np.asarray(pmf, dtype=np.float64)[None, :])[0]
        return cls(lower=lower, upper=lower + pmf.shape[-1] - 1, cum=cum)

    @classmethod
    def uniform(cls, lower: int, upper: int) -> "CdfTable":
        return cls.from_pmf(np.ones(upper - lower + 1), lower)


def pmf_to_cum(pmf: np.ndarray) -> np.ndarray:
    """
    Quantise rows of probability masses to integer cumulative tables.

    ``freq = floor(p * (2**16 - K)) + 1`` guarantees the floor of one count per
    bin; the remaining deficit goes to the most probable bin.  Mirrored inputs
    produce mirrored frequencies.
    """
    pmf = np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None)
    n, k = pmf.shape
    if k > TOTAL_FREQ // 2:
        raise CodingError(f"alphabet of {k} symbols too large for 2**16 precision")
    totals = pmf.sum(axis=1, keepdims=True)
    # degenerate rows fall back to uniform
    pmf = np.where(totals > 0, pmf / np.where(totals > 0, totals, 1.0), 1.0 / k)
    freq = np.floor(pmf * (TOTAL_FREQ - k)).astype(np.int64) + 1
    deficit = TOTAL_FREQ - freq.sum(axis=1)
    freq[np.arange(n), np.argmax(freq, axis=1)] += deficit
    cum = np.zeros((n, k + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return cum


def gaussian_pmf(
    means: np.ndarray, scales: np.ndarray, lower: int, upper: int
) -> np.ndarray:
    """Mass of each integer bin ``lower..upper`` under N(mean, scale), per row."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 1)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 1)
    support = np.arange(lower, upper + 1, dtype=np.float64)[None, :]
    # evaluate on the left tail so mirrored bins are bit-identical
    values = -np.abs(support - means)
    return ndtr((values + 0.5) / scales) - ndtr((values - 0.5) / scales)


def build_gaussian_cdf(
    mean: float, scale: float, support: tuple[int, int]
) -> CdfTable:
    lower, upper = support
    if lower >= upper:
        raise CodingError(f"empty support [{lower}, {upper}]")
    pmf = gaussian_pmf(np.array([mean]), np.array([scale]), lower, upper)
    return CdfTable(lower=lower, upper=upper, cum=pmf_to_cum(pmf)[0])


# ---------------------------------------------------------------------------
# Coder state machines
# ---------------------------------------------------------------------------

class RangeEncoder:
    """Single-stream encoder; feed symbols with ``encode`` then ``finish``."""

    def __init__(self) -> None:
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._count = 0

    def encode(self, symbol: int, cum: np.ndarray, lower: int) -> None:
        idx = int(symbol) - lower
        if idx < 0 or idx >= cum.size - 1:
            raise CodingError(
                f"symbol {symbol} at index {self._count} outside table "
                f"[{lower}, {lower + cum.size - 2}]",
                index=self._count,
            )
        lo = int(cum[idx])
        freq = int(cum[idx + 1]) - lo
        r = self._range >> PRECISION_BITS
        self._low += r * lo
        self._range = r * freq
        while self._range < _TOP:
            self._range <<= 8
            self._shift_low()
        self._count += 1

    def finish(self) -> bytes:
        for _ in range(_FLUSH_BYTES):
            self._shift_low()
        return bytes(self._out)

    def _shift_low(self) -> None:
        if (self._low & _MASK32) < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (self._low >> 24) & 0xFF
        self._cache_size += 1
        self._low = (self._low & 0x00FFFFFF) << 8


class RangeDecoder:
    """Mirror of ``RangeEncoder``; call ``finish`` to verify the stream end."""

    def __init__(self, data: bytes) -> None:
        if len(data) < _FLUSH_BYTES:
            raise DecodeError(
                f"range-coded stream of {len(data)} bytes is shorter than the "
                f"{_FLUSH_BYTES}-byte minimum"
            )
        if data[0] != 0:
            raise DecodeError("range-coded stream must start with a zero byte")
        self._data = data
        self._pos = _FLUSH_BYTES
        self._range = _MASK32
        self._code = int.from_bytes(data[1:_FLUSH_BYTES], "big")
        self._count = 0

    def decode(self, cum: np.ndarray, lower: int) -> int:
        r = self._range >> PRECISION_BITS
        target = self._code // r
        if target >= TOTAL_FREQ:
            raise DecodeError(f"corrupt stream at symbol {self._count}")
        idx = int(np.searchsorted(cum, target, side="right")) - 1
        self._code -= r * int(cum[idx])
        self._range = r * (int(cum[idx + 1]) - int(cum[idx]))
        while self._range < _TOP:
            if self._pos >= len(self._data):
                raise DecodeError(
                    f"stream truncated after {len(self._data)} bytes "
                    f"(symbol {self._count})"
                )
            self._code = (self._code << 8) | self._data[self._pos]
            self._range <<= 8
            self._pos += 1
        self._count += 1
        return idx + lower

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(
                f"{len(self._data) - self._pos} trailing bytes after the last symbol"
            )
        if self._code != 0:
            raise DecodeError("stream does not terminate cleanly; payload corrupt")


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def rc_encode(symbols: Iterable[int], cdfs: Sequence[CdfTable]) -> bytes:
    symbols = list(symbols)
    if len(symbols) != len(cdfs):
        raise CodingError(
            f"{len(symbols)} symbols but {len(cdfs)} tables", index=min(len(symbols), len(cdfs))
        )
    enc = RangeEncoder()
    for s, table in zip(symbols, cdfs):
        enc.encode(s, table.cum, table.lower)
    return enc.finish()


def rc_decode(data: bytes, cdfs: Sequence[CdfTable], n: int) -> list[int]:
    if n > len(cdfs):
        raise DecodeError(f"requested {n} symbols but only {len(cdfs)} tables")
    dec = RangeDecoder(data)
    out = [dec.decode(cdfs[i].cum, cdfs[i].lower) for i in range(n)]
    dec.finish()
    return out


def ideal_bits(symbols: Iterable[int], cdfs: Sequence[CdfTable]) -> float:
    """Information content of *symbols* under the quantised tables."""
    return float(
        sum(-np.log2(t.probability(int(s))) for s, t in zip(symbols, cdfs))
    )
