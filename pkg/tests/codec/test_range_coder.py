"""
Range coder tests.

Requirements asserted:
  • Lossless round trip over long, mixed-table symbol streams
  • Coded length within 0.5% + 8 bytes of the ideal information content
  • Uniform bytes cost one byte each; a 0.9 / 0.1 source codes near its entropy
  • Stream layout: first byte 0, clean termination, no trailing bytes
  • Table construction: sums to 2**16, every frequency >= 1, mirror symmetry
  • Out-of-table symbols are rejected with the offending index
"""
from __future__ import annotations

import numpy as np
import pytest

from src.codec.range_coder import (
    TOTAL_FREQ,
    CdfTable,
    RangeDecoder,
    build_gaussian_cdf,
    gaussian_pmf,
    ideal_bits,
    pmf_to_cum,
    rc_decode,
    rc_encode,
)
from src.errors import CodingError, DecodeError

SUPPORT = (-32, 32)


def _sample(table: CdfTable, n: int, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    p = table.frequencies() / TOTAL_FREQ
    return (rng.choice(table.num_symbols, size=n, p=p) + table.lower).tolist()


# ============================================================
# Tables
# ============================================================

class TestTables:

    def test_standard_normal_central_bin_mass(self):
        table = build_gaussian_cdf(0.0, 1.0, (-8, 8))
        assert table.probability(0) == pytest.approx(0.3829, abs=1e-3), (
            "Mass of [-0.5, 0.5] under N(0, 1) must be 0.3829"
        )

    def test_tables_sum_to_precision_and_have_min_frequency(self):
        rng = np.random.default_rng(0)
        pmf = gaussian_pmf(rng.normal(0, 20, 64), rng.uniform(0.05, 30, 64), *SUPPORT)
        cum = pmf_to_cum(pmf)
        assert (cum[:, -1] == TOTAL_FREQ).all(), "Every table must sum to 2**16"
        assert (np.diff(cum, axis=1) >= 1).all(), "Every symbol needs frequency >= 1"

    def test_zero_mean_table_is_mirror_symmetric(self):
        freq = build_gaussian_cdf(0.0, 2.5, (-10, 10)).frequencies()
        # the deficit lands on the central bin, which is its own mirror
        assert np.array_equal(freq, freq[::-1]), "Zero-mean table must be symmetric"

    def test_degenerate_pmf_falls_back_to_uniform(self):
        table = CdfTable.from_pmf(np.zeros(4), lower=0)
        assert (table.frequencies() == TOTAL_FREQ // 4).all()

    def test_malformed_table_rejected(self):
        with pytest.raises(CodingError):
            CdfTable(lower=0, upper=1, cum=np.array([0, 0, TOTAL_FREQ]))
        with pytest.raises(CodingError):
            build_gaussian_cdf(0.0, 1.0, (3, 3))


# ============================================================
# Round trip and length
# ============================================================

class TestRoundTrip:

    @pytest.fixture(scope="class")
    def long_stream(self):
        table = build_gaussian_cdf(0.3, 3.0, SUPPORT)
        symbols = _sample(table, 100_000, seed=1)
        tables = [table] * len(symbols)
        return symbols, tables, rc_encode(symbols, tables)

    def test_long_stream_round_trips(self, long_stream):
        symbols, tables, data = long_stream
        assert rc_decode(data, tables, len(symbols)) == symbols

    def test_length_close_to_ideal(self, long_stream):
        symbols, tables, data = long_stream
        ideal = ideal_bits(symbols, tables)
        assert len(data) <= ideal / 8 * 1.005 + 8, (
            f"{len(data)} coded bytes vs {ideal / 8:.0f} ideal; "
            "requirement: within 0.5% + 8 bytes"
        )
        assert 8 * len(data) >= ideal, "Coded length cannot beat the ideal bits"

    def test_first_byte_is_zero(self, long_stream):
        assert long_stream[2][0] == 0

    def test_mixed_tables_round_trip(self):
        rng = np.random.default_rng(2)
        means = rng.normal(0, 5, 3000)
        scales = rng.uniform(0.11, 8, 3000)
        tables = [build_gaussian_cdf(m, s, SUPPORT) for m, s in zip(means, scales)]
        symbols = [_sample(t, 1, seed=i)[0] for i, t in enumerate(tables)]
        data = rc_encode(symbols, tables)
        assert rc_decode(data, tables, len(symbols)) == symbols

    def test_extreme_tail_symbols_round_trip(self):
        table = build_gaussian_cdf(0.0, 0.11, SUPPORT)
        symbols = [SUPPORT[0], SUPPORT[1], 0, SUPPORT[1], SUPPORT[0]]
        data = rc_encode(symbols, [table] * 5)
        assert rc_decode(data, [table] * 5, 5) == symbols

    def test_uniform_bytes_cost_one_byte_each(self):
        table = CdfTable.uniform(0, 255)
        symbols = np.random.default_rng(4).integers(0, 256, size=1000).tolist()
        data = rc_encode(symbols, [table] * 1000)
        assert 1000 <= len(data) <= 1010, f"{len(data)} bytes for 1000 uniform byte symbols"
        assert rc_decode(data, [table] * 1000, 1000) == symbols

    def test_skewed_binary_source_near_entropy(self):
        table = CdfTable.from_pmf(np.array([0.9, 0.1]), lower=0)
        symbols = np.random.default_rng(5).permutation(np.repeat([0, 1], [9000, 1000])).tolist()
        tables = [table] * len(symbols)
        data = rc_encode(symbols, tables)
        assert rc_decode(data, tables, len(symbols)) == symbols
        entropy_bytes = len(symbols) * 0.469 / 8
        assert abs(len(data) - entropy_bytes) <= 0.02 * entropy_bytes, (
            f"{len(data)} bytes vs {entropy_bytes:.1f} at 0.469 bits per symbol"
        )

    def test_minimum_scale_concentrates_on_mean(self):
        table = build_gaussian_cdf(0.0, 0.11, SUPPORT)
        assert table.probability(0) >= 0.99

    def test_empty_stream(self):
        data = rc_encode([], [])
        assert len(data) <= 8
        assert data == bytes(5), "No symbols must code to the 5-byte flush"
        assert rc_decode(data, [], 0) == []


# ============================================================
# Failure modes
# ============================================================

class TestFailures:

    @pytest.fixture(scope="class")
    def coded(self):
        table = build_gaussian_cdf(0.0, 4.0, SUPPORT)
        symbols = _sample(table, 2000, seed=3)
        return symbols, [table] * len(symbols), rc_encode(symbols, [table] * len(symbols))

    def test_truncated_stream_raises(self, coded):
        symbols, tables, data = coded
        with pytest.raises(DecodeError):
            rc_decode(data[:-1], tables, len(symbols))

    def test_trailing_byte_raises(self, coded):
        symbols, tables, data = coded
        with pytest.raises(DecodeError):
            rc_decode(data + b"\x00", tables, len(symbols))

    def test_nonzero_first_byte_raises(self, coded):
        _, _, data = coded
        with pytest.raises(DecodeError):
            RangeDecoder(b"\x01" + data[1:])

    def test_short_stream_raises(self):
        with pytest.raises(DecodeError):
            RangeDecoder(b"\x00\x00")

    def test_out_of_table_symbol_reports_index(self):
        table = CdfTable.uniform(-4, 4)
        with pytest.raises(CodingError) as info:
            rc_encode([0, 1, 99, 0], [table] * 4)
        assert info.value.index == 2, "CodingError must carry the offending symbol index"

    def test_symbol_table_count_mismatch(self):
        with pytest.raises(CodingError):
            rc_encode([0, 1], [CdfTable.uniform(0, 3)])
