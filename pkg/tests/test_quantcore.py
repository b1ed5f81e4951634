from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quantprec.quantcore import (
    Codebook,
    InvalidInputError,
    Mapping,
    QuantError,
    build_codebook,
    dequantize,
    encode_normalized,
    pack_codes,
    quantize,
    roundtrip,
    unpack_codes,
)

DT4 = [-0.8875, -0.6625, -0.4375, -0.2125, -0.0775, -0.0325, -0.0055, 0.0, 0.0055, 0.0325, 0.0775, 0.2125,
       0.4375, 0.6625, 0.8875, 1.0]
DT3 = [-0.7750, -0.3250, -0.0550, 0.0, 0.0550, 0.3250, 0.7750, 1.0]
L2_4 = [-1.0, -0.7511, -0.5378, -0.3600, -0.2178, -0.1111, -0.0400, 0.0, 0.0044, 0.0400, 0.1111, 0.2178, 0.3600,
        0.5378, 0.7511, 1.0]
L2_3 = [-1.0, -0.5102, -0.1837, 0.0, 0.0204, 0.1837, 0.5102, 1.0]


@pytest.mark.parametrize(
    "mapping,bits,table",
    [("dt", 4, DT4), ("dt", 3, DT3), ("linear2", 4, L2_4), ("linear2", 3, L2_3)],
)
def test_codebook_tables_match_published_values(mapping, bits, table):
    cb = build_codebook(mapping, bits)
    assert np.round(cb.array, 4).tolist() == pytest.approx(table, abs=1e-12)


def _linear2_exact(bits):
    top, zero = 2**bits - 1, 2 ** (bits - 1) - 1
    out = []
    for j in range(2**bits):
        base = Fraction(-1) + Fraction(2 * j, top)
        out.append(Fraction(0) if j == zero else (-(base**2) if j < zero else base**2))
    return out


@pytest.mark.parametrize("bits", [3, 4, 8])
def test_linear2_matches_rational_formula(bits):
    cb = build_codebook(Mapping.LINEAR2, bits)
    exact = _linear2_exact(bits)
    assert [float(v) for v in exact] == list(cb.values)
    assert all(abs(Fraction(v) - e) <= Fraction(1, 2**53) for v, e in zip(cb.values, exact))
    assert cb.values[2 ** (bits - 1) - 1] == 0.0


@pytest.mark.parametrize("mapping", list(Mapping))
@pytest.mark.parametrize("bits", [3, 4, 8])
def test_codebook_invariants(mapping, bits):
    cb = build_codebook(mapping, bits)
    assert len(cb.values) == 2**bits
    assert np.all(np.abs(cb.array) <= 1.0)
    assert np.all(np.diff(cb.array) > 0)


def test_linear_is_uniform_grid():
    cb = build_codebook("linear", 3)
    assert cb.array == pytest.approx(np.linspace(-1, 1, 8), abs=1e-15)


@pytest.mark.parametrize("bad", [2, 5, 16, 4.0, True])
def test_unsupported_bits_rejected(bad):
    with pytest.raises(QuantError):
        build_codebook("linear2", bad)


def test_unknown_mapping_rejected():
    with pytest.raises(QuantError):
        build_codebook("quantile", 4)


def test_codebook_is_immutable():
    cb = build_codebook("dt", 4)
    with pytest.raises(ValueError):
        cb.array[0] = 0.0
    with pytest.raises(Exception):
        cb.bits = 8


def test_invalid_codebook_construction():
    with pytest.raises(QuantError):
        Codebook(bits=3, mapping=Mapping.LINEAR, values=(0.0,) * 8)


@pytest.mark.parametrize("mapping", list(Mapping))
@pytest.mark.parametrize("bits", [3, 4, 8])
def test_codebook_values_are_fixed_points(mapping, bits):
    cb = build_codebook(mapping, bits)
    x = np.concatenate([cb.array, [1.0]])  # ensure the block max is 1
    assert np.array_equal(roundtrip(x, cb, block_size=x.size), x)


def test_zero_vector():
    cb = build_codebook("linear2", 4)
    q = quantize(np.zeros(100), cb, 16)
    assert np.all(q.maxima == 0)
    assert np.all(q.unpacked_codes() == cb.zero_code)
    assert np.array_equal(dequantize(q, cb), np.zeros(100))


def test_random_vector_error_within_max_gap(rng):
    cb = build_codebook("linear2", 4)
    assert cb.max_gap == pytest.approx(1 - 0.7511, abs=1e-4)
    x = rng.uniform(-1, 1, 256)
    err = np.abs(x - roundtrip(x, cb, 64))
    assert err.max() <= cb.max_gap


def test_dequantize_single_code():
    cb = build_codebook("linear2", 4)
    from quantprec.quantcore import QuantizedBlockVector

    q = QuantizedBlockVector(pack_codes(np.array([8]), 4), np.array([2.0], np.float32), 1, 64, 4, Mapping.LINEAR2)
    assert dequantize(q, cb)[0] == pytest.approx(0.0088, abs=1e-4)
    assert dequantize(q, cb)[0] == 2.0 * cb.values[8]


def test_all_zero_codes_dequantize_to_zero():
    cb = build_codebook("dt", 4)
    from quantprec.quantcore import QuantizedBlockVector

    codes = np.full(10, cb.zero_code)
    q = QuantizedBlockVector(pack_codes(codes, 4), np.array([3.0, 5.0], np.float32), 10, 5, 4, Mapping.DT)
    assert np.array_equal(dequantize(q, cb), np.zeros(10))


def test_mismatched_codebook_rejected(rng):
    q = quantize(rng.standard_normal(8), build_codebook("dt", 4), 4)
    with pytest.raises(QuantError):
        dequantize(q, build_codebook("linear2", 4))
    with pytest.raises(QuantError):
        dequantize(q, build_codebook("dt", 8))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    x = np.ones(8)
    x[3] = bad
    with pytest.raises(InvalidInputError):
        quantize(x, build_codebook("linear2", 4), 4)


def test_bad_block_size_and_segment():
    cb = build_codebook("linear2", 4)
    with pytest.raises(QuantError):
        quantize(np.ones(4), cb, 0)
    with pytest.raises(QuantError):
        quantize(np.ones(10), cb, 4, segment=3)


def test_ties_go_to_smaller_index():
    cb = build_codebook("linear", 3)
    mid = cb.midpoints[2]
    assert encode_normalized(np.array([mid]), cb)[0] == 2


def test_block_layout_and_short_last_block():
    cb = build_codebook("linear2", 4)
    x = np.arange(1.0, 11.0)
    q = quantize(x, cb, 4)
    assert q.maxima.tolist() == [4.0, 8.0, 10.0]
    q = quantize(x, cb, 4, segment=5)
    # two segments of five; each has a block of 4 and a block of 1
    assert q.maxima.tolist() == [4.0, 5.0, 9.0, 10.0]


def test_pack_unpack_nibbles():
    codes = np.array([1, 2, 15, 0, 7], dtype=np.uint8)
    packed = pack_codes(codes, 4)
    assert packed.tolist() == [0x21, 0x0F, 0x07]
    assert unpack_codes(packed, 4, 5).tolist() == codes.tolist()
    assert pack_codes(codes, 3).tolist() == codes.tolist()


def test_payload_size_is_half_a_byte_per_code(rng):
    cb = build_codebook("linear2", 4)
    q = quantize(rng.standard_normal(4096), cb, 64)
    assert q.codes.nbytes == 2048
    assert q.maxima.nbytes == 64 * 4


# ---------------------------------------------------------------- properties

finite = st.floats(-1e6, 1e6, allow_nan=False, width=64)
vectors = arrays(np.float64, st.integers(1, 200), elements=finite)
mappings = st.sampled_from(list(Mapping))
bit_widths = st.sampled_from([3, 4, 8])
blocks = st.integers(1, 70)


@given(vectors, mappings, bit_widths, blocks)
def test_roundtrip_error_bounded_per_block(x, mapping, bits, block):
    cb = build_codebook(mapping, bits)
    q = quantize(x, cb, block)
    y = dequantize(q, cb)
    scale = q.maxima.astype(np.float64)[q.block_index()]
    # nearest value is within half of the widest gap, plus float32 maxima rounding
    # float32 maxima: relative rounding, and underflow below the smallest float32
    tiny = float(np.finfo(np.float32).smallest_subnormal)
    assert np.all(np.abs(x - y) <= (cb.max_gap / 2) * scale * (1 + 1e-6) + 1e-7 * np.abs(x) + tiny)


@given(vectors, mappings, bit_widths, blocks)
def test_roundtrip_is_nearest_codebook_value(x, mapping, bits, block):
    cb = build_codebook(mapping, bits)
    q = quantize(x, cb, block)
    scale = q.maxima.astype(np.float64)[q.block_index()]
    codes = q.unpacked_codes()
    safe = np.where(scale > 0, scale, 1.0)
    xn = np.where(scale > 0, np.clip(x / safe, -1, 1), 0.0)
    dist = np.abs(xn[:, None] - cb.array[None, :])
    chosen = dist[np.arange(x.size), codes]
    # the chosen value is a nearest one (up to rounding of the distances)
    assert np.all(chosen <= dist.min(axis=1) + 1e-15)


@given(vectors, st.sampled_from([Mapping.LINEAR2, Mapping.LINEAR]), bit_widths, blocks)
def test_idempotence(x, mapping, bits, block):
    cb = build_codebook(mapping, bits)
    q1 = quantize(x, cb, block)
    q2 = quantize(dequantize(q1, cb), cb, block)
    assert q1.same_as(q2)


@given(vectors, mappings, bit_widths, blocks, st.integers(-20, 20))
def test_scale_equivariance_powers_of_two(x, mapping, bits, block, e):
    # exact only while every nonzero block max stays a normal float32 after scaling
    pad = np.zeros(-x.size % block)
    bmax = np.abs(np.concatenate([x, pad])).reshape(-1, block).max(axis=1)
    assume(np.all((bmax == 0) | (bmax >= 2.0**-100)))
    cb = build_codebook(mapping, bits)
    c = 2.0**e
    q1 = quantize(x, cb, block)
    q2 = quantize(c * x, cb, block)
    assert np.array_equal(q1.codes, q2.codes)
    assert np.array_equal(q2.maxima, (q1.maxima.astype(np.float64) * c).astype(np.float32))


@given(arrays(np.float64, st.integers(2, 64), elements=finite), mappings, bit_widths)
def test_encoding_monotone_within_block(x, mapping, bits):
    cb = build_codebook(mapping, bits)
    xs = np.sort(x)
    codes = quantize(xs, cb, block_size=xs.size).unpacked_codes()
    assert np.all(np.diff(codes.astype(int)) >= 0)


@given(vectors, mappings, bit_widths, blocks)
def test_structure_invariants(x, mapping, bits, block):
    cb = build_codebook(mapping, bits)
    q = quantize(x, cb, block)
    assert q.maxima.size == -(-x.size // block)
    assert np.all(q.maxima >= 0)
    assert np.all(q.unpacked_codes() < 2**bits)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 70), vectors)
def test_segments_never_share_a_block(seg, nseg, block, _):
    x = np.arange(seg * nseg, dtype=np.float64) + 1.0
    cb = build_codebook("linear2", 4)
    q = quantize(x, cb, block, segment=seg)
    idx = q.block_index()
    col = np.arange(x.size) // seg
    for b in np.unique(idx):
        assert np.unique(col[idx == b]).size == 1
