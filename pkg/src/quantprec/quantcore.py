"""Block-wise b-bit quantization of real vectors.

A quantized vector keeps one 32-bit absolute maximum per block and one
b-bit code per element.  Codes index into a fixed, sorted codebook of
values in [-1, 1]; dequantization is ``codebook[code] * block_max``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class QuantError(ValueError):
    """Base class for invalid arguments or inputs to the quantizer."""


class InvalidInputError(QuantError):
    """Raised for non-finite input that must never be silently encoded."""


class Mapping(str, enum.Enum):
    DT = "dt"
    LINEAR2 = "linear2"
    LINEAR = "linear"

    @classmethod
    def parse(cls, value: "Mapping | str") -> "Mapping":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", ""))
        except ValueError:
            raise QuantError(f"unknown quantization mapping {value!r}") from None


SUPPORTED_BITS = (3, 4, 8)


@dataclass(frozen=True)
class Codebook:
    """Immutable table ``values[j] = R(j)`` for ``j`` in ``0 .. 2**bits - 1``."""

    bits: int
    mapping: Mapping
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != 2**self.bits:
            raise QuantError("codebook must hold exactly 2**bits values")
        arr = np.asarray(self.values)
        if np.any(np.abs(arr) > 1.0) or np.any(np.diff(arr) <= 0):
            raise QuantError("codebook values must be strictly increasing in [-1, 1]")

    @functools.cached_property
    def array(self) -> np.ndarray:
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @functools.cached_property
    def midpoints(self) -> np.ndarray:
        arr = self.array
        mid = 0.5 * (arr[:-1] + arr[1:])
        mid.setflags(write=False)
        return mid

    @property
    def max_gap(self) -> float:
        return float(np.max(np.diff(self.array)))

    @property
    def zero_code(self) -> int:
        """Code that a value of exactly 0 encodes to."""
        return int(encode_normalized(np.zeros(1), self)[0])

    def encode(self, x: np.ndarray) -> np.ndarray:
        return encode_normalized(x, self)


def _linear2_values(bits: int) -> list[float]:
    # exact rationals, so every entry is the correctly rounded double
    top = 2**bits - 1
    zero = 2 ** (bits - 1) - 1
    values = []
    for j in range(2**bits):
        base = Fraction(-1) + Fraction(2 * j, top)
        if j < zero:
            values.append(float(-(base**2)))
        elif j == zero:
            values.append(0.0)
        else:
            values.append(float(base**2))
    return values


def _dt_values(bits: int) -> list[float]:
    # magnitudes +-q_k * 10**-E with bits = 2 + E + F, plus the values {0, 1}
    positive = []
    for exponent in range(bits - 1):
        frac_bits = bits - 2 - exponent
        num = 2**frac_bits
        p = [0.9 * j / num + 0.1 for j in range(num + 1)]
        positive.extend((p[k] + p[k + 1]) / 2 * 10.0**-exponent for k in range(num))
    positive.sort()
    return [-v for v in reversed(positive)] + [0.0] + positive + [1.0]


def _linear_values(bits: int) -> list[float]:
    top = 2**bits - 1
    return [-1.0 + 2.0 * j / top for j in range(2**bits)]


@functools.lru_cache(maxsize=None)
def _build(mapping: Mapping, bits: int) -> Codebook:
    if bits not in SUPPORTED_BITS:
        raise QuantError(f"unsupported bit width {bits}; expected one of {SUPPORTED_BITS}")
    if mapping is Mapping.LINEAR2:
        values = _linear2_values(bits)
    elif mapping is Mapping.DT:
        values = _dt_values(bits)
    else:
        values = _linear_values(bits)
    return Codebook(bits=bits, mapping=mapping, values=tuple(values))


def build_codebook(mapping: Mapping | str, bits: int) -> Codebook:
    """Return the value table of a b-bit quantization mapping.

    ``Linear2`` is the signed square of a uniform grid with an exact zero at
    ``j = 2**(bits-1) - 1``; ``DT`` is the dynamic-tree table; ``Linear`` is
    the uniform grid on [-1, 1].
    """
    if not isinstance(bits, (int, np.integer)) or isinstance(bits, bool):
        raise QuantError(f"bits must be an integer, got {bits!r}")
    return _build(Mapping.parse(mapping), int(bits))


def encode_normalized(x: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest-codebook index of each element of ``x`` (ties to the smaller index)."""
    # side="left": a value equal to a midpoint keeps the lower index
    codes = np.searchsorted(codebook.midpoints, np.asarray(x, dtype=np.float64), side="left")
    return codes.astype(np.uint8)


def pack_codes(codes: np.ndarray, bits: int) -> np.ndarray:
    """Pack b-bit codes into bytes; 4-bit codes go two per byte, low nibble first."""
    codes = np.asarray(codes, dtype=np.uint8)
    if bits == 4:
        if codes.size % 2:
            codes = np.concatenate([codes, np.zeros(1, dtype=np.uint8)])
        return (codes[0::2] & 0x0F) | ((codes[1::2] & 0x0F) << 4)
    return codes.copy()


def unpack_codes(packed: np.ndarray, bits: int, length: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    if bits == 4:
        out = np.empty(packed.size * 2, dtype=np.uint8)
        out[0::2] = packed & 0x0F
        out[1::2] = packed >> 4
        return out[:length]
    return packed[:length].copy()


@dataclass(frozen=True, eq=False)
class QuantizedBlockVector:
    """Packed codes plus per-block maxima for a length-``length`` vector.

    Blocks are contiguous runs of ``block_size`` elements.  When ``segment``
    is set, blocks restart at every multiple of ``segment`` so that no block
    spans two segments (e.g. two matrix columns); the last block of each
    segment may be short.
    """

    codes: np.ndarray
    maxima: np.ndarray
    length: int
    block_size: int
    bits: int
    mapping: Mapping
    segment: int | None = None

    @property
    def blocks_per_segment(self) -> int:
        seg = self.segment or self.length
        return -(-seg // self.block_size) if seg else 0

    @property
    def num_segments(self) -> int:
        if self.segment is None:
            return 1 if self.length else 0
        return self.length // self.segment

    def unpacked_codes(self) -> np.ndarray:
        return unpack_codes(self.codes, self.bits, self.length)

    def block_index(self) -> np.ndarray:
        """Block number of every element, in storage order."""
        seg = self.segment or max(self.length, 1)
        pos = np.arange(self.length)
        return (pos // seg) * self.blocks_per_segment + (pos % seg) // self.block_size

    def payload_bytes(self) -> int:
        return int(self.codes.nbytes + self.maxima.nbytes)

    def same_as(self, other: "QuantizedBlockVector") -> bool:
        return (
            self.length == other.length
            and self.block_size == other.block_size
            and self.bits == other.bits
            and self.mapping == other.mapping
            and self.segment == other.segment
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.maxima, other.maxima)
        )


def _blocked_view(x: np.ndarray, block_size: int, segment: int | None):
    """Zero-pad ``x`` into shape (num_segments, blocks_per_segment, block_size)."""
    seg = segment or x.size
    nseg = x.size // seg if seg else 0
    nblk = -(-seg // block_size) if seg else 0
    padded = np.zeros((nseg, nblk * block_size))
    padded[:, :seg] = x.reshape(nseg, seg)
    return padded.reshape(nseg, nblk, block_size), seg


def quantize(
    x: np.ndarray,
    codebook: Codebook,
    block_size: int,
    *,
    segment: int | None = None,
) -> QuantizedBlockVector:
    """Block-wise absmax normalization followed by nearest-value encoding."""
    if block_size < 1:
        raise QuantError("block_size must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("cannot quantize NaN or Inf")
    if segment is not None and (segment < 1 or x.size % segment):
        raise QuantError(f"segment {segment} does not divide vector length {x.size}")

    blocks, seg = _blocked_view(x, block_size, segment)
    maxima = np.abs(blocks).max(axis=2).astype(np.float32)
    scale = maxima.astype(np.float64)[:, :, None]
    safe = np.where(scale > 0, scale, 1.0)
    # float32 rounding of the maximum can push |x / max| a hair above 1
    normalized = np.clip(blocks / safe, -1.0, 1.0)
    # a zero maximum (including float32 underflow) stores the code of 0
    normalized = np.where(scale > 0, normalized, 0.0)
    codes = encode_normalized(normalized, codebook)
    codes = codes.reshape(codes.shape[0], -1)[:, :seg].ravel()
    return QuantizedBlockVector(
        codes=pack_codes(codes, codebook.bits),
        maxima=maxima.ravel(),
        length=x.size,
        block_size=block_size,
        bits=codebook.bits,
        mapping=codebook.mapping,
        segment=segment,
    )


def dequantize(q: QuantizedBlockVector, codebook: Codebook) -> np.ndarray:
    if q.bits != codebook.bits or q.mapping != codebook.mapping:
        raise QuantError(
            f"codebook {codebook.mapping.value}/{codebook.bits} does not match "
            f"payload {q.mapping.value}/{q.bits}"
        )
    codes = q.unpacked_codes()
    return codebook.array[codes] * q.maxima.astype(np.float64)[q.block_index()]


def roundtrip(x: np.ndarray, codebook: Codebook, block_size: int, **kwargs) -> np.ndarray:
    """``dequantize(quantize(x))`` reshaped like ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return dequantize(quantize(x, codebook, block_size, **kwargs), codebook).reshape(x.shape)
