"""Analytic state-byte accounting for Shampoo preconditioners.

Counts are derived from the storage format, not measured from a process, so
they are not comparable to device memory figures that include allocator
fragmentation and framework buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ..optimizer import FOKind, block_partition

HEADER = "analytic state bytes (storage format arithmetic; not process or device memory)"

_FO_BUFFERS = {FOKind.SGDM: 1, FOKind.ADAMW: 2, FOKind.ADAGRAD: 1}


def quantized_square_bytes(dim: int, bits: int, block_size: int) -> tuple[int, int]:
    """``(code_bytes, maxima_bytes)`` for a ``dim x dim`` matrix quantized column by column.

    Matches the packed container: 4-bit codes two per byte, other widths one per byte.
    """
    code_bytes = -(-dim * dim // 2) if bits == 4 else dim * dim
    maxima_bytes = dim * -(-dim // block_size) * 4
    return code_bytes, maxima_bytes


@dataclass
class FactorBytes:
    """Bytes held for one side (left or right) of one block."""

    dim: int
    lam: int = 0
    codes: int = 0
    maxima: int = 0
    diag: int = 0
    root_codes: int = 0
    root_maxima: int = 0
    dense: int = 0

    @property
    def total(self) -> int:
        return self.lam + self.codes + self.maxima + self.diag + self.root_codes + self.root_maxima + self.dense


def factor_bytes(dim: int, bits: int | None, block_size: int = 64, min_quant_size: int = 4096) -> FactorBytes:
    """``bits=None`` is 32-bit Shampoo: dense factor plus dense inverse root."""
    if bits is None:
        return FactorBytes(dim, dense=2 * dim * dim * 4)
    if dim * dim < min_quant_size:
        # small sides bypass quantization: float32 lam, U, diag and off-diagonal
        return FactorBytes(dim, lam=4 * dim, diag=4 * dim, dense=2 * dim * dim * 4)
    codes, maxima = quantized_square_bytes(dim, bits, block_size)
    return FactorBytes(dim, lam=4 * dim, codes=codes, maxima=maxima, diag=4 * dim, root_codes=codes, root_maxima=maxima)


@dataclass
class MemoryReport:
    m: int
    n: int
    bits: int
    block_size: int
    quantized: list[FactorBytes] = field(default_factory=list)
    full: list[FactorBytes] = field(default_factory=list)
    first_order: int = 0

    @property
    def quantized_total(self) -> int:
        return sum(f.total for f in self.quantized)

    @property
    def full_total(self) -> int:
        return sum(f.total for f in self.full)

    @property
    def total_ratio(self) -> float:
        return self.full_total / self.quantized_total

    @property
    def eigenvector_payload_bytes(self) -> int:
        """Code plus maxima bytes of all eigenvector matrices."""
        return sum(f.codes + f.maxima for f in self.quantized)

    @property
    def eigenfactor_bytes(self) -> int:
        """Eigenvector payload plus eigenvalue bytes."""
        return sum(f.codes + f.maxima + f.lam for f in self.quantized)

    @property
    def payload_elements(self) -> int:
        return sum(f.dim * f.dim for f in self.quantized if f.codes)

    @property
    def payload_bits_per_element(self) -> Fraction:
        return Fraction(8 * self.eigenvector_payload_bytes, self.payload_elements)

    @property
    def payload_ratio(self) -> Fraction:
        """32-bit bytes of the quantized matrices over their quantized payload."""
        return Fraction(32) / self.payload_bits_per_element

    def nominal_bits_per_element(self) -> Fraction:
        return self.bits + Fraction(32, self.block_size)

    def lines(self) -> list[str]:
        out = [f"# {HEADER}", "field,bytes"]
        keys = ("lam", "codes", "maxima", "diag", "root_codes", "root_maxima", "dense")
        for k in keys:
            out.append(f"{k},{sum(getattr(f, k) for f in self.quantized)}")
        for i, f in enumerate(self.quantized):
            out.append(f"eigenfactor[{i}:{f.dim}],{f.lam + f.codes + f.maxima}")
        out += [
            f"first_order,{self.first_order}",
            f"eigenfactor_bytes,{self.eigenfactor_bytes}",
            f"quantized_total,{self.quantized_total + self.first_order}",
            f"full32_total,{self.full_total + self.first_order}",
            f"preconditioner_ratio,{self.total_ratio:.4f}",
            f"payload_bits_per_element,{float(self.payload_bits_per_element):.6f}",
            f"payload_ratio,{float(self.payload_ratio):.6f}",
        ]
        return out


def memory_report(
    m: int,
    n: int,
    bits: int = 4,
    block_size: int = 64,
    max_order: int = 1200,
    min_quant_size: int = 4096,
    fo: FOKind | str | None = FOKind.SGDM,
) -> MemoryReport:
    """State bytes of an ``m x n`` parameter under ``bits``-bit and 32-bit Shampoo."""
    rep = MemoryReport(m, n, bits, block_size)
    for _, _, h, w in block_partition((m, n), max_order):
        for dim in (h, w):
            rep.quantized.append(factor_bytes(dim, bits, block_size, min_quant_size))
            rep.full.append(factor_bytes(dim, None))
    if fo is not None:
        rep.first_order = _FO_BUFFERS[FOKind(fo)] * m * n * 4
    return rep
