"""Compressed preconditioner states and their update rules.

A preconditioner ``A = U diag(lam) U^T`` is stored as its eigenvalues plus a
block-quantized eigenvector matrix.  Its inverse root ``A^(-1/p)`` is stored
as a full-precision diagonal plus a block-quantized off-diagonal part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matops
from .quantcore import (
    Codebook,
    Mapping,
    QuantizedBlockVector,
    build_codebook,
    dequantize,
    quantize,
)


@dataclass(frozen=True)
class QuantConfig:
    """How matrices are compressed; ``bits=None`` stores them losslessly in float64."""

    bits: int | None = 4
    mapping: Mapping | str = Mapping.LINEAR2
    block_size: int = 64
    # matrices with fewer entries than this are kept dense
    min_quant_size: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "mapping", Mapping.parse(self.mapping))
        if self.bits is not None:
            build_codebook(self.mapping, self.bits)  # validates bits
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")

    @property
    def lossless(self) -> bool:
        return self.bits is None

    @property
    def codebook(self) -> Codebook | None:
        return None if self.bits is None else build_codebook(self.mapping, self.bits)

    @property
    def float_dtype(self):
        """Dtype of the full-precision side fields (eigenvalues, diagonals)."""
        return np.float64 if self.lossless else np.float32

    def compresses(self, dim: int) -> bool:
        return not self.lossless and dim * dim >= self.min_quant_size


LOSSLESS = QuantConfig(bits=None)


@dataclass(frozen=True, eq=False)
class StoredMatrix:
    """A square matrix either block-quantized column by column or kept dense."""

    dim: int
    quant: QuantizedBlockVector | None = None
    dense: np.ndarray | None = None

    def payload_bytes(self) -> int:
        if self.quant is not None:
            return self.quant.payload_bytes()
        return int(self.dense.nbytes)

    def same_as(self, other: "StoredMatrix") -> bool:
        if self.dim != other.dim or (self.quant is None) != (other.quant is None):
            return False
        if self.quant is not None:
            return self.quant.same_as(other.quant)
        return self.dense.dtype == other.dense.dtype and np.array_equal(self.dense, other.dense)


def store_matrix(X: np.ndarray, qc: QuantConfig) -> StoredMatrix:
    X = np.asarray(X, dtype=np.float64)
    dim = X.shape[0]
    if not qc.compresses(dim):
        dtype = np.float64 if qc.lossless else np.float32
        # C order so that a reloaded copy multiplies bit-identically
        return StoredMatrix(dim=dim, dense=np.ascontiguousarray(X, dtype=dtype))
    # column-major with one segment per column: blocks never mix two columns
    q = quantize(X.T.ravel(), qc.codebook, qc.block_size, segment=dim)
    return StoredMatrix(dim=dim, quant=q)


def load_matrix(S: StoredMatrix, qc: QuantConfig) -> np.ndarray:
    if S.quant is None:
        return S.dense.astype(np.float64)
    flat = dequantize(S.quant, build_codebook(S.quant.mapping, S.quant.bits))
    return flat.reshape(S.dim, S.dim).T.copy()


@dataclass(frozen=True, eq=False)
class CompressedEigenFactor:
    """Eigenvalues ``lam`` (nonincreasing, >= 0) and the stored eigenvector matrix."""

    dim: int
    lam: np.ndarray
    u: StoredMatrix

    def vectors(self, qc: QuantConfig) -> np.ndarray:
        return load_matrix(self.u, qc)

    def payload_bytes(self) -> int:
        return int(self.lam.nbytes) + self.u.payload_bytes()


@dataclass(frozen=True, eq=False)
class CompressedInverseRoot:
    """``diag`` holds the diagonal exactly; ``offdiag`` the rest (its diagonal is zero)."""

    dim: int
    diag: np.ndarray
    offdiag: StoredMatrix

    def payload_bytes(self) -> int:
        return int(self.diag.nbytes) + self.offdiag.payload_bytes()


def compress_eigenfactor(lam: np.ndarray, U: np.ndarray, qc: QuantConfig) -> CompressedEigenFactor:
    lam = np.maximum(np.asarray(lam, dtype=np.float64), 0.0)
    return CompressedEigenFactor(dim=U.shape[0], lam=np.ascontiguousarray(lam, dtype=qc.float_dtype), u=store_matrix(U, qc))


def decompress_eigenfactor(state: CompressedEigenFactor, qc: QuantConfig):
    """``(lam, V)`` in float64; ``V`` is the dequantized, unrectified eigenvector matrix."""
    return state.lam.astype(np.float64), state.vectors(qc)


def init_eigenfactor(dim: int, eps: float, qc: QuantConfig) -> CompressedEigenFactor:
    """State of ``eps * I``: eigenvalues ``eps`` and the quantized identity."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return compress_eigenfactor(np.full(dim, eps), np.eye(dim), qc)


def reconstruct(state: CompressedEigenFactor, qc: QuantConfig, t: int = 0) -> np.ndarray:
    """``V diag(lam) V^T`` after ``t`` rectification steps."""
    lam, V = decompress_eigenfactor(state, qc)
    V = matops.bjorck_orthonormalize(V, t)
    return matops.matrix_power_from_eig(V, lam, 1.0)


def pu(
    state: CompressedEigenFactor,
    M: np.ndarray,
    qc: QuantConfig,
    beta: float = 0.95,
    t1: int = 1,
    svd_iters: int = 1,
    eigensolver: str = "randomized",
) -> CompressedEigenFactor:
    """Preconditioner update: blend ``M`` into the stored factor and re-compress.

    ``eigensolver="exact"`` replaces the warm-started subspace iteration by a
    full eigendecomposition (the reference path used for equivalence tests).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    M = matops.check_symmetric(M, "M")
    lam, V = decompress_eigenfactor(state, qc)
    V = matops.bjorck_orthonormalize(V, t1)
    A = beta * matops.matrix_power_from_eig(V, lam, 1.0) + (1.0 - beta) * M
    A = 0.5 * (A + A.T)
    if eigensolver == "randomized":
        new_lam, P = matops.randomized_eig(A, V, iters=svd_iters, clip=True)
    elif eigensolver == "exact":
        new_lam, P = matops.exact_symeig(A, method="auto")
        new_lam = np.maximum(new_lam, 0.0)
    else:
        raise ValueError(f"unknown eigensolver {eigensolver!r}")
    return compress_eigenfactor(new_lam, P, qc)


def compress_inverse_root(X: np.ndarray, qc: QuantConfig) -> CompressedInverseRoot:
    X = np.asarray(X, dtype=np.float64)
    diag = np.diag(X).copy()
    off = X - np.diag(diag)
    return CompressedInverseRoot(dim=X.shape[0], diag=diag.astype(qc.float_dtype), offdiag=store_matrix(off, qc))


def identity_inverse_root(dim: int, qc: QuantConfig) -> CompressedInverseRoot:
    return compress_inverse_root(np.eye(dim), qc)


def piru(
    state: CompressedEigenFactor,
    qc: QuantConfig,
    eps: float = 1e-6,
    t2: int = 4,
    p: int = 4,
) -> CompressedInverseRoot:
    """Inverse root ``V (Lam + max(lam) eps I)^(-1/p) V^T`` of the stored factor."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t2 < 0:
        raise ValueError("t2 must be >= 0")
    lam, V = decompress_eigenfactor(state, qc)
    top = float(lam.max(initial=0.0))
    if top <= 0.0:
        raise matops.DegenerateInputError("inverse root of a zero preconditioner")
    V = matops.bjorck_orthonormalize(V, t2)
    X = matops.matrix_power_from_eig(V, lam + top * eps, -1.0 / p)
    return compress_inverse_root(X, qc)


def decompress_inverse_root(c: CompressedInverseRoot, qc: QuantConfig) -> np.ndarray:
    off = load_matrix(c.offdiag, qc)
    np.fill_diagonal(off, 0.0)
    off = 0.5 * (off + off.T)
    return off + np.diag(c.diag.astype(np.float64))
