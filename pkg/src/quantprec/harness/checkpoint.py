"""Binary checkpoints of optimizer states.

Layout (all integers little-endian)::

    "Q4SH" | u32 version | u32 n_params | param records

Each parameter record holds the optimizer kind, its configuration, the
block tiling and one record per block: block id, dims, step counter, the
weights, first-order buffers and the left/right factor and root states.
Compressed states are written as they are held in memory (eigenvalues,
packed codes, float32 maxima, diagonal), so loading reproduces the exact
state and save -> load -> save is byte-identical.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .. import precond as pc
from ..optimizer import (
    FirstOrderConfig,
    FirstOrderOnly,
    FirstOrderState,
    FOKind,
    Precision,
    Shampoo,
    ShampooBlockState,
    ShampooConfig,
    Variant,
)
from ..quantcore import Mapping, QuantizedBlockVector

MAGIC = b"Q4SH"
VERSION = 1


class CheckpointError(ValueError):
    pass


_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.uint8): 3}
_PRECISIONS = list(Precision)
_VARIANTS = list(Variant)
_MAPPINGS = list(Mapping)
_FO_KINDS = list(FOKind)
_SOLVERS = ["randomized", "exact"]

_KIND_FIRST_ORDER = 0
_KIND_SHAMPOO = 1
_TAG_DENSE = 0
_TAG_EIGEN = 1
_TAG_ROOT = 2
_TAG_QUANT = 1


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def raw(self, b: bytes):
        self.buf.write(b)

    def u8(self, v: int):
        self.raw(struct.pack("<B", v))

    def u32(self, v: int):
        self.raw(struct.pack("<I", v))

    def u64(self, v: int):
        self.raw(struct.pack("<Q", v))

    def f64(self, v: float):
        self.raw(struct.pack("<d", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.raw(b)

    def array(self, a: np.ndarray):
        a = np.asarray(a)
        code = _DTYPE_CODES.get(a.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {a.dtype}")
        self.u8(code)
        self.u8(a.ndim)
        for d in a.shape:
            self.u32(d)
        self.raw(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def _unpack(self, fmt: str):
        return struct.unpack(fmt, self.raw(struct.calcsize(fmt)))[0]

    def u8(self) -> int:
        return self._unpack("<B")

    def u32(self) -> int:
        return self._unpack("<I")

    def u64(self) -> int:
        return self._unpack("<Q")

    def f64(self) -> float:
        return self._unpack("<d")

    def text(self) -> str:
        return self.raw(self.u32()).decode("utf-8")

    def array(self) -> np.ndarray:
        code = self.u8()
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        dt = _DTYPES[code]
        shape = tuple(self.u32() for _ in range(self.u8()))
        count = int(np.prod(shape, dtype=np.int64))
        a = np.frombuffer(self.raw(count * dt.itemsize), dtype=dt).reshape(shape)
        return a.astype(dt.newbyteorder("="), copy=True)


def _index(options, value, what) -> int:
    try:
        return options.index(value)
    except ValueError:
        raise CheckpointError(f"cannot encode {what} {value!r}") from None


def _pick(options, i, what):
    if i >= len(options):
        raise CheckpointError(f"unknown {what} code {i}")
    return options[i]


# ------------------------------------------------------------------ configs


def _write_fo_config(w: _Writer, c: FirstOrderConfig):
    w.u8(_index(_FO_KINDS, c.kind, "first-order kind"))
    for v in (c.lr, c.momentum, c.beta1, c.beta2, c.eps, c.weight_decay):
        w.f64(v)


def _read_fo_config(r: _Reader) -> FirstOrderConfig:
    kind = _pick(_FO_KINDS, r.u8(), "first-order kind")
    lr, momentum, beta1, beta2, eps, wd = (r.f64() for _ in range(6))
    return FirstOrderConfig(kind, lr=lr, momentum=momentum, beta1=beta1, beta2=beta2, eps=eps, weight_decay=wd)


def _write_shampoo_config(w: _Writer, c: ShampooConfig):
    w.u8(_index(_PRECISIONS, c.precision, "precision"))
    w.u8(_index(_VARIANTS, c.variant, "variant"))
    w.u8(_index(_MAPPINGS, c.mapping, "mapping"))
    w.u8(_index(_SOLVERS, c.eigensolver, "eigensolver"))
    w.f64(c.beta)
    w.f64(c.eps)
    for v in (c.t1, c.t2, c.T1, c.T2, c.p, c.svd_iters, c.block_size, c.min_quant_size, c.max_order,
              c.power_iters, c.schur_iters):
        w.u32(v)


def _read_shampoo_config(r: _Reader) -> ShampooConfig:
    precision = _pick(_PRECISIONS, r.u8(), "precision")
    variant = _pick(_VARIANTS, r.u8(), "variant")
    mapping = _pick(_MAPPINGS, r.u8(), "mapping")
    solver = _pick(_SOLVERS, r.u8(), "eigensolver")
    beta, eps = r.f64(), r.f64()
    names = ("t1", "t2", "T1", "T2", "p", "svd_iters", "block_size", "min_quant_size", "max_order",
             "power_iters", "schur_iters")
    ints = {k: r.u32() for k in names}
    return ShampooConfig(precision=precision, variant=variant, mapping=mapping, eigensolver=solver,
                         beta=beta, eps=eps, **ints)


# ------------------------------------------------------------------- states


def _write_fo_state(w: _Writer, fo: FirstOrderState):
    _write_fo_config(w, fo.config)
    w.u64(fo.step)
    w.u32(len(fo.buffers))
    for name in sorted(fo.buffers):
        w.text(name)
        w.array(fo.buffers[name])


def _read_fo_state(r: _Reader) -> FirstOrderState:
    config = _read_fo_config(r)
    step = r.u64()
    buffers = {}
    for _ in range(r.u32()):
        name = r.text()
        buffers[name] = r.array()
    return FirstOrderState(config, buffers, step)


def _write_stored(w: _Writer, S: pc.StoredMatrix):
    w.u32(S.dim)
    if S.quant is None:
        w.u8(_TAG_DENSE)
        w.array(S.dense)
        return
    q = S.quant
    w.u8(_TAG_QUANT)
    w.u8(q.bits)
    w.u8(_index(_MAPPINGS, q.mapping, "mapping"))
    w.u32(q.block_size)
    w.u64(q.length)
    w.u64(q.segment or 0)
    w.array(q.codes)
    w.array(q.maxima)


def _read_stored(r: _Reader) -> pc.StoredMatrix:
    dim = r.u32()
    tag = r.u8()
    if tag == _TAG_DENSE:
        return pc.StoredMatrix(dim=dim, dense=r.array())
    if tag != _TAG_QUANT:
        raise CheckpointError(f"unknown matrix tag {tag}")
    bits = r.u8()
    mapping = _pick(_MAPPINGS, r.u8(), "mapping")
    block_size = r.u32()
    length = r.u64()
    segment = r.u64() or None
    codes, maxima = r.array(), r.array()
    q = QuantizedBlockVector(codes, maxima, length, block_size, bits, mapping, segment)
    return pc.StoredMatrix(dim=dim, quant=q)


def _write_factor(w: _Writer, obj):
    if isinstance(obj, np.ndarray):
        w.u8(_TAG_DENSE)
        w.array(obj)
    elif isinstance(obj, pc.CompressedEigenFactor):
        w.u8(_TAG_EIGEN)
        w.array(obj.lam)
        _write_stored(w, obj.u)
    elif isinstance(obj, pc.CompressedInverseRoot):
        w.u8(_TAG_ROOT)
        w.array(obj.diag)
        _write_stored(w, obj.offdiag)
    else:
        raise CheckpointError(f"cannot serialize {type(obj).__name__}")


def _read_factor(r: _Reader):
    tag = r.u8()
    if tag == _TAG_DENSE:
        return r.array()
    if tag == _TAG_EIGEN:
        lam = r.array()
        u = _read_stored(r)
        return pc.CompressedEigenFactor(dim=u.dim, lam=lam, u=u)
    if tag == _TAG_ROOT:
        diag = r.array()
        off = _read_stored(r)
        return pc.CompressedInverseRoot(dim=off.dim, diag=diag, offdiag=off)
    raise CheckpointError(f"unknown factor tag {tag}")


# ---------------------------------------------------------------- optimizers


def _write_optimizer(w: _Writer, opt):
    if isinstance(opt, FirstOrderOnly):
        w.u8(_KIND_FIRST_ORDER)
        w.array(opt.W)
        _write_fo_state(w, opt.fo)
        return
    if not isinstance(opt, Shampoo):
        raise CheckpointError(f"cannot serialize optimizer {type(opt).__name__}")
    w.u8(_KIND_SHAMPOO)
    _write_shampoo_config(w, opt.config)
    w.u32(opt.shape[0])
    w.u32(opt.shape[1])
    w.u32(len(opt.blocks))
    for i, (block, st) in enumerate(zip(opt.blocks, opt.states)):
        w.u32(i)
        for v in block:
            w.u32(v)
        w.u64(st.step)
        w.array(st.W)
        _write_fo_state(w, st.fo)
        for obj in (st.left, st.right, st.left_root, st.right_root):
            _write_factor(w, obj)


def _read_optimizer(r: _Reader):
    kind = r.u8()
    if kind == _KIND_FIRST_ORDER:
        W = r.array()
        fo = _read_fo_state(r)
        opt = FirstOrderOnly.__new__(FirstOrderOnly)
        opt.W, opt.fo = W, fo
        return opt
    if kind != _KIND_SHAMPOO:
        raise CheckpointError(f"unknown optimizer kind {kind}")
    config = _read_shampoo_config(r)
    shape = (r.u32(), r.u32())
    opt = Shampoo.__new__(Shampoo)
    opt.shape, opt.config, opt.blocks, opt.states = shape, config, [], []
    for i in range(r.u32()):
        if r.u32() != i:
            raise CheckpointError("block records out of order")
        opt.blocks.append(tuple(r.u32() for _ in range(4)))
        step = r.u64()
        W = r.array()
        fo = _read_fo_state(r)
        left, right, left_root, right_root = (_read_factor(r) for _ in range(4))
        opt.states.append(ShampooBlockState(W, config, fo, left, right, left_root, right_root, step=step))
    return opt


def dumps(optimizers) -> bytes:
    w = _Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    w.u32(len(optimizers))
    for opt in optimizers:
        _write_optimizer(w, opt)
    return w.buf.getvalue()


def loads(data: bytes) -> list:
    r = _Reader(data)
    if r.raw(4) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = [_read_optimizer(r) for _ in range(r.u32())]
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint")
    return out


def save(path, optimizers) -> None:
    Path(path).write_bytes(dumps(optimizers))


def load(path) -> list:
    return loads(Path(path).read_bytes())
