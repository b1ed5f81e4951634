"""Shampoo optimizers (uncompressed and quantized), CASPR, first-order steps and perturbed Shampoo."""

from __future__ import annotations

import dataclasses
import enum
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import matops
from . import precond as pc
from .quantcore import Mapping, roundtrip


class InvalidPerturbation(ValueError):
    """A perturbation returned a non-symmetric matrix."""


# ---------------------------------------------------------------- first order


class FOKind(str, enum.Enum):
    SGDM = "sgdm"
    ADAMW = "adamw"
    ADAGRAD = "adagrad"


_DEFAULT_LR = {FOKind.SGDM: 0.1, FOKind.ADAMW: 1e-3, FOKind.ADAGRAD: 0.01}
_DEFAULT_EPS = {FOKind.SGDM: 0.0, FOKind.ADAMW: 1e-8, FOKind.ADAGRAD: 1e-10}


@dataclass(frozen=True)
class FirstOrderConfig:
    kind: FOKind | str = FOKind.SGDM
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float | None = None
    weight_decay: float = 0.0

    def __post_init__(self):
        kind = FOKind(str(self.kind).lower() if not isinstance(self.kind, FOKind) else self.kind)
        object.__setattr__(self, "kind", kind)
        if self.lr is None:
            object.__setattr__(self, "lr", _DEFAULT_LR[kind])
        if self.eps is None:
            object.__setattr__(self, "eps", _DEFAULT_EPS[kind])


@dataclass
class FirstOrderState:
    config: FirstOrderConfig
    buffers: dict[str, np.ndarray]
    step: int = 0


def init_first_order(config: FirstOrderConfig, shape) -> FirstOrderState:
    names = {FOKind.SGDM: ("momentum",), FOKind.ADAMW: ("m", "v"), FOKind.ADAGRAD: ("sum",)}
    return FirstOrderState(config, {k: np.zeros(shape) for k in names[config.kind]})


def sgdm_step(fo: FirstOrderState, W: np.ndarray, G: np.ndarray):
    """Heavy ball with coupled weight decay: ``b = mu b + (g + wd W)``, ``W -= lr b``."""
    c = fo.config
    g = G + c.weight_decay * W if c.weight_decay else G
    buf = c.momentum * fo.buffers["momentum"] + g
    return W - c.lr * buf, FirstOrderState(c, {"momentum": buf}, fo.step + 1)


def adamw_step(fo: FirstOrderState, W: np.ndarray, G: np.ndarray):
    """Adam with decoupled weight decay and bias correction."""
    c = fo.config
    t = fo.step + 1
    m = c.beta1 * fo.buffers["m"] + (1 - c.beta1) * G
    v = c.beta2 * fo.buffers["v"] + (1 - c.beta2) * G * G
    mhat = m / (1 - c.beta1**t)
    vhat = v / (1 - c.beta2**t)
    W = W * (1 - c.lr * c.weight_decay) - c.lr * mhat / (np.sqrt(vhat) + c.eps)
    return W, FirstOrderState(c, {"m": m, "v": v}, t)


def adagrad_step(fo: FirstOrderState, W: np.ndarray, G: np.ndarray):
    c = fo.config
    g = G + c.weight_decay * W if c.weight_decay else G
    acc = fo.buffers["sum"] + g * g
    return W - c.lr * g / (np.sqrt(acc) + c.eps), FirstOrderState(c, {"sum": acc}, fo.step + 1)


_FO_STEPS = {FOKind.SGDM: sgdm_step, FOKind.ADAMW: adamw_step, FOKind.ADAGRAD: adagrad_step}


def first_order_step(fo: FirstOrderState, W: np.ndarray, G: np.ndarray):
    return _FO_STEPS[fo.config.kind](fo, W, G)


# ------------------------------------------------------------ preconditioning


def graft(G_hat: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Rescale ``G_hat`` to the Frobenius norm of ``G``."""
    nh = np.linalg.norm(G_hat)
    ng = np.linalg.norm(G)
    if nh == 0:
        if ng == 0:
            return np.zeros_like(G_hat)
        raise matops.DegenerateInputError("cannot graft a zero direction onto a nonzero gradient")
    return G_hat * (ng / nh)


def caspr_precondition(L_hat: np.ndarray, R_hat: np.ndarray, G: np.ndarray) -> np.ndarray:
    J = L_hat @ G + G @ R_hat
    return L_hat @ J + J @ R_hat


class Precision(str, enum.Enum):
    BITS32 = "32"
    BITS8 = "8"
    BITS4 = "4"
    BITS3 = "3"
    LOSSLESS = "lossless"

    @classmethod
    def parse(cls, value) -> "Precision":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())

    @property
    def bits(self) -> int | None:
        return None if self in (Precision.BITS32, Precision.LOSSLESS) else int(self.value)


class Variant(str, enum.Enum):
    SHAMPOO = "shampoo"
    CASPR = "caspr"


@dataclass(frozen=True)
class ShampooConfig:
    precision: Precision | str = Precision.BITS4
    variant: Variant | str = Variant.SHAMPOO
    beta: float = 0.95
    eps: float = 1e-6
    t1: int = 1
    t2: int = 4
    T1: int = 100
    T2: int = 500
    p: int = 4
    svd_iters: int = 1
    eigensolver: str = "randomized"
    mapping: Mapping | str = Mapping.LINEAR2
    block_size: int = 64
    min_quant_size: int = 4096
    max_order: int = 1200
    power_iters: int = 10
    schur_iters: int = 10

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        object.__setattr__(self, "variant", Variant(str(getattr(self.variant, "value", self.variant)).lower()))
        object.__setattr__(self, "mapping", Mapping.parse(self.mapping))
        if self.T1 < 1 or self.T2 < 1:
            raise ValueError("update intervals must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def quant(self) -> pc.QuantConfig:
        return pc.QuantConfig(
            bits=self.precision.bits,
            mapping=self.mapping,
            block_size=self.block_size,
            min_quant_size=self.min_quant_size,
        )


@dataclass
class ShampooBlockState:
    """State of one parameter block.

    For ``Precision.BITS32`` the factors are dense matrices ``L, R`` and the
    roots dense ``L^(-1/4), R^(-1/4)``; otherwise they are compressed states.
    """

    W: np.ndarray
    config: ShampooConfig
    fo: FirstOrderState
    left: object
    right: object
    left_root: object
    right_root: object
    step: int = 0
    timings: dict[str, float] = field(default_factory=dict)


def init_block_state(W: np.ndarray, config: ShampooConfig, fo_config: FirstOrderConfig) -> ShampooBlockState:
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("parameter blocks must be matrices")
    m, n = W.shape
    fo = init_first_order(fo_config, W.shape)
    if config.precision is Precision.BITS32:
        return ShampooBlockState(W, config, fo, config.eps * np.eye(m), config.eps * np.eye(n), np.eye(m), np.eye(n))
    qc = config.quant
    return ShampooBlockState(
        W,
        config,
        fo,
        pc.init_eigenfactor(m, config.eps, qc),
        pc.init_eigenfactor(n, config.eps, qc),
        pc.identity_inverse_root(m, qc),
        pc.identity_inverse_root(n, qc),
    )


class _Timer:
    def __init__(self, timings: dict, key: str):
        self.timings, self.key = timings, key

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.key] = self.timings.get(self.key, 0.0) + time.perf_counter() - self.start


def _apply(state: ShampooBlockState, G: np.ndarray, L_hat: np.ndarray, R_hat: np.ndarray):
    with _Timer(state.timings, "precondition"):
        if state.config.variant is Variant.CASPR:
            G_hat = caspr_precondition(L_hat, R_hat, G)
        else:
            G_hat = L_hat @ G @ R_hat
        G_tilde = graft(G_hat, G)
    with _Timer(state.timings, "first_order"):
        state.W, state.fo = first_order_step(state.fo, state.W, G_tilde)
    return state


def _inverse_root_32(A: np.ndarray, cfg: ShampooConfig, seed: int) -> np.ndarray:
    lmax = matops.power_iteration_max_eig(A, iters=cfg.power_iters, seed=seed)
    return matops.schur_newton_inv_root(A, cfg.p, lmax * cfg.eps, iters=cfg.schur_iters, seed=seed)


def shampoo32_step(state: ShampooBlockState, G: np.ndarray) -> ShampooBlockState:
    """One step of uncompressed Shampoo; ``state`` is updated in place and returned."""
    cfg = state.config
    if cfg.precision is not Precision.BITS32:
        raise ValueError("shampoo32_step needs precision 32")
    G = _check_grad(G, state.W)
    t = state.step + 1
    if t % cfg.T1 == 0:
        with _Timer(state.timings, "pu"):
            state.left = cfg.beta * state.left + (1 - cfg.beta) * (G @ G.T)
            state.right = cfg.beta * state.right + (1 - cfg.beta) * (G.T @ G)
    if t % cfg.T2 == 0:
        with _Timer(state.timings, "piru"):
            state.left_root = _inverse_root_32(state.left, cfg, seed=t)
            state.right_root = _inverse_root_32(state.right, cfg, seed=t + 1)
    state.step = t
    return _apply(state, G, state.left_root, state.right_root)


def shampoo4_step(state: ShampooBlockState, G: np.ndarray) -> ShampooBlockState:
    """One step of compressed Shampoo; ``state`` is updated in place and returned.

    Only the compressed states are kept, decompression happens every step.
    """
    cfg = state.config
    if cfg.precision is Precision.BITS32:
        raise ValueError("shampoo4_step needs a compressed or lossless precision")
    qc = cfg.quant
    G = _check_grad(G, state.W)
    t = state.step + 1
    if t % cfg.T1 == 0:
        with _Timer(state.timings, "pu"):
            kw = dict(beta=cfg.beta, t1=cfg.t1, svd_iters=cfg.svd_iters, eigensolver=cfg.eigensolver)
            state.left = pc.pu(state.left, G @ G.T, qc, **kw)
            state.right = pc.pu(state.right, G.T @ G, qc, **kw)
    if t % cfg.T2 == 0:
        with _Timer(state.timings, "piru"):
            state.left_root = pc.piru(state.left, qc, eps=cfg.eps, t2=cfg.t2, p=cfg.p)
            state.right_root = pc.piru(state.right, qc, eps=cfg.eps, t2=cfg.t2, p=cfg.p)
    state.step = t
    L_hat = pc.decompress_inverse_root(state.left_root, qc)
    R_hat = pc.decompress_inverse_root(state.right_root, qc)
    return _apply(state, G, L_hat, R_hat)


def shampoo_step(state: ShampooBlockState, G: np.ndarray) -> ShampooBlockState:
    if state.config.precision is Precision.BITS32:
        return shampoo32_step(state, G)
    return shampoo4_step(state, G)


def _check_grad(G, W) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.shape != W.shape:
        raise ValueError(f"gradient shape {G.shape} does not match parameter shape {W.shape}")
    if not np.all(np.isfinite(G)):
        raise matops.NumericalFailure("non-finite gradient")
    return G


# ------------------------------------------------------------------- blocking


def _splits(size: int, max_order: int) -> list[int]:
    return [min(max_order, size - i) for i in range(0, size, max_order)]


def block_partition(shape, max_order: int) -> list[tuple[int, int, int, int]]:
    """Row-major tiling into blocks ``(row0, col0, rows, cols)`` with sides <= ``max_order``."""
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    m, n = shape
    blocks = []
    r0 = 0
    for rows in _splits(m, max_order):
        c0 = 0
        for cols in _splits(n, max_order):
            blocks.append((r0, c0, rows, cols))
            c0 += cols
        r0 += rows
    return blocks


def split_blocks(X: np.ndarray, blocks) -> list[np.ndarray]:
    return [X[r : r + h, c : c + w].copy() for r, c, h, w in blocks]


def merge_blocks(parts, blocks, shape) -> np.ndarray:
    out = np.empty(shape)
    for part, (r, c, h, w) in zip(parts, blocks):
        out[r : r + h, c : c + w] = part
    return out


class Shampoo:
    """Shampoo over one parameter matrix, split into blocks of order <= ``max_order``."""

    def __init__(self, W0: np.ndarray, config: ShampooConfig, fo_config: FirstOrderConfig):
        W0 = np.asarray(W0, dtype=np.float64)
        self.shape = W0.shape
        self.config = config
        self.blocks = block_partition(W0.shape, config.max_order)
        self.states = [init_block_state(P, config, fo_config) for P in split_blocks(W0, self.blocks)]

    @property
    def W(self) -> np.ndarray:
        return merge_blocks([s.W for s in self.states], self.blocks, self.shape)

    @property
    def step_count(self) -> int:
        return self.states[0].step

    def step(self, G: np.ndarray) -> np.ndarray:
        for state, g in zip(self.states, split_blocks(np.asarray(G, dtype=np.float64), self.blocks)):
            shampoo_step(state, g)
        return self.W

    def set_lr(self, lr: float) -> None:
        for s in self.states:
            s.fo.config = dataclasses.replace(s.fo.config, lr=lr)

    def timings(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for s in self.states:
            for k, v in s.timings.items():
                out[k] = out.get(k, 0.0) + v
        return out


class FirstOrderOnly:
    """Plain first-order optimizer with the same interface as :class:`Shampoo`."""

    def __init__(self, W0: np.ndarray, fo_config: FirstOrderConfig):
        self.W = np.array(W0, dtype=np.float64)
        self.fo = init_first_order(fo_config, self.W.shape)

    @property
    def step_count(self) -> int:
        return self.fo.step

    def step(self, G: np.ndarray) -> np.ndarray:
        self.W, self.fo = first_order_step(self.fo, self.W, np.asarray(G, dtype=np.float64))
        return self.W

    def set_lr(self, lr: float) -> None:
        self.fo.config = dataclasses.replace(self.fo.config, lr=lr)

    def timings(self) -> dict[str, float]:
        return {}


# ------------------------------------------------------------ perturbed Shampoo


@dataclass
class PerturbedState:
    W: np.ndarray
    L: np.ndarray
    R: np.ndarray
    rho: float = 0.0
    mu: float = 0.0
    eta: float = 1.0
    epsilon: float = 1e-6
    step: int = 0


def init_perturbed(W0: np.ndarray, eta: float, epsilon: float = 1e-6) -> PerturbedState:
    W0 = np.array(W0, dtype=np.float64)
    m, n = W0.shape
    return PerturbedState(W0, np.zeros((m, m)), np.zeros((n, n)), eta=eta, epsilon=epsilon)


def identity_perturbation(J: np.ndarray) -> np.ndarray:
    return J


def matrix_roundtrip_perturbation(qc: pc.QuantConfig) -> Callable[[np.ndarray], np.ndarray]:
    """``g(J)``: quantize the entries of ``J`` and symmetrize the result."""
    if qc.lossless:
        return identity_perturbation
    cb = qc.codebook

    def g(J):
        Q = roundtrip(J.T.ravel(), cb, qc.block_size, segment=J.shape[0]).reshape(J.shape).T
        return 0.5 * (Q + Q.T)

    return g


def eigen_roundtrip_perturbation(qc: pc.QuantConfig, t: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """``g(J)``: quantize the eigenvector matrix of ``J`` and rebuild it after ``t`` rectifications."""

    def g(J):
        lam, U = matops.exact_symeig(J, method="lapack")
        V = matops.bjorck_orthonormalize(pc.load_matrix(pc.store_matrix(U, qc), qc), t)
        X = matops.matrix_power_from_eig(V, np.maximum(lam, 0.0), 1.0)
        return 0.5 * (X + X.T)

    return g


def _spectral_norm(X: np.ndarray, method: str, seed: int) -> float:
    if method == "exact":
        return matops.spectral_norm_sym(X)
    if method == "power":
        # power iteration on X^2 gives the largest |eigenvalue| of X
        return float(np.sqrt(max(matops.power_iteration_max_eig(X @ X, iters=10, seed=seed), 0.0)))
    raise ValueError(f"unknown norm method {method!r}")


def perturbed_shampoo_step(
    state: PerturbedState,
    G: np.ndarray,
    perturb_g: Callable[[np.ndarray], np.ndarray] = identity_perturbation,
    norm: str = "exact",
) -> PerturbedState:
    """One step of Shampoo with perturbed accumulators; updates ``state`` in place."""
    G = np.asarray(G, dtype=np.float64)
    J = state.L + G @ G.T
    K = state.R + G.T @ G
    L_new = np.asarray(perturb_g(J), dtype=np.float64)
    R_new = np.asarray(perturb_g(K), dtype=np.float64)
    for name, X in (("L", L_new), ("R", R_new)):
        scale = max(np.abs(X).max(initial=0.0), 1e-300)
        if X.shape != (X.shape[0], X.shape[0]) or np.abs(X - X.T).max(initial=0.0) > 1e-12 * scale:
            raise InvalidPerturbation(f"perturbed {name} is not symmetric")
    state.rho += _spectral_norm(J - L_new, norm, seed=2 * state.step)
    state.mu += _spectral_norm(K - R_new, norm, seed=2 * state.step + 1)
    state.L, state.R = L_new, R_new
    m, n = G.shape
    left = matops.sym_power((state.epsilon + state.rho) * np.eye(m) + L_new, -0.25)
    right = matops.sym_power((state.epsilon + state.mu) * np.eye(n) + R_new, -0.25)
    state.W = state.W - state.eta * left @ G @ right
    state.step += 1
    return state
