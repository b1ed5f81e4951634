"""Desk-scale training problems with exact gradients."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..analysis import random_orthogonal
from ..rng import make_rng


class ProblemKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    TINY_MLP = "mlp"
    ONLINE_CONVEX = "online"


class TrainProblem:
    """A loss over a list of parameter matrices."""

    kind: ProblemKind

    def init_params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def loss(self, params: list[np.ndarray]) -> float:
        raise NotImplementedError

    def grad(self, params: list[np.ndarray]) -> list[np.ndarray]:
        raise NotImplementedError

    def loss_and_grad(self, params):
        return self.loss(params), self.grad(params)

    def step_grad(self, params, step: int) -> list[np.ndarray]:
        """Gradient used for update ``step`` (0-based); full batch unless overridden."""
        return self.grad(params)

    def finite_difference_check(self, probes: int = 10, h: float = 1e-5, seed=0) -> float:
        """Worst relative mismatch of directional derivatives against central differences."""
        rng = make_rng(seed)
        params = self.init_params()
        grads = self.grad(params)
        worst = 0.0
        for _ in range(probes):
            dirs = [rng.standard_normal(p.shape) for p in params]
            exact = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
            plus = self.loss([p + h * d for p, d in zip(params, dirs)])
            minus = self.loss([p - h * d for p, d in zip(params, dirs)])
            fd = (plus - minus) / (2 * h)
            worst = max(worst, abs(fd - exact) / max(abs(exact), abs(fd), 1e-12))
        return worst


def _spd(n: int, cond: float, rng) -> np.ndarray:
    """SPD matrix with eigenvalues log-spaced in ``[1/cond, 1]``."""
    U = random_orthogonal(n, rng)
    d = np.logspace(-math.log10(cond), 0, n)
    M = (U * d) @ U.T
    return 0.5 * (M + M.T)


@dataclass
class Quadratic(TrainProblem):
    """``0.5 ||P (W - W*) Q||_F^2`` with ill-conditioned SPD ``P`` and ``Q``.

    ``cond_left`` and ``cond_right`` are the condition numbers of ``P^2`` and
    ``Q^2``; the largest curvature is 1.  Both equal to 1 gives
    ``0.5 ||W - W*||_F^2``.
    """

    m: int = 32
    n: int = 16
    cond_left: float = 10.0
    cond_right: float = 10.0
    seed: int = 0
    kind = ProblemKind.QUADRATIC

    def __post_init__(self):
        rng = make_rng(self.seed)
        self.P = _spd(self.m, math.sqrt(self.cond_left), rng)
        self.Q = _spd(self.n, math.sqrt(self.cond_right), rng)
        self.W_star = rng.standard_normal((self.m, self.n))
        self.P2 = self.P @ self.P
        self.Q2 = self.Q @ self.Q

    def init_params(self):
        return [np.zeros((self.m, self.n))]

    def loss(self, params):
        E = self.P @ (params[0] - self.W_star) @ self.Q
        return 0.5 * float(np.sum(E * E))

    def grad(self, params):
        return [self.P2 @ (params[0] - self.W_star) @ self.Q2]


@dataclass
class Logistic(TrainProblem):
    """Multinomial logistic regression on anisotropic Gaussian features.

    Labels are sampled from a softmax teacher, so the data are not separable
    and the minimum is finite.
    """

    d: int = 256
    samples: int = 10_000
    classes: int = 10
    feature_cond: float = 100.0
    # standard deviation of the teacher logits
    signal: float = 1.0
    l2: float = 1e-4
    # mini-batch size for the update gradients; None means full batch
    batch_size: int | None = None
    seed: int = 0
    kind = ProblemKind.LOGISTIC

    def __post_init__(self):
        rng = make_rng(self.seed)
        R = random_orthogonal(self.d, rng)
        scales = np.logspace(0, -math.log10(self.feature_cond) / 2, self.d)
        self.X = (rng.standard_normal((self.samples, self.d)) * scales) @ R.T
        teacher = rng.standard_normal((self.d, self.classes)) * self.signal / (scales[:, None] * math.sqrt(self.d))
        teacher = R @ teacher
        logits = self.X @ teacher
        p = _softmax(logits)
        u = rng.random(self.samples)
        self.y = (p.cumsum(axis=1) < u[:, None]).sum(axis=1).clip(max=self.classes - 1)
        self.Y = np.eye(self.classes)[self.y]

    def init_params(self):
        return [np.zeros((self.d, self.classes))]

    def loss(self, params):
        return self.loss_and_grad(params, need_grad=False)[0]

    def grad(self, params):
        return self.loss_and_grad(params)[1]

    def loss_and_grad(self, params, need_grad: bool = True, rows=None):
        W = params[0]
        X, y, Y = (self.X, self.y, self.Y) if rows is None else (self.X[rows], self.y[rows], self.Y[rows])
        logits = X @ W
        mx = logits.max(axis=1, keepdims=True)
        E = np.exp(logits - mx)
        Z = E.sum(axis=1, keepdims=True)
        lse = (mx + np.log(Z))[:, 0]
        ce = float(np.mean(lse - logits[np.arange(len(y)), y]))
        loss = ce + 0.5 * self.l2 * float(np.sum(W * W))
        if not need_grad:
            return loss, None
        return loss, [X.T @ (E / Z - Y) / len(y) + self.l2 * W]

    def batch_rows(self, step: int) -> np.ndarray:
        # depends only on (seed, step) so a resumed run draws the same batches
        rng = np.random.default_rng([self.seed, step])
        return rng.choice(self.samples, size=self.batch_size, replace=False)

    def step_grad(self, params, step: int):
        if self.batch_size is None:
            return self.grad(params)
        return self.loss_and_grad(params, rows=self.batch_rows(step))[1]


@dataclass
class TinyMLP(TrainProblem):
    """One hidden tanh layer, squared loss against a random teacher network."""

    d: int = 16
    hidden: int = 32
    out: int = 4
    samples: int = 512
    seed: int = 0
    kind = ProblemKind.TINY_MLP

    def __post_init__(self):
        rng = make_rng(self.seed)
        self.X = rng.standard_normal((self.samples, self.d))
        T1 = rng.standard_normal((self.d, self.hidden)) / math.sqrt(self.d)
        T2 = rng.standard_normal((self.hidden, self.out)) / math.sqrt(self.hidden)
        self.Y = np.tanh(self.X @ T1) @ T2
        self._init = [
            rng.standard_normal((self.d, self.hidden)) / math.sqrt(self.d),
            rng.standard_normal((self.hidden, self.out)) / math.sqrt(self.hidden),
        ]

    def init_params(self):
        return [p.copy() for p in self._init]

    def loss(self, params):
        W1, W2 = params
        E = np.tanh(self.X @ W1) @ W2 - self.Y
        return 0.5 * float(np.sum(E * E)) / self.samples

    def grad(self, params):
        W1, W2 = params
        H = np.tanh(self.X @ W1)
        E = (H @ W2 - self.Y) / self.samples
        gW2 = H.T @ E
        gH = (E @ W2.T) * (1 - H * H)
        return [self.X.T @ gH, gW2]


@dataclass
class OnlineConvexSeq(TrainProblem):
    """Losses ``f_t(W) = 0.5 ||(W - C_t) B_t||_F^2`` with rank-``r`` ``B_t`` (n x r).

    Gradients ``(W - C_t) B_t B_t^T`` have rank at most ``r``.
    """

    m: int = 8
    n: int = 8
    T: int = 200
    rank: int = 1
    seed: int = 0
    kind = ProblemKind.ONLINE_CONVEX

    def __post_init__(self):
        rng = make_rng(self.seed)
        self.C = rng.standard_normal((self.T, self.m, self.n))
        self.B = rng.standard_normal((self.T, self.n, self.rank)) / math.sqrt(self.n)
        self.S = np.einsum("tir,tjr->tij", self.B, self.B)

    def init_params(self):
        return [np.zeros((self.m, self.n))]

    def loss_t(self, W, t: int) -> float:
        E = (W - self.C[t]) @ self.B[t]
        return 0.5 * float(np.sum(E * E))

    def grad_t(self, W, t: int) -> np.ndarray:
        return (W - self.C[t]) @ self.S[t]

    def loss(self, params):
        return sum(self.loss_t(params[0], t) for t in range(self.T)) / self.T

    def grad(self, params):
        return [sum(self.grad_t(params[0], t) for t in range(self.T)) / self.T]

    def best_fixed(self) -> np.ndarray:
        """Minimizer of the summed losses, ``(sum C_t S_t)(sum S_t)^+``."""
        lhs = np.einsum("tij,tjk->ik", self.C, self.S)
        return lhs @ np.linalg.pinv(self.S.sum(axis=0))


def desk_logistic(seed: int = 0, batch_size: int | None = 128) -> Logistic:
    """The logistic benchmark used by the CLI, the scripts and the acceptance run.

    256 features, 10k samples, 10 classes, teacher logits of standard
    deviation 3 and mini-batches of 128.
    """
    return Logistic(seed=seed, signal=3.0, batch_size=batch_size)


def _logsumexp(Z):
    mx = Z.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(Z - mx).sum(axis=1, keepdims=True)))[:, 0]


def _softmax(Z):
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def make_problem(kind: ProblemKind | str, seed: int = 0, **kwargs) -> TrainProblem:
    kind = ProblemKind(kind)
    cls = {
        ProblemKind.QUADRATIC: Quadratic,
        ProblemKind.LOGISTIC: Logistic,
        ProblemKind.TINY_MLP: TinyMLP,
        ProblemKind.ONLINE_CONVEX: OnlineConvexSeq,
    }[kind]
    return cls(seed=seed, **kwargs)
