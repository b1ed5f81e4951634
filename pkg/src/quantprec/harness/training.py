"""Training loops and the online-regret check for perturbed Shampoo."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import matops
from .. import precond as pc
from ..optimizer import (
    FirstOrderConfig,
    FirstOrderOnly,
    Shampoo,
    ShampooConfig,
    eigen_roundtrip_perturbation,
    identity_perturbation,
    init_perturbed,
    matrix_roundtrip_perturbation,
    perturbed_shampoo_step,
)
from .memory import MemoryReport, memory_report
from .problems import OnlineConvexSeq, TrainProblem


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss = {loss!r}")
        self.step = step
        self.loss = loss


def multistep_schedule(total_steps: int, every: float = 0.3, factor: float = 0.1):
    """Learning-rate multiplier: times ``factor`` after every ``every`` fraction of ``total_steps``."""
    period = max(1, int(round(every * total_steps)))
    return lambda step: factor ** (step // period)


class Trainer:
    """One optimizer per parameter matrix of ``problem``; ``shampoo=None`` means first order only.

    ``schedule(step)`` multiplies the base learning rate at 0-based ``step``.
    """

    def __init__(self, problem: TrainProblem, shampoo: ShampooConfig | None, fo: FirstOrderConfig, optimizers=None,
                 schedule=None):
        self.problem = problem
        self.shampoo = shampoo
        self.fo = fo
        self.schedule = schedule
        if optimizers is None:
            params = problem.init_params()
            if shampoo is None:
                optimizers = [FirstOrderOnly(W, fo) for W in params]
            else:
                optimizers = [Shampoo(W, shampoo, fo) for W in params]
        self.optimizers = optimizers

    @property
    def params(self) -> list[np.ndarray]:
        return [opt.W for opt in self.optimizers]

    @property
    def step_count(self) -> int:
        return self.optimizers[0].step_count

    def step(self) -> float:
        """Take one step; returns the loss at the iterate the gradient was taken at."""
        params = self.params
        loss, grads = self.problem.loss_and_grad(params)
        if not math.isfinite(loss):
            raise TrainingDiverged(self.step_count, loss)
        if type(self.problem).step_grad is not TrainProblem.step_grad:
            grads = self.problem.step_grad(params, self.step_count)
        if self.schedule is not None:
            lr = self.fo.lr * self.schedule(self.step_count)
            for opt in self.optimizers:
                opt.set_lr(lr)
        for opt, g in zip(self.optimizers, grads):
            opt.step(g)
        return loss

    def loss(self) -> float:
        loss = self.problem.loss(self.params)
        if not math.isfinite(loss):
            raise TrainingDiverged(self.step_count, loss)
        return loss

    def timings(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for opt in self.optimizers:
            for k, v in opt.timings().items():
                out[k] = out.get(k, 0.0) + v
        return out

    def memory(self) -> list[MemoryReport]:
        if self.shampoo is None or self.shampoo.precision.bits is None:
            bits = 4
        else:
            bits = self.shampoo.precision.bits
        cfg = self.shampoo or ShampooConfig()
        return [
            memory_report(*W.shape, bits=bits, block_size=cfg.block_size, max_order=cfg.max_order,
                          min_quant_size=cfg.min_quant_size, fo=self.fo.kind)
            for W in self.params
        ]


@dataclass
class TrainResult:
    """``losses[k]`` is the loss after ``k + 1`` updates."""

    initial_loss: float
    losses: list[float]
    timings: dict[str, float]
    wall_time: float
    memory: list[MemoryReport] = field(default_factory=list)
    trainer: Trainer | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def steps_to_reach(self, level: float) -> int | None:
        """1-based index of the first step whose loss is <= ``level``."""
        for i, v in enumerate(self.losses):
            if v <= level:
                return i + 1
        return None


def run_training(
    problem: TrainProblem,
    shampoo: ShampooConfig | None,
    fo: FirstOrderConfig,
    steps: int,
    trainer: Trainer | None = None,
    schedule=None,
) -> TrainResult:
    """Run ``steps`` steps; pass ``trainer`` to continue an existing run."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    trainer = trainer or Trainer(problem, shampoo, fo, schedule=schedule)
    start = time.perf_counter()
    before = [trainer.step() for _ in range(steps)]
    final = trainer.loss()
    initial = before[0] if steps else final
    losses = before[1:] + [final] if steps else []
    return TrainResult(initial, losses, trainer.timings(), time.perf_counter() - start, trainer.memory(), trainer)


# ---------------------------------------------------------------- regret


@dataclass
class RegretResult:
    regret: float
    bound: float
    bound_general: float
    eta: float
    D: float
    rank: int
    rho: float
    mu: float
    tr_L: float
    tr_R: float
    eta_iterations: int
    fixed_point: bool = True

    @property
    def ok(self) -> bool:
        return self.regret <= self.bound_general and self.regret <= self.bound


def make_perturbation(quantizer: str, bits: int = 4, block_size: int = 64, mapping="linear2"):
    """``identity``, ``matrix`` (entrywise roundtrip) or ``eigen`` (eigenvector roundtrip)."""
    if quantizer == "identity":
        return identity_perturbation
    qc = pc.QuantConfig(bits=bits, mapping=mapping, block_size=block_size, min_quant_size=0)
    if quantizer == "matrix":
        return matrix_roundtrip_perturbation(qc)
    if quantizer == "eigen":
        return eigen_roundtrip_perturbation(qc)
    raise ValueError(f"unknown quantizer {quantizer!r}")


def _run_perturbed(seq: OnlineConvexSeq, eta: float, perturb, epsilon: float, norm: str):
    state = init_perturbed(seq.init_params()[0], eta, epsilon)
    W_star = seq.best_fixed()
    regret = 0.0
    D = 0.0
    rank = 0
    L_sum = np.zeros((seq.m, seq.m))
    R_sum = np.zeros((seq.n, seq.n))
    for t in range(seq.T):
        W = state.W
        G = seq.grad_t(W, t)
        regret += seq.loss_t(W, t) - seq.loss_t(W_star, t)
        D = max(D, float(np.linalg.norm(W - W_star)))
        rank = max(rank, int(np.linalg.matrix_rank(G)))
        L_sum += G @ G.T
        R_sum += G.T @ G
        perturbed_shampoo_step(state, G, perturb, norm=norm)
    return state, regret, D, max(rank, 1), L_sum, R_sum


def regret_check(
    T: int = 200,
    m: int = 8,
    n: int = 8,
    quantizer: str = "matrix",
    bits: int = 4,
    rank: int = 1,
    epsilon: float = 1e-6,
    seed=0,
    norm: str = "exact",
    max_eta_iters: int = 60,
    max_eta: float = 1e4,
    rtol: float = 1e-6,
) -> RegretResult:
    """Regret of perturbed Shampoo against the best fixed point in hindsight.

    ``eta = D / sqrt(2 r)`` depends on the trajectory through ``D``, so it is
    found by bisection on ``D(eta)/sqrt(2r) - eta``.  When that gap stays
    positive up to ``max_eta`` there is no fixed point; ``fixed_point`` is then
    False and the scanned eta with the smallest ``bound_general`` is used.
    ``bound_general`` is the bound for the eta actually used, ``(D^2/(2 eta) + eta r) tr(L^{1/4}) tr(R^{1/4})`` with
    the perturbation terms added, which holds for any eta; at the fixed point
    it coincides with ``bound``.
    """
    seq = OnlineConvexSeq(m=m, n=n, T=T, rank=rank, seed=seed)
    perturb = make_perturbation(quantizer, bits)
    runs = 0

    def gap(eta):
        nonlocal runs
        runs += 1
        try:
            with np.errstate(over="raise", invalid="raise"):
                out = _run_perturbed(seq, eta, perturb, epsilon, norm)
        except (matops.DegenerateInputError, matops.NumericalFailure, FloatingPointError, np.linalg.LinAlgError):
            # the iterates blew up: eta is far past the fixed point
            return -math.inf, None
        return out[2] / math.sqrt(2 * out[3]) - eta, out

    def bounds(eta, out):
        state, _, D, r, L_sum, R_sum = out
        tr_L = float(np.trace(matops.sym_power(epsilon * np.eye(m) + L_sum, 0.25)))
        tr_R = float(np.trace(matops.sym_power(epsilon * np.eye(n) + R_sum, 0.25)))
        left = 2**0.25 * m * state.rho**0.25 + tr_L
        right = 2**0.25 * n * state.mu**0.25 + tr_R
        return math.sqrt(2 * r) * D * left * right, (D * D / (2 * eta) + eta * r) * left * right, tr_L, tr_R

    # h(eta) = D(eta)/sqrt(2r) - eta is positive for small eta; bracket a sign change
    lo, hi = 1e-3, 1e-3
    h_hi, out = gap(hi)
    scanned = [(hi, out)]
    while h_hi > 0 and runs < max_eta_iters and hi < max_eta:
        lo, hi = hi, hi * 4
        h_hi, out = gap(hi)
        scanned.append((hi, out))
    fixed_point = h_hi <= 0
    if fixed_point:
        best = (abs(h_hi), hi, out) if out is not None else (math.inf, None, None)
        while runs < max_eta_iters and hi - lo > rtol * hi:
            mid = math.sqrt(lo * hi)
            h_mid, out_mid = gap(mid)
            if abs(h_mid) < best[0]:
                best = (abs(h_mid), mid, out_mid)
            if h_mid > 0:
                lo = mid
            else:
                hi = mid
        eta_used, out_used = best[1], best[2]
    else:
        # D grows faster than sqrt(2r) eta: no fixed point, so use the scanned
        # step size with the smallest general bound
        stable = [(bounds(e, o)[1], e, o) for e, o in scanned if o is not None]
        eta_used, out_used = min(stable, key=lambda x: x[0])[1:] if stable else (None, None)
    if out_used is None:
        raise matops.NumericalFailure("no stable step size found for the regret run")
    state, regret, D, r, _, _ = out_used
    bound, general, tr_L, tr_R = bounds(eta_used, out_used)
    return RegretResult(regret, bound, general, eta_used, D, r, state.rho, state.mu, tr_L, tr_R, runs, fixed_point)
