"""Quantization-error metrics and numerical checks of the perturbation results.

``f(A) = A^s`` throughout; negative powers of an indefinite matrix (which a
quantized ``A`` can be) are taken on the singular values, i.e. ``|lam|^s``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import matops
from . import precond as pc
from .rng import make_rng


@dataclass(frozen=True)
class ErrorReport:
    nre: float
    ae_degrees: float
    f_label: str = "A^s"
    g_label: str = ""


def cosine(X: np.ndarray, Y: np.ndarray) -> float:
    nx, ny = np.linalg.norm(X), np.linalg.norm(Y)
    if nx == 0 or ny == 0:
        raise matops.DegenerateInputError("cosine of a zero matrix")
    return float(np.clip(np.sum(X * Y) / (nx * ny), -1.0, 1.0))


def nre_ae(f_of_A: np.ndarray, f_of_gA: np.ndarray, f_label: str = "A^s", g_label: str = "") -> ErrorReport:
    """Normwise relative error and angle (degrees) between two matrices."""
    f_of_A = np.asarray(f_of_A, dtype=np.float64)
    f_of_gA = np.asarray(f_of_gA, dtype=np.float64)
    if f_of_A.shape != f_of_gA.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(f_of_A)
    if denom == 0:
        raise matops.DegenerateInputError("reference matrix is zero")
    nre = float(np.linalg.norm(f_of_A - f_of_gA) / denom)
    if np.linalg.norm(f_of_gA) == 0:
        ae = 90.0
    else:
        ae = math.degrees(math.acos(cosine(f_of_A, f_of_gA)))
    return ErrorReport(nre, ae, f_label, g_label)


def sym_fn_power(A: np.ndarray, s: float) -> np.ndarray:
    """``A^s`` through the singular values of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    lam, U = np.linalg.eigh(0.5 * (A + A.T))
    mag = np.abs(lam)
    if s < 0 and np.any(mag == 0):
        raise matops.DegenerateInputError("singular matrix raised to a negative power")
    return (U * mag**s) @ U.T


def random_orthogonal(n: int, seed=None) -> np.ndarray:
    rng = make_rng(seed)
    return matops.qr_orthonormal(rng.standard_normal((n, n)))


def make_synthetic_pd(m: int, n: int, c: float, lam: float = 1.0, seed=None) -> np.ndarray:
    """``U diag(c*lam x m, lam x n) U^T`` for a seeded random orthogonal ``U``."""
    if c < 1 or lam <= 0:
        raise ValueError("need c >= 1 and lam > 0")
    U = random_orthogonal(m + n, seed)
    d = np.concatenate([np.full(m, c * lam), np.full(n, lam)])
    A = (U * d) @ U.T
    return 0.5 * (A + A.T)


def contract_spectrum(lam: np.ndarray, tau: float) -> np.ndarray:
    """``tau (lam - min lam) + min lam``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    lo = lam.min()
    return tau * (lam - lo) + lo


# ------------------------------------------------------------- Table-1 schemes


class Scheme(str, enum.Enum):
    A = "A"
    U = "U"
    U_OR = "U_or"
    B = "B"
    A_B = "A_B"
    U_B = "U_B"
    U_OR_B = "U_or_B"

    @property
    def input_side(self) -> str | None:
        if self in (Scheme.A, Scheme.A_B):
            return "A"
        if self in (Scheme.U, Scheme.U_B):
            return "U"
        if self in (Scheme.U_OR, Scheme.U_OR_B):
            return "U_or"
        return None

    @property
    def quantizes_output(self) -> bool:
        return self in (Scheme.B, Scheme.A_B, Scheme.U_B, Scheme.U_OR_B)

    @property
    def rectified(self) -> bool:
        return self in (Scheme.U_OR, Scheme.U_OR_B)


def _roundtrip_matrix(X: np.ndarray, qc: pc.QuantConfig) -> np.ndarray:
    # Table-1 style: every matrix is quantized, no small-matrix bypass
    qc = pc.QuantConfig(qc.bits, qc.mapping, qc.block_size, min_quant_size=0) if qc.bits else qc
    return pc.load_matrix(pc.store_matrix(X, qc), qc)


def table1_experiment(
    A: np.ndarray,
    scheme: Scheme | str,
    qc: pc.QuantConfig,
    s: float = -0.25,
    exclude_diag: bool = False,
    t1: int = 1,
) -> ErrorReport:
    """Error in ``f(A) = A^s`` (optionally minus its diagonal) of one quantization scheme."""
    scheme = Scheme(scheme)
    A = matops.check_symmetric(A)
    lam, U = np.linalg.eigh(A)
    if np.any(lam <= 0):
        raise matops.DegenerateInputError("A must be positive definite")
    fA = (U * lam**s) @ U.T

    side = scheme.input_side
    if side is None:
        fgA = fA
    elif side == "A":
        fgA = sym_fn_power(_roundtrip_matrix(A, qc), s)
    else:
        V = _roundtrip_matrix(U, qc)
        if scheme.rectified:
            V = matops.bjorck_orthonormalize(V, t1)
        fgA = sym_fn_power((V * lam) @ V.T, s)
    if scheme.quantizes_output:
        fgA = _roundtrip_matrix(fgA, qc)

    label = "A^s"
    if exclude_diag:
        fA = fA - np.diag(np.diag(fA))
        fgA = fgA - np.diag(np.diag(fgA))
        label = "A^s - Diag(diag(A^s))"
    return nre_ae(fA, fgA, f_label=label, g_label=scheme.value)


# ---------------------------------------------------------------------- Fig. 3


def rectification_error(lam: np.ndarray, V: np.ndarray, s: float, t2: int) -> float:
    """Mean ``|(V lam^s V^T)^(-1/s) (V lam V^T) - I|`` after ``t2`` rectification steps."""
    if s == 0:
        raise ValueError("s = 0 is excluded")
    Vt = matops.bjorck_orthonormalize(V, t2)
    X = matops.matrix_power_from_eig(Vt, lam, s)
    Y = matops.matrix_power_from_eig(Vt, lam, 1.0)
    E = sym_fn_power(X, -1.0 / s) @ Y - np.eye(len(lam))
    return float(np.mean(np.abs(E)))


def fig3_sweep(state: pc.CompressedEigenFactor, qc: pc.QuantConfig, s_list, t2_list) -> np.ndarray:
    """Grid ``[i, j]`` of errors for ``s_list[i]`` and ``t2_list[j]``."""
    lam, V = pc.decompress_eigenfactor(state, qc)
    if np.any(lam <= 0):
        raise matops.DegenerateInputError("eigenvalues must be positive")
    return np.array([[rectification_error(lam, V, s, t) for t in t2_list] for s in s_list])


def noisy_eigenfactor(
    n: int, qc: pc.QuantConfig, cond: float = 1e4, seed=None
) -> tuple[pc.CompressedEigenFactor, np.ndarray]:
    """Quantized eigenfactor of a random PD matrix with log-spaced spectrum; returns ``(state, A)``."""
    U = random_orthogonal(n, seed)
    lam = np.logspace(0, -math.log10(cond), n)
    A = (U * lam) @ U.T
    qc = pc.QuantConfig(qc.bits, qc.mapping, qc.block_size, min_quant_size=0) if qc.bits else qc
    return pc.compress_eigenfactor(lam, U, qc), 0.5 * (A + A.T)


# --------------------------------------------------------------------- Lemma 1


@dataclass
class Lemma1Result:
    bound1_holds: bool
    bound2_holds: bool
    rel_err: float
    cosine: float
    hypotheses_ok: bool = True
    failed_hypothesis: str = ""


def givens_perturbation(U: np.ndarray, max_angle: float, seed=None) -> np.ndarray:
    """``Delta U`` such that ``U + Delta U`` is ``U`` rotated in random disjoint column planes."""
    rng = make_rng(seed)
    n = U.shape[1]
    perm = rng.permutation(n)
    Up = U.copy()
    for a, b in zip(perm[0::2], perm[1::2]):
        th = rng.uniform(-max_angle, max_angle)
        c, s = math.cos(th), math.sin(th)
        ua, ub = U[:, a].copy(), U[:, b].copy()
        Up[:, a] = c * ua + s * ub
        Up[:, b] = -s * ua + c * ub
    return Up - U


def lemma1_max_angle(alpha: float, beta: float) -> float:
    """Largest rotation angle meeting ``|du| <= alpha`` and ``<u, u + du> >= 1 - beta``."""
    return min(2 * math.asin(min(alpha / 2, 1.0)), math.acos(max(1 - beta, -1.0)))


def verify_lemma1(U, dU, lam, s: float, alpha: float, beta: float, tol: float = 1e-8) -> Lemma1Result:
    U = np.asarray(U, dtype=np.float64)
    dU = np.asarray(dU, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    n = U.shape[0]
    Up = U + dU
    failed = ""
    if matops.orthogonality_defect(U) > tol * math.sqrt(n):
        failed = "U is not orthogonal"
    elif matops.orthogonality_defect(Up) > tol * math.sqrt(n):
        failed = "U + dU is not orthogonal"
    elif np.linalg.norm(dU, axis=0).max() > alpha * (1 + 1e-12):
        failed = "column norm of dU exceeds alpha"
    elif np.einsum("ij,ij->j", U, Up).min() < (1 - beta) * (1 - 1e-12):
        failed = "inner product <u, u + du> below 1 - beta"
    B = matops.matrix_power_from_eig(U, lam, s)
    Bp = matops.matrix_power_from_eig(Up, lam, s)
    rel = float(np.linalg.norm(Bp - B) / np.linalg.norm(B))
    cos = cosine(B, Bp)
    return Lemma1Result(
        bound1_holds=rel <= 2 * alpha,
        bound2_holds=cos >= (1 - beta) ** 2,
        rel_err=rel,
        cosine=cos,
        hypotheses_ok=not failed,
        failed_hypothesis=failed,
    )


def lemma1_instance(n: int, alpha: float, beta: float, s: float, seed=None) -> Lemma1Result:
    rng = make_rng(seed)
    U = random_orthogonal(n, rng)
    lam = np.exp(rng.uniform(math.log(1e-4), 0.0, n))
    dU = givens_perturbation(U, lemma1_max_angle(alpha, beta), rng)
    return verify_lemma1(U, dU, lam, s, alpha, beta)


# --------------------------------------------------------------------- Lemma 2


@dataclass(frozen=True)
class Lemma2Forms:
    h1: float
    h2: float
    part3: tuple[float, float]


def lemma2_closed_forms(c: float, l: float, k: float, t: float, s: float) -> Lemma2Forms:
    """Closed-form relative error ``h1``, cosine ``h2`` and the balanced-case pair."""
    h1 = math.sqrt(l) * abs(k**s - 1) / math.sqrt(c ** (2 * s) + l)
    h2 = (l * t**s + c**s) / math.sqrt((1 + l * t ** (2 * s)) * (l + c ** (2 * s)))
    ks = (t * c) ** s
    part3 = (abs(ks - 1) / math.sqrt(ks + 1), 2 / math.sqrt(2 + ks + 1 / ks))
    return Lemma2Forms(h1, h2, part3)


def two_value_errors(c: float, m: int, n: int, k: float, s: float, lam: float = 1.0, seed=None):
    """Direct relative error and cosine of raising the small eigenvalue ``lam`` to ``k lam``."""
    U = random_orthogonal(m + n, seed)
    big = np.full(m, c * lam)
    A = (U * np.concatenate([big, np.full(n, lam)])) @ U.T
    Ap = (U * np.concatenate([big, np.full(n, k * lam)])) @ U.T
    # both powers come from fresh eigendecompositions of the assembled matrices
    B = sym_fn_power(0.5 * (A + A.T), s)
    Bp = sym_fn_power(0.5 * (Ap + Ap.T), s)
    return float(np.linalg.norm(Bp - B) / np.linalg.norm(B)), cosine(B, Bp)


def lemma2_discrepancy(c: float, l: float, k: float, s: float, m: int, seed=0) -> float:
    """Max gap between closed forms and the direct computation at ``k = t c``."""
    n = l * m
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError(f"n = l*m = {n} must be a positive integer")
    n = int(round(n))
    forms = lemma2_closed_forms(c, l, k, k / c, s)
    rel, cos = two_value_errors(c, m, n, k, s, seed=seed)
    # the balanced pair is an identity of the closed forms at l = (c/t)^s
    t = k / c
    bal = lemma2_closed_forms(c, (c / t) ** s, k, t, s)
    return max(abs(rel - forms.h1), abs(cos - forms.h2), abs(bal.h1 - bal.part3[0]), abs(bal.h2 - bal.part3[1]))


LEMMA2_GRID = dict(
    c=(1.0, 2.0, 10.0, 100.0, 1000.0),
    l=(0.25, 0.5, 1.0, 2.0, 4.0),
    k=(0.1, 0.5, 1.5, 4.0, 20.0),
)


@dataclass
class Lemma2Report:
    cells: list[tuple[float, float, float, float]] = field(default_factory=list)
    max_discrepancy: float = 0.0
    h1_monotone_s: bool = True
    h1_monotone_l: bool = True
    h2_argmin_ok: bool = True

    @property
    def ok(self) -> bool:
        return self.max_discrepancy <= 1e-10 and self.h1_monotone_s and self.h1_monotone_l and self.h2_argmin_ok


def verify_lemma2_numeric(s: float = -0.25, m: int = 4, grid=None, seed=0) -> Lemma2Report:
    """Check closed forms against direct eigendecompositions and the monotonicity claims."""
    grid = grid or LEMMA2_GRID
    rep = Lemma2Report()
    for c in grid["c"]:
        for l in grid["l"]:
            for k in grid["k"]:
                d = lemma2_discrepancy(c, l, k, s, m, seed=seed)
                rep.cells.append((c, l, k, d))
                rep.max_discrepancy = max(rep.max_discrepancy, d)
    s_grid = -np.logspace(1, -2, 40)  # from -10 up to -0.01
    l_fine = np.logspace(-3, 3, 400)
    for c in grid["c"]:
        for k in grid["k"]:
            for l in grid["l"]:
                h = [lemma2_closed_forms(c, l, k, k / c, sv).h1 for sv in s_grid]
                # decreasing in s: along increasing s the values must not grow
                if np.any(np.diff(h) > 1e-12 * max(h)):
                    rep.h1_monotone_s = False
            h_l = [lemma2_closed_forms(c, lv, k, k / c, s).h1 for lv in l_fine]
            if np.any(np.diff(h_l) < -1e-12 * max(max(h_l), 1e-300)):
                rep.h1_monotone_l = False
            t = k / c
            if t * c == 1 or c == 1:
                continue  # h2 is constant
            h2 = np.array([lemma2_closed_forms(c, lv, k, t, s).h2 for lv in l_fine])
            star = (c / t) ** s
            j = int(np.argmin(h2))
            lo, hi = l_fine[max(j - 1, 0)], l_fine[min(j + 1, len(l_fine) - 1)]
            if not (lo <= star <= hi) and l_fine[0] < star < l_fine[-1]:
                rep.h2_argmin_ok = False
    return rep


# --------------------------------------------------------------- Proposition 1


@dataclass
class Prop1Result:
    ineq1: bool
    ineq2: bool
    l_adjusted: float
    n: int
    nre_b1: float
    nre_b2: float
    one_minus_cos_b1: float
    one_minus_cos_b2: float
    part3: tuple[float, float]


def proposition1_split(c: float, s: float, m: int, t: float = 0.02) -> tuple[int, float]:
    """Integral ``n`` nearest to ``(c/t)^s m`` and the adjusted ``l = n / m``."""
    n = max(1, int(round((c / t) ** s * m)))
    return n, n / m


def verify_proposition1(
    c: float = 1000.0,
    s: float = -0.25,
    m: int = 150,
    seed=None,
    alpha: float = 0.1,
    beta: float = 0.005,
    perturb_u: bool = True,
) -> Prop1Result:
    if c < 1000 or s > -0.25:
        raise ValueError("requires c >= 1000 and s <= -0.25")
    rng = make_rng(seed)
    t = 0.02
    n, l = proposition1_split(c, s, m, t)
    U = random_orthogonal(m + n, rng)
    lam = np.concatenate([np.full(m, c), np.ones(n)])
    B = matops.matrix_power_from_eig(U, lam, s)
    if perturb_u:
        dU = givens_perturbation(U, lemma1_max_angle(alpha, beta), rng)
    else:
        dU = np.zeros_like(U)
    B1 = matops.matrix_power_from_eig(U + dU, lam, s)
    B2 = matops.matrix_power_from_eig(U, np.concatenate([np.full(m, c), np.full(n, t * c)]), s)
    nB = np.linalg.norm(B)
    e1 = float(np.linalg.norm(B1 - B) / nB)
    e2 = float(np.linalg.norm(B2 - B) / nB)
    a1 = 1 - cosine(B, B1)
    a2 = 1 - cosine(B, B2)
    part3 = lemma2_closed_forms(c, (c / t) ** s, t * c, t, s).part3
    return Prop1Result(
        ineq1=2 * e1 <= 0.4 <= e2,
        ineq2=6 * a1 <= 0.06 <= a2,
        l_adjusted=l,
        n=n,
        nre_b1=e1,
        nre_b2=e2,
        one_minus_cos_b1=a1,
        one_minus_cos_b2=a2,
        part3=part3,
    )


# ----------------------------------------------------------- spectrum contraction


def contraction_sweep(A: np.ndarray, taus, qc: pc.QuantConfig, s: float = -0.25, exclude_diag: bool = False):
    """Rows ``(tau, nre_A, nre_U_or)`` for ``A`` with its spectrum contracted by each ``tau``."""
    lam, U = np.linalg.eigh(matops.check_symmetric(A))
    rows = []
    for tau in taus:
        At = (U * contract_spectrum(lam, tau)) @ U.T
        At = 0.5 * (At + At.T)
        ra = table1_experiment(At, Scheme.A, qc, s, exclude_diag)
        ru = table1_experiment(At, Scheme.U_OR, qc, s, exclude_diag)
        rows.append((float(tau), ra.nre, ru.nre))
    return rows
