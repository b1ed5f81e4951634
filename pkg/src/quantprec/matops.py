"""Dense symmetric linear algebra used by the optimizers and the analysis suite."""

from __future__ import annotations

import numpy as np

from .rng import make_rng


class NumericalFailure(ArithmeticError):
    """An iterative routine failed to converge or diverged."""


class DegenerateInputError(ValueError):
    """Input is rank deficient or otherwise outside an operation's domain."""


def check_symmetric(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    scale = np.abs(A).max(initial=0.0)
    if np.abs(A - A.T).max(initial=0.0) > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    return A


def sign_normalize(U: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry of non-negligible size is positive."""
    U = np.array(U, dtype=np.float64)
    if U.size == 0:
        return U
    big = np.abs(U) > 1e-12 * np.maximum(np.abs(U).max(axis=0), 1e-300)
    first = np.argmax(big, axis=0)
    signs = np.sign(U[first, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def qr_orthonormal(A: np.ndarray) -> np.ndarray:
    """Orthonormal factor of a Householder QR with a nonnegative R diagonal."""
    A = np.asarray(A, dtype=np.float64)
    Q, R = np.linalg.qr(A)
    d = np.diag(R)
    tol = 1e-12 * max(np.linalg.norm(A), np.finfo(float).tiny)
    if np.any(np.abs(d) < tol):
        raise DegenerateInputError("matrix is rank deficient")
    return Q * np.where(d < 0, -1.0, 1.0)


def _sorted_eig(lam: np.ndarray, U: np.ndarray):
    # stable sort keeps the original column order among ties
    order = np.argsort(-lam, kind="stable")
    return lam[order], sign_normalize(U[:, order])


def _round_robin(n: int):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([None] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a is not None and b is not None]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


_EPS = np.finfo(np.float64).eps


def jacobi_eig(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver; independent of LAPACK, used as a test oracle.

    Each round applies ``n/2`` disjoint plane rotations at once, so a sweep
    costs ``O(n^3)`` in vectorized numpy.
    """
    A = check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A[0].copy(), V
    rounds = _round_robin(n)
    # work on A / max|A_ij| so squared sums cannot overflow
    scale = np.abs(A).max()
    if scale == 0:
        return np.zeros(n), V
    A /= scale
    norm = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * norm:
            break
        for p, q in rounds:
            apq = A[p, q]
            # roundoff-sized against the matrix or both diagonal entries: zero it.
            # n^2 entries below eps*norm/n keep the off-norm under eps*norm.
            small = np.abs(apq) <= _EPS * norm / n + _EPS * np.sqrt(np.abs(A[p, p] * A[q, q]))
            A[p[small], q[small]] = 0.0
            A[q[small], p[small]] = 0.0
            active = ~small
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t**2 + 1.0)
            s = t * c
            # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = Ap * c - Aq * s
            A[:, q] = Ap * s + Aq * c
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * c - Vq * s
            V[:, q] = Vp * s + Vq * c
    else:
        raise NumericalFailure(f"Jacobi did not converge in {max_sweeps} sweeps")
    return np.diag(A) * scale, V


JACOBI_MAX_DIM = 64


def exact_symeig(A: np.ndarray, method: str = "jacobi"):
    """Full eigendecomposition ``A = U diag(lam) U^T`` with ``lam`` nonincreasing.

    ``method="jacobi"`` runs the in-house cyclic Jacobi solver;
    ``method="lapack"`` defers to ``numpy.linalg.eigh`` for large matrices and
    ``method="auto"`` picks Jacobi up to ``JACOBI_MAX_DIM``.
    Both apply the same ordering and sign conventions.
    """
    A = check_symmetric(A)
    if method == "auto":
        method = "jacobi" if A.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        lam, U = jacobi_eig(A)
    elif method == "lapack":
        lam, U = np.linalg.eigh(0.5 * (A + A.T))
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    return _sorted_eig(lam, U)


def randomized_eig(A: np.ndarray, P0: np.ndarray, iters: int = 1, clip: bool = True):
    """Warm-started subspace iteration ``P <- QR(A P)``.

    Returns Rayleigh-quotient eigenvalues ``diag(P^T A P)`` (clipped at zero
    for PSD input) in nonincreasing order with the matching columns of ``P``.
    """
    A = check_symmetric(A)
    P = np.asarray(P0, dtype=np.float64)
    for _ in range(iters):
        P = qr_orthonormal(A @ P)
    lam = np.einsum("ij,ik,kj->j", P, A, P)
    if clip:
        lam = np.maximum(lam, 0.0)
    return _sorted_eig(lam, P)


def bjorck_orthonormalize(V: np.ndarray, t: int, check: bool = False) -> np.ndarray:
    """Apply ``V <- 1.5 V - 0.5 V V^T V`` exactly ``t`` times."""
    if t < 0:
        raise ValueError("t must be >= 0")
    V = np.array(V, dtype=np.float64)
    if check and t > 0:
        sv = np.linalg.svd(V, compute_uv=False)
        if sv.min() <= 0 or sv.max() >= np.sqrt(3.0):
            raise DegenerateInputError("singular values outside (0, sqrt(3)); Bjorck diverges")
    for _ in range(t):
        V = 1.5 * V - 0.5 * V @ (V.T @ V)
    return V


def orthogonality_defect(V: np.ndarray) -> float:
    """``||V^T V - I||_F``."""
    return float(np.linalg.norm(V.T @ V - np.eye(V.shape[1])))


def power_iteration_max_eig(A: np.ndarray, iters: int = 10, seed=0) -> float:
    """Rayleigh-quotient estimate of the largest eigenvalue of a PSD matrix."""
    A = np.asarray(A, dtype=np.float64)
    rng = make_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(v @ A @ v)


def _newton_scale(lo: float, hi: float, p: int) -> float:
    """Factor ``mu`` equalizing ``phi(mu*lo) = phi(mu*hi)`` for ``phi(m) = m((p+1-m)/p)^p``.

    ``phi`` rises on (0, 1] and falls on [1, p+1), so the scaled interval
    ``[mu*lo, mu*hi]`` straddles 1 and is mapped into ``[phi(mu*lo), 1]``.
    """

    def phi(m):
        return m * ((p + 1 - m) / p) ** p

    a, b = 1.0 / hi, (p + 1) / hi
    if phi(a * lo) >= phi(a * hi):
        return a
    for _ in range(200):
        mid = 0.5 * (a + b)
        if phi(mid * lo) < phi(mid * hi):
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def schur_newton_inv_root(
    A: np.ndarray,
    p: int,
    ridge: float,
    iters: int = 10,
    lambda_max: float | None = None,
    scaled: bool = True,
    seed=0,
) -> np.ndarray:
    """Coupled Newton iteration for ``(A + ridge I)^(-1/p)``.

    ``X_{k+1} = X_k T_k``, ``M_{k+1} = T_k^p M_k`` with ``T_k = ((p+1) I - M_k) / p``,
    started at ``X_0 = c I`` and ``M_0 = c^p (A + ridge I)``, ``c^p = 1 / (2 lambda_max)``.

    With ``scaled=True`` each step first rescales ``M_k`` (and ``X_k``
    accordingly) using the tracked spectral interval of ``M_k``; the lower
    end is the larger of ``ridge`` and the Gershgorin bound (or a power-iteration
    estimate when neither is positive).  This keeps the rate quadratic for
    condition numbers up to ~1e7 within 10 iterations, where the plain
    iteration only gains a constant factor per step on small eigenvalues.
    """
    A = check_symmetric(A)
    if p < 1:
        raise ValueError("p must be >= 1")
    n = A.shape[0]
    eye = np.eye(n)
    Ar = A + ridge * eye
    if lambda_max is None:
        lambda_max = power_iteration_max_eig(Ar, iters=10, seed=seed)
    if lambda_max <= 0:
        raise DegenerateInputError("matrix has no positive spectrum")
    cp = 1.0 / (2.0 * lambda_max)
    X = cp ** (1.0 / p) * eye
    M = cp * Ar
    # spectrum of M lies in [lo, hi]; hi = 1 tolerates a 2x underestimate of lambda_max.
    # An overestimated lo only slows the smallest eigenvalues down, it cannot diverge.
    # Gershgorin and the ridge are both guaranteed lower bounds
    radius = np.abs(Ar).sum(axis=1) - np.abs(np.diag(Ar))
    lam_min = max(ridge, float(np.min(np.diag(Ar) - radius)))
    if scaled and lam_min <= 0:
        # no guaranteed bound; estimate lambda_min from the shifted top eigenvalue
        shifted = power_iteration_max_eig(lambda_max * eye - Ar, iters=10, seed=seed)
        lam_min = 0.5 * max(lambda_max - shifted, 0.0)
    lo, hi = min(lam_min * cp, 0.5), 1.0
    lo = max(lo, 1e-300)
    prev_err = np.linalg.norm(M - eye)
    for _ in range(iters):
        # once the interval is tight the plain step is already quadratic, and
        # equalizing phi at nearly equal endpoints would only amplify roundoff
        if scaled and lo < (1.0 - 1e-6) * hi:
            mu = _newton_scale(lo, hi, p)
            X = X * mu ** (1.0 / p)
            M = M * mu
            lo, hi = mu * lo, mu * hi
            phi_lo = lo * ((p + 1 - lo) / p) ** p
            phi_hi = hi * ((p + 1 - hi) / p) ** p
            lo, hi = min(phi_lo, phi_hi), 1.0 if lo <= 1.0 <= hi else max(phi_lo, phi_hi)
        T = ((p + 1) * eye - M) / p
        X = X @ T
        M = np.linalg.matrix_power(T, p) @ M
        M = 0.5 * (M + M.T)
        err = np.linalg.norm(M - eye)
        if not np.isfinite(err) or (not scaled and err > prev_err * (1 + 1e-6) and err > 1e-8):
            raise NumericalFailure("Schur-Newton iteration diverged")
        prev_err = err
    if not np.all(np.isfinite(X)):
        raise NumericalFailure("Schur-Newton iteration produced non-finite values")
    return 0.5 * (X + X.T)


def matrix_power_from_eig(V: np.ndarray, lam: np.ndarray, s: float) -> np.ndarray:
    """``V diag(lam^s) V^T``; ``V`` need not be orthogonal."""
    lam = np.asarray(lam, dtype=np.float64)
    if s < 0 and np.any(lam <= 0):
        raise DegenerateInputError("negative power of a nonpositive eigenvalue")
    if s == 0:
        powered = np.ones_like(lam)
    elif s == 1:
        powered = lam
    else:
        powered = np.power(np.maximum(lam, 0.0) if s > 0 else lam, s)
    V = np.asarray(V, dtype=np.float64)
    return (V * powered) @ V.T


def sym_power(A: np.ndarray, s: float, floor: float = 0.0) -> np.ndarray:
    """``A^s`` of a symmetric matrix via LAPACK; eigenvalues are floored at ``floor``.

    Used wherever the analysis needs an exact matrix function as reference.
    """
    A = np.asarray(A, dtype=np.float64)
    lam, U = np.linalg.eigh(0.5 * (A + A.T))
    lam = np.maximum(lam, floor)
    return matrix_power_from_eig(U, lam, s)


def spectral_norm_sym(A: np.ndarray) -> float:
    """Exact spectral norm of a symmetric matrix (largest absolute eigenvalue)."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T))).max())
