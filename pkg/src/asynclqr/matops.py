"""Dense matrix arithmetic and the two structured solvers everything else uses.

The solvers are deliberately small-scale: the discrete Lyapunov equation is
solved exactly by vectorizing to an (n^2 x n^2) linear system, and the
discrete algebraic Riccati equation by fixed-point iteration on the Riccati
map.  Contractivity (spectral radius < 1) is decided through Lyapunov
feasibility, which is the property the downstream theory actually needs;
an independent matrix-power estimate of the spectral radius is exposed for
diagnostics only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DLYAP_TOL = 1e-10
DARE_TOL = 1e-10
DARE_MAX_ITER = 10_000


class DimensionMismatch(ValueError):
    """Operands have incompatible or non-square shapes."""


class NotContractive(ArithmeticError):
    """The Stein system is singular or its solution fails the residual check,
    signalling a spectral radius at or above one."""


class NoConvergence(RuntimeError):
    """Riccati fixed-point iteration did not settle within the iteration cap."""


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, 2-D, C-ordered float64 array."""
    mat = np.array(value, dtype=np.float64, order="C")
    if mat.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={mat.ndim}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains non-finite entries")
    return mat


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def frobenius(mat: np.ndarray) -> float:
    return float(np.linalg.norm(mat))


def is_symmetric(mat: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.all(np.abs(mat - mat.T) <= tol))


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution X of X = F^T X F + W together with its residual norm."""

    x: np.ndarray
    residual_norm: float


def _stein_batch(f: np.ndarray, w: np.ndarray):
    """Solve X = F^T X F + W for stacked (B, n, n) inputs.

    Returns (x, residual, ok).  Items that are singular or whose residual is
    non-finite come back with ok=False; no exception is raised so callers can
    map failures to their own error types (e.g. an unstable perturbation
    inside a batched cost evaluation).
    """
    batch, n, _ = f.shape
    ft = np.ascontiguousarray(np.swapaxes(f, 1, 2))
    # Row-major vec identity: vec(F^T X F) = (F^T (x) F^T) vec(X).
    kron = np.einsum("kac,kbd->kabcd", ft, ft).reshape(batch, n * n, n * n)
    system = np.eye(n * n) - kron
    rhs = w.reshape(batch, n * n, 1)
    ok = np.ones(batch, dtype=bool)
    try:
        x = np.linalg.solve(system, rhs).reshape(batch, n, n)
    except np.linalg.LinAlgError:
        # At least one exactly singular item: fall back to per-item solves.
        x = np.zeros_like(f)
        for k in range(batch):
            try:
                x[k] = np.linalg.solve(system[k], rhs[k]).reshape(n, n)
            except np.linalg.LinAlgError:
                ok[k] = False
    x = 0.5 * (x + np.swapaxes(x, 1, 2))
    with np.errstate(over="ignore", invalid="ignore"):
        resid = x - np.einsum("kca,kcd,kdb->kab", f, x, f) - w
        residual = np.sqrt(np.einsum("kab,kab->k", resid, resid))
    ok &= np.isfinite(residual)
    finite_x = np.all(np.isfinite(x.reshape(batch, -1)), axis=1)
    ok &= finite_x
    return x, residual, ok


def solve_dlyap(f, w, tol: float = DLYAP_TOL) -> LyapunovSolution:
    """Solve the discrete Lyapunov (Stein) equation X = F^T X F + W.

    Requires F square and W symmetric of the same size.  Raises
    NotContractive when the vectorized system is singular or the residual
    exceeds ``tol``, both of which signal rho(F) >= 1 (or an ill-conditioned
    near-boundary case the exact-solve contract does not cover).
    """
    f = as_matrix(f, "F")
    w = as_matrix(w, "W")
    if f.shape[0] != f.shape[1]:
        raise DimensionMismatch(f"F must be square, got {f.shape}")
    if w.shape != f.shape:
        raise DimensionMismatch(f"W shape {w.shape} != F shape {f.shape}")
    if not is_symmetric(w):
        raise DimensionMismatch("W must be symmetric")
    x, residual, ok = _stein_batch(f[None], w[None])
    if not ok[0] or residual[0] > tol:
        raise NotContractive(
            f"Stein solve failed (residual={residual[0]:.3e}, tol={tol:.1e}); "
            "spectral radius of F is likely >= 1"
        )
    return LyapunovSolution(x=x[0], residual_norm=float(residual[0]))


def is_contractive(f) -> bool:
    """True iff rho(F) < 1, decided by Lyapunov feasibility.

    X = F^T X F + I admits a positive-definite solution exactly when F is
    Schur stable, so a successful solve plus a Cholesky factorization of X is
    an exact characterization (up to the solver's residual tolerance).
    """
    f = as_matrix(f, "F")
    if f.shape[0] != f.shape[1]:
        raise DimensionMismatch(f"F must be square, got {f.shape}")
    try:
        sol = solve_dlyap(f, np.eye(f.shape[0]))
    except NotContractive:
        return False
    try:
        np.linalg.cholesky(sol.x)
    except np.linalg.LinAlgError:
        return False
    return True


def spectral_radius_estimate(f, steps: int = 60) -> float:
    """Estimate rho(F) from matrix powers (diagnostic only).

    Uses normalized repeated squaring, i.e. ||F^(2^k)||^(1/2^k) with the norms
    accumulated in log space so nothing overflows.  The non-normality error
    factor enters with exponent 2^-k and is negligible after ~50 squarings.
    """
    g = as_matrix(f, "F")
    if g.shape[0] != g.shape[1]:
        raise DimensionMismatch(f"F must be square, got {g.shape}")
    log_rho = 0.0
    for j in range(steps):
        scale = float(np.linalg.norm(g))
        if scale == 0.0:
            return 0.0
        log_rho += math.log(scale) / (1 << j)
        g = g / scale
        g = g @ g
    return math.exp(log_rho)


def solve_dare(a, b, q, r, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER):
    """Solve P = Q + A^T P A - A^T P B (R + B^T P B)^-1 B^T P A.

    Fixed-point iteration from P_0 = Q, symmetrized each step, declared
    converged when successive iterates differ by <= tol in Frobenius norm.
    Returns (P, K_star) with K_star = (R + B^T P B)^-1 B^T P A.  Raises
    NoConvergence when the iteration fails to settle (unstabilizable or
    undetectable input) or the resulting closed loop is not contractive.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    q = as_matrix(q, "Q")
    r = as_matrix(r, "R")
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise DimensionMismatch("A and Q must be square with matching size")
    if b.shape[0] != n:
        raise DimensionMismatch(f"B row count {b.shape[0]} != state dim {n}")
    m = b.shape[1]
    if r.shape != (m, m):
        raise DimensionMismatch(f"R shape {r.shape} incompatible with B {b.shape}")
    if not is_symmetric(q) or not is_symmetric(r):
        raise DimensionMismatch("Q and R must be symmetric")
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        raise DimensionMismatch("R must be positive definite") from None

    p = q.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            btpa = b.T @ p @ a
            gain = np.linalg.solve(r + b.T @ p @ b, btpa)
            p_next = symmetrize(q + a.T @ p @ a - btpa.T @ gain)
            if not np.all(np.isfinite(p_next)):
                raise NoConvergence("Riccati iteration diverged to non-finite values")
            if frobenius(p_next - p) <= tol:
                p = p_next
                break
            p = p_next
        else:
            raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")

    k_star = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    if not is_contractive(a - b @ k_star):
        raise NoConvergence("Riccati fixed point does not yield a contractive closed loop")
    return p, k_star


def _chol_pd(mat: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def symmetric_eig_min(mat, iters: int = 80) -> float:
    """Smallest eigenvalue of a symmetric matrix via Cholesky bisection.

    Brackets with Gershgorin/diagonal bounds and bisects on t in
    "mat - t*I is positive definite"; avoids a general eigensolver.
    """
    mat = as_matrix(mat, "matrix")
    if not is_symmetric(mat, tol=1e-9):
        raise DimensionMismatch("eigenvalue bounds require a symmetric matrix")
    diag = np.diag(mat)
    radii = np.sum(np.abs(mat), axis=1) - np.abs(diag)
    lo = float(np.min(diag - radii)) - 1e-12
    hi = float(np.min(diag)) + 1e-12
    eye = np.eye(mat.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _chol_pd(mat - mid * eye):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def symmetric_eig_max(mat, iters: int = 80) -> float:
    """Largest eigenvalue of a symmetric matrix, mirror of symmetric_eig_min."""
    return -symmetric_eig_min(-as_matrix(mat, "matrix"), iters=iters)


def spectral_norm(mat, iters: int = 80) -> float:
    """Largest singular value, via the Gram matrix and Cholesky bisection."""
    mat = as_matrix(mat, "matrix")
    if not mat.any():
        return 0.0
    gram = symmetrize(mat.T @ mat)
    return math.sqrt(max(symmetric_eig_max(gram, iters=iters), 0.0))
