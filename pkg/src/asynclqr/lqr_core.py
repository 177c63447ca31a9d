"""Single-system LQR semantics: exact costs, exact policy gradients, optima.

Costs are infinite-horizon and exact: J(K) = trace(P_K Sigma0) with P_K from
the closed-loop Lyapunov equation, never Monte Carlo.  The analytic gradient
2 E_K Sigma_K is the validation oracle for the zeroth-order estimator, and
the gradient-dominance constant follows the closed-form expression
4 mu^2 sigma_min(R) / ||Sigma_{K*}|| (largest such ratio across a fleet).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matops
from .matops import DimensionMismatch, as_matrix, frobenius, symmetrize


class Unstable(ArithmeticError):
    """The closed loop A - B K is not contractive, so the cost is undefined."""

    def __init__(self, message, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class PlantModel:
    """One system's (A, B, Q, R) tuple; Q symmetric PSD, R symmetric PD."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a", as_matrix(self.a, "A"))
        object.__setattr__(self, "b", as_matrix(self.b, "B"))
        object.__setattr__(self, "q", as_matrix(self.q, "Q"))
        object.__setattr__(self, "r", as_matrix(self.r, "R"))
        n, m = self.n_x, self.n_u
        if self.a.shape != (n, n) or self.b.shape != (n, m):
            raise DimensionMismatch("A must be square and match B's row count")
        if self.q.shape != (n, n) or self.r.shape != (m, m):
            raise DimensionMismatch("Q/R shapes inconsistent with A/B")
        if not matops.is_symmetric(self.q) or not matops.is_symmetric(self.r):
            raise DimensionMismatch("Q and R must be symmetric")
        if matops.symmetric_eig_min(self.q) < -1e-10:
            raise DimensionMismatch("Q must be positive semidefinite")
        if matops.symmetric_eig_min(self.r) <= 0.0:
            raise DimensionMismatch("R must be positive definite")

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class InitialStateSpec:
    """Initial-state covariance Sigma0 with eigenvalue lower bound mu."""

    sigma0: np.ndarray
    mu_lower: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sigma0", as_matrix(self.sigma0, "Sigma0"))
        if not matops.is_symmetric(self.sigma0):
            raise DimensionMismatch("Sigma0 must be symmetric")
        if self.mu_lower <= 0.0:
            raise ValueError("mu_lower must be positive")
        n = self.sigma0.shape[0]
        if matops.symmetric_eig_min(self.sigma0 - self.mu_lower * np.eye(n)) < -1e-10:
            raise ValueError("Sigma0 - mu_lower*I must be positive semidefinite")

    @classmethod
    def identity(cls, n_x: int) -> "InitialStateSpec":
        return cls(sigma0=np.eye(n_x), mu_lower=1.0)


@dataclass(frozen=True)
class Controller:
    """Feedback gain with the server iteration at which it was broadcast."""

    k: np.ndarray
    stamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k", as_matrix(self.k, "K"))
        if self.stamp < 0:
            raise ValueError("stamp must be >= 0")


@dataclass(frozen=True)
class TheoryConstants:
    """Constants the convergence statements are phrased in.

    lambda_gd is the gradient-dominance constant, c_zo the two-point
    second-moment constant 8 n_x^2, h_grad_est an empirical Lipschitz
    estimate for the gradient, gamma the sublevel inflation factor, and
    delta0 the per-system initial optimality gaps.
    """

    lambda_gd: float
    c_zo: float
    h_grad_est: float
    gamma: float = 1.0
    delta0: tuple = field(default=())

    def __post_init__(self):
        if self.lambda_gd <= 0.0:
            raise ValueError("lambda_gd must be positive")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")


def zo_second_moment_constant(n_x: int) -> float:
    """Dimension constant bounding the two-point estimator's second moment."""
    return 8.0 * n_x * n_x


# ---------------------------------------------------------------------------
# Batched closed-loop evaluations (shared by the estimator and the engine).
# ---------------------------------------------------------------------------


def _closed_loop_batch(a, b, q, r, ks):
    """Stacked F = A - B K and W = Q + K^T R K; all inputs (B, ...) arrays."""
    f = a - np.einsum("knm,kmx->knx", b, ks)
    w = q + np.einsum("kmx,kmu,kuy->kxy", ks, r, ks)
    w = 0.5 * (w + np.swapaxes(w, 1, 2))
    return f, w


def _psd_flags(x, f):
    """Positive-definiteness per batch item, with an exact fallback.

    X solves the Stein equation; Cholesky decides PD.  When W is merely PSD
    the solution can be singular for a contractive F, so failures are
    re-checked against the authoritative Lyapunov feasibility test.
    """
    batch = x.shape[0]
    flags = np.ones(batch, dtype=bool)
    try:
        np.linalg.cholesky(x)
        return flags
    except np.linalg.LinAlgError:
        pass
    for k in range(batch):
        try:
            np.linalg.cholesky(x[k])
        except np.linalg.LinAlgError:
            flags[k] = matops.is_contractive(f[k])
    return flags


def cost_batch(a, b, q, r, ks, sigma0):
    """Exact LQR costs for stacked closed loops.

    Returns (costs, ok): cost[k] = trace(P_k Sigma0) where P_k solves the
    closed-loop Lyapunov equation; ok[k] is False when loop k is not
    contractive (its cost entry is meaningless).
    """
    f, w = _closed_loop_batch(a, b, q, r, ks)
    p, residual, ok = matops._stein_batch(f, w)
    ok &= residual <= matops.DLYAP_TOL
    if np.all(ok):
        ok &= _psd_flags(p, f)
    else:
        good = np.where(ok)[0]
        if good.size:
            ok[good] &= _psd_flags(p[good], f[good])
    costs = np.einsum("kab,ba->k", p, sigma0)
    return costs, ok


def eval_batch(a, b, q, r, ks, sigma0):
    """Costs, gradients and stability flags for stacked closed loops.

    Shares the P solve between the cost trace(P Sigma0) and the gradient
    2 E_K Sigma_K.  Returns (costs, grads, ok) with grads (B, n_u, n_x).
    """
    f, w = _closed_loop_batch(a, b, q, r, ks)
    p, res_p, ok_p = matops._stein_batch(f, w)
    ft = np.ascontiguousarray(np.swapaxes(f, 1, 2))
    sigma_w = np.broadcast_to(sigma0, f.shape)
    sigma, res_s, ok_s = matops._stein_batch(ft, np.ascontiguousarray(sigma_w))
    ok = ok_p & ok_s & (res_p <= matops.DLYAP_TOL) & (res_s <= matops.DLYAP_TOL)
    if np.all(ok):
        ok &= _psd_flags(p, f)
    else:
        good = np.where(ok)[0]
        if good.size:
            ok[good] &= _psd_flags(p[good], f[good])
    btp = np.einsum("knm,knx->kmx", b, p)  # B^T P
    e = np.einsum("kmu,kux->kmx", r + np.einsum("kmn,knu->kmu", btp, b), ks) - np.einsum(
        "kmn,knx->kmx", btp, a
    )
    grads = 2.0 * np.einsum("kmn,knx->kmx", e, sigma)
    costs = np.einsum("kab,ba->k", p, sigma0)
    return costs, grads, ok


def gradient_batch(a, b, q, r, ks, sigma0):
    """Analytic gradients only; see eval_batch."""
    _, grads, ok = eval_batch(a, b, q, r, ks, sigma0)
    return grads, ok


def _single(model: PlantModel, k: np.ndarray):
    return (
        model.a[None],
        model.b[None],
        model.q[None],
        model.r[None],
        np.asarray(k, dtype=np.float64)[None],
    )


def lqr_cost(model: PlantModel, k, init: InitialStateSpec) -> float:
    """Exact infinite-horizon cost trace(P_K Sigma0); raises Unstable."""
    k = as_matrix(k, "K")
    if k.shape != (model.n_u, model.n_x):
        raise DimensionMismatch(f"K shape {k.shape} != ({model.n_u}, {model.n_x})")
    costs, ok = cost_batch(*_single(model, k), init.sigma0)
    if not ok[0]:
        raise Unstable(f"A - B K is not contractive for system {model.id}")
    return float(costs[0])


def analytic_gradient(model: PlantModel, k, init: InitialStateSpec) -> np.ndarray:
    """Exact policy gradient 2((R + B^T P_K B)K - B^T P_K A) Sigma_K."""
    k = as_matrix(k, "K")
    if k.shape != (model.n_u, model.n_x):
        raise DimensionMismatch(f"K shape {k.shape} != ({model.n_u}, {model.n_x})")
    grads, ok = gradient_batch(*_single(model, k), init.sigma0)
    if not ok[0]:
        raise Unstable(f"A - B K is not contractive for system {model.id}")
    return grads[0]


@dataclass(frozen=True)
class OptimalSolution:
    """Riccati solution bundle for one system."""

    p_star: np.ndarray
    k_star: np.ndarray
    j_star: float


def optimal_solution(model: PlantModel, init: InitialStateSpec) -> OptimalSolution:
    p_star, k_star = matops.solve_dare(model.a, model.b, model.q, model.r)
    j_star = float(np.trace(p_star @ init.sigma0))
    return OptimalSolution(p_star=p_star, k_star=k_star, j_star=j_star)


def check_sublevel(
    model: PlantModel,
    k,
    consts: TheoryConstants,
    init: InitialStateSpec,
    opt: OptimalSolution | None = None,
) -> bool:
    """Membership in the stabilizing sublevel set: gap <= gamma * delta0."""
    if opt is None:
        opt = optimal_solution(model, init)
    try:
        cost = lqr_cost(model, k, init)
    except Unstable:
        return False
    if model.id >= len(consts.delta0):
        raise ValueError(f"no recorded initial gap for system {model.id}")
    return cost - opt.j_star <= consts.gamma * consts.delta0[model.id]


def gradient_dominance_lambda(
    models,
    init: InitialStateSpec,
    k_stars=None,
) -> float:
    """Gradient-dominance constant 4 mu^2 max_i sigma_min(R_i)/||Sigma_{K*_i}||.

    sigma_min comes from the Cholesky-bisection bound (R is PD) and the
    spectral norm of the optimal-loop state covariance likewise; no general
    eigensolver is involved.
    """
    best = 0.0
    for idx, model in enumerate(models):
        if k_stars is None:
            k_star = optimal_solution(model, init).k_star
        else:
            k_star = k_stars[idx]
        f = model.a - model.b @ k_star
        sigma = matops.solve_dlyap(f.T, init.sigma0).x
        sig_min_r = matops.symmetric_eig_min(model.r)
        sigma_norm = matops.symmetric_eig_max(symmetrize(sigma))
        best = max(best, sig_min_r / sigma_norm)
    return 4.0 * init.mu_lower**2 * best


def estimate_gradient_lipschitz(
    model: PlantModel,
    center_k,
    init: InitialStateSpec,
    radius: float = 0.1,
    pairs: int = 200,
    seed: int = 0,
) -> float:
    """Empirical Lipschitz constant of the gradient near ``center_k``.

    Max of ||grad(K) - grad(K')||_F / ||K - K'||_F over seeded pairs drawn
    uniformly from the Frobenius ball of the given radius; pairs containing a
    destabilizing point are redrawn.
    """
    center_k = as_matrix(center_k, "K")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x11D5))))
    dim = center_k.size
    best = 0.0
    collected = 0
    attempts = 0
    while collected < pairs:
        attempts += 1
        if attempts > 50 * pairs:
            raise Unstable("could not find enough stabilizing pairs in the ball")
        points = []
        for _ in range(2):
            direction = rng.standard_normal(center_k.shape)
            direction /= np.linalg.norm(direction)
            points.append(center_k + direction * radius * rng.uniform() ** (1.0 / dim))
        try:
            g0 = analytic_gradient(model, points[0], init)
            g1 = analytic_gradient(model, points[1], init)
        except Unstable:
            continue
        gap = frobenius(points[0] - points[1])
        if gap == 0.0:
            continue
        best = max(best, frobenius(g0 - g1) / gap)
        collected += 1
    return best


def compute_theory_constants(
    models,
    k0,
    init: InitialStateSpec,
    gamma: float = 1.0,
    seed: int = 0,
    lipschitz_pairs: int = 200,
) -> TheoryConstants:
    """Assemble the constants bundle for a fleet at an initial controller."""
    opts = [optimal_solution(m, init) for m in models]
    delta0 = tuple(lqr_cost(m, k0, init) - o.j_star for m, o in zip(models, opts))
    lam = gradient_dominance_lambda(models, init, k_stars=[o.k_star for o in opts])
    h_est = estimate_gradient_lipschitz(
        models[0], k0, init, pairs=lipschitz_pairs, seed=seed
    )
    return TheoryConstants(
        lambda_gd=lam,
        c_zo=zo_second_moment_constant(models[0].n_x),
        h_grad_est=h_est,
        gamma=gamma,
        delta0=delta0,
    )
