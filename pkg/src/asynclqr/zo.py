"""Two-point zeroth-order gradient estimation with Frobenius-sphere perturbations.

For each of m samples a perturbation U with ||U||_F = r (uniform direction,
realized by normalizing a Gaussian matrix) is applied symmetrically and the
exact infinite-horizon costs at K + U and K - U are differenced:

    grad_hat = (n_x n_u) / (2 r^2 m) * sum_l (J(K + U_l) - J(K - U_l)) U_l

Costs come from the closed-form trace expression, never from rollouts.  The
perturbation stream is keyed per estimate, so the result is a pure function of
(stream key, inputs) no matter how the samples are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqr_core import InitialStateSpec, PlantModel, cost_batch


class PerturbationUnstable(ArithmeticError):
    """Some K +/- U_l destabilizes the model: smoothing radius too large for
    the current iterate.  Carries the offending sample index."""

    def __init__(self, message, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


@dataclass(frozen=True)
class ZoConfig:
    """Estimator knobs: smoothing radius r, sample count m, stream key.

    ``redraw_limit`` > 0 replaces destabilizing perturbations (up to that many
    redraws per sample) instead of aborting; the default is to abort, since a
    destabilizing perturbation means the radius condition for per-iteration
    stability is violated and silently redrawing would mask it.
    """

    r: float
    m: int
    rng_stream: tuple = (0,)
    redraw_limit: int = 0

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("smoothing radius must be positive")
        if self.m < 1:
            raise ValueError("sample count must be >= 1")
        if self.redraw_limit < 0:
            raise ValueError("redraw_limit must be >= 0")

    def with_stream(self, stream: tuple) -> "ZoConfig":
        return ZoConfig(
            r=self.r, m=self.m, rng_stream=stream, redraw_limit=self.redraw_limit
        )


@dataclass(frozen=True)
class ZoEstimate:
    grad_hat: np.ndarray
    samples_used: int
    rejected: int


def stream_generator(stream) -> np.random.Generator:
    """Deterministic generator for a hashable stream key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(stream)))


def draw_sphere_perturbation(
    n_u: int, n_x: int, radius: float, rng: np.random.Generator
) -> np.ndarray:
    """A matrix with ||U||_F == radius and uniformly distributed direction."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    while True:
        gauss = rng.standard_normal((n_u, n_x))
        norm = np.linalg.norm(gauss)
        if norm > 0.0:  # zero draw has probability zero; guard anyway
            return gauss * (radius / norm)


def _perturbation_block(rng, m, n_u, n_x, radius):
    gauss = rng.standard_normal((m, n_u, n_x))
    norms = np.sqrt(np.einsum("lux,lux->l", gauss, gauss))
    bad = norms == 0.0
    while np.any(bad):
        gauss[bad] = rng.standard_normal((int(bad.sum()), n_u, n_x))
        norms = np.sqrt(np.einsum("lux,lux->l", gauss, gauss))
        bad = norms == 0.0
    return gauss * (radius / norms)[:, None, None]


def paired_costs(model: PlantModel, k: np.ndarray, perturbations, init: InitialStateSpec):
    """Exact costs at K + U_l and K - U_l for a stack of perturbations.

    Returns (plus, minus, ok); ok[l] is False when either smoothed controller
    destabilizes the model.
    """
    count = perturbations.shape[0]
    ks = np.concatenate([k[None] + perturbations, k[None] - perturbations], axis=0)
    costs, ok = cost_batch(
        np.broadcast_to(model.a, (2 * count,) + model.a.shape),
        np.broadcast_to(model.b, (2 * count,) + model.b.shape),
        np.broadcast_to(model.q, (2 * count,) + model.q.shape),
        np.broadcast_to(model.r, (2 * count,) + model.r.shape),
        ks,
        init.sigma0,
    )
    return costs[:count], costs[count:], ok[:count] & ok[count:]


def estimate_from_perturbations(
    model: PlantModel, k, perturbations, radius: float, init: InitialStateSpec
) -> np.ndarray:
    """The estimator sum for given perturbations (even in U by construction):

        (n_x n_u) / (2 r^2 m) * sum_l (J(K + U_l) - J(K - U_l)) U_l

    Raises PerturbationUnstable on the first destabilizing sample.
    """
    k = np.asarray(k, dtype=np.float64)
    us = np.asarray(perturbations, dtype=np.float64)
    plus, minus, ok = paired_costs(model, k, us, init)
    if not np.all(ok):
        bad = int(np.where(~ok)[0][0])
        raise PerturbationUnstable(
            f"sample {bad}: K +/- U destabilizes system {model.id} "
            f"(radius r={radius:g} too large for this iterate)",
            sample_index=bad,
        )
    scale = (model.n_x * model.n_u) / (2.0 * radius**2 * us.shape[0])
    return scale * np.einsum("l,lux->ux", plus - minus, us)


def zo_estimate(
    model: PlantModel, k, cfg: ZoConfig, init: InitialStateSpec
) -> ZoEstimate:
    """Draw m sphere perturbations, difference exact costs, average.

    Raises PerturbationUnstable when some smoothed controller destabilizes the
    model and the redraw budget (cfg.redraw_limit per sample) is exhausted.
    """
    k = np.asarray(k, dtype=np.float64)
    n_u, n_x = model.n_u, model.n_x
    rng = stream_generator(cfg.rng_stream)
    us = _perturbation_block(rng, cfg.m, n_u, n_x, cfg.r)

    plus, minus, ok = paired_costs(model, k, us, init)
    rejected = 0
    for l in np.where(~ok)[0]:
        redraws = 0
        while not ok[l]:
            if redraws >= cfg.redraw_limit:
                raise PerturbationUnstable(
                    f"sample {int(l)}: K +/- U destabilizes system {model.id} "
                    f"(radius r={cfg.r:g} too large for this iterate)",
                    sample_index=int(l),
                )
            us[l] = draw_sphere_perturbation(n_u, n_x, cfg.r, rng)
            p, m_, good = paired_costs(model, k, us[l][None], init)
            plus[l], minus[l], ok[l] = p[0], m_[0], good[0]
            redraws += 1
            rejected += 1

    scale = (n_x * n_u) / (2.0 * cfg.r**2 * cfg.m)
    grad_hat = scale * np.einsum("l,lux->ux", plus - minus, us)
    return ZoEstimate(grad_hat=grad_hat, samples_used=cfg.m, rejected=rejected)
