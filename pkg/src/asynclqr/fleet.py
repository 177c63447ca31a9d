"""Heterogeneous fleet generation by structured perturbation of a nominal model.

Each non-nominal system adds scalar multiples of fixed modification masks to
(A, B, Q, R); the scalars are half-normal draws whose scale parameters are the
heterogeneity radii.  Draws come from independent per-(system, matrix) seeded
streams, so doubling the radii with the same seed scales every perturbation in
place, and regeneration is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import matops
from .lqr_core import Controller, InitialStateSpec, PlantModel, Unstable, gradient_batch

FLEET_SCHEMA = "asynclqr-fleet-v1"
_TAG_FLEET = 3
_MATRIX_KEYS = ("a", "b", "q", "r")


class GenerationFailed(RuntimeError):
    """Retries exhausted: the radii are too large for a common stabilizer."""


@dataclass(frozen=True)
class HeterogeneityRadii:
    """Half-normal scale parameters for the four perturbation scalars."""

    eps_a: float = 0.0
    eps_b: float = 0.0
    eps_q: float = 0.0
    eps_r: float = 0.0

    def __post_init__(self):
        for key in _MATRIX_KEYS:
            if getattr(self, f"eps_{key}") < 0.0:
                raise ValueError("heterogeneity radii must be nonnegative")

    def scaled(self, factor: float) -> "HeterogeneityRadii":
        return HeterogeneityRadii(
            eps_a=self.eps_a * factor,
            eps_b=self.eps_b * factor,
            eps_q=self.eps_q * factor,
            eps_r=self.eps_r * factor,
        )

    def as_tuple(self):
        return (self.eps_a, self.eps_b, self.eps_q, self.eps_r)


@dataclass(frozen=True)
class Fleet:
    """A nominal model plus M-1 perturbed siblings sharing its dimensions."""

    models: tuple
    init: InitialStateSpec
    radii: HeterogeneityRadii
    seed: int
    retries: int = 0

    @property
    def size(self) -> int:
        return len(self.models)

    @property
    def nominal(self) -> PlantModel:
        return self.models[0]


@dataclass(frozen=True)
class FleetStats:
    """Empirical heterogeneity at a probe controller."""

    eps_het_hat: float
    pairwise_norm_gaps: dict


def modification_masks(n_x: int, n_u: int):
    """The fixed masks: diag(1..n_x), ones(n_x, n_u), 2*I, 2*I."""
    return (
        np.diag(np.arange(1.0, n_x + 1.0)),
        np.ones((n_x, n_u)),
        2.0 * np.eye(n_x),
        2.0 * np.eye(n_u),
    )


def _scalar_streams(seed: int, system_index: int):
    """One half-normal scalar stream per (system, matrix) pair."""
    return [
        np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, _TAG_FLEET, system_index, m)))
        )
        for m in range(4)
    ]


def generate_fleet(
    nominal: PlantModel,
    radii: HeterogeneityRadii,
    m_count: int,
    seed: int,
    stabilizer: Controller | None = None,
    init: InitialStateSpec | None = None,
    max_retries: int = 100,
    cost_cap: float | None = None,
) -> Fleet:
    """Generate M systems; model 0 is the unmodified nominal.

    Each candidate that the stabilizer fails to stabilize (or whose cost
    matrices lose definiteness) is redrawn from the same per-system streams,
    up to ``max_retries`` times, and the total redraw count is reported on the
    returned Fleet.  ``cost_cap`` optionally tightens admission to candidates
    whose cost under the stabilizer stays below the cap, which keeps every
    member comfortably inside the stabilizing sublevel set instead of merely
    contractive with a vanishing margin (a near-unit spectral radius makes
    costs and gradients blow up and puts the fleet outside the step-size
    regime the convergence guarantees assume).
    """
    if m_count < 1:
        raise ValueError("M must be >= 1")
    if init is None:
        init = InitialStateSpec.identity(nominal.n_x)
    if cost_cap is not None and stabilizer is None:
        raise ValueError("cost_cap requires a stabilizer")
    masks = modification_masks(nominal.n_x, nominal.n_u)
    eps = radii.as_tuple()
    nom_mats = (nominal.a, nominal.b, nominal.q, nominal.r)

    models = [PlantModel(*nom_mats, id=0)]
    total_retries = 0
    for i in range(1, m_count):
        streams = _scalar_streams(seed, i)
        model = None
        for _ in range(max_retries + 1):
            scalars = [abs(streams[m].standard_normal()) * eps[m] for m in range(4)]
            mats = [nom_mats[m] + scalars[m] * masks[m] for m in range(4)]
            try:
                candidate = PlantModel(*mats, id=i)
            except (matops.DimensionMismatch, ValueError):
                total_retries += 1
                continue
            if stabilizer is not None and not matops.is_contractive(
                candidate.a - candidate.b @ stabilizer.k
            ):
                total_retries += 1
                continue
            if cost_cap is not None:
                from .lqr_core import Unstable, lqr_cost

                try:
                    if lqr_cost(candidate, stabilizer.k, init) > cost_cap:
                        total_retries += 1
                        continue
                except Unstable:
                    total_retries += 1
                    continue
            model = candidate
            break
        if model is None:
            raise GenerationFailed(
                f"system {i}: no admissible perturbation within {max_retries} retries"
            )
        models.append(model)
    return Fleet(
        models=tuple(models), init=init, radii=radii, seed=seed, retries=total_retries
    )


def stacked_arrays(models):
    """Stack per-model matrices into (M, ...) arrays for batched evaluation."""
    return (
        np.stack([m.a for m in models]),
        np.stack([m.b for m in models]),
        np.stack([m.q for m in models]),
        np.stack([m.r for m in models]),
    )


def measure_heterogeneity(fleet: Fleet, probe: Controller) -> FleetStats:
    """Empirical gradient heterogeneity at a probe controller.

    eps_het_hat is the max over pairs i != j of the squared Frobenius distance
    between analytic gradients; the per-pair spectral-norm differences of the
    system/cost matrices are returned alongside.
    """
    m_count = fleet.size
    a, b, q, r = stacked_arrays(fleet.models)
    ks = np.broadcast_to(probe.k, (m_count,) + probe.k.shape)
    grads, ok = gradient_batch(a, b, q, r, np.ascontiguousarray(ks), fleet.init.sigma0)
    if not np.all(ok):
        bad = int(np.where(~ok)[0][0])
        raise Unstable(f"probe controller destabilizes system {bad}", index=bad)

    diffs = grads[:, None, :, :] - grads[None, :, :, :]
    sq_dist = np.einsum("ijux,ijux->ij", diffs, diffs)
    eps_het_hat = float(np.max(sq_dist)) if m_count > 1 else 0.0

    gaps = {}
    mats = dict(zip(_MATRIX_KEYS, (a, b, q, r)))
    for key, stack in mats.items():
        table = np.zeros((m_count, m_count))
        for i in range(m_count):
            for j in range(i + 1, m_count):
                table[i, j] = table[j, i] = matops.spectral_norm(stack[i] - stack[j])
        gaps[key] = table
    return FleetStats(eps_het_hat=eps_het_hat, pairwise_norm_gaps=gaps)


def fleet_to_json(fleet: Fleet) -> dict:
    """Serializable document (matrices as nested row-major lists)."""
    return {
        "schema": FLEET_SCHEMA,
        "seed": fleet.seed,
        "m": fleet.size,
        "retries": fleet.retries,
        "radii": {f"eps_{k}": getattr(fleet.radii, f"eps_{k}") for k in _MATRIX_KEYS},
        "init": {
            "sigma0": fleet.init.sigma0.tolist(),
            "mu_lower": fleet.init.mu_lower,
        },
        "models": [
            {
                "id": model.id,
                "a": model.a.tolist(),
                "b": model.b.tolist(),
                "q": model.q.tolist(),
                "r": model.r.tolist(),
            }
            for model in fleet.models
        ],
    }


def fleet_from_json(doc: dict) -> Fleet:
    if doc.get("schema") != FLEET_SCHEMA:
        raise ValueError(f"unexpected fleet schema: {doc.get('schema')!r}")
    init = InitialStateSpec(
        sigma0=np.array(doc["init"]["sigma0"]), mu_lower=doc["init"]["mu_lower"]
    )
    models = tuple(
        PlantModel(
            a=np.array(m["a"]),
            b=np.array(m["b"]),
            q=np.array(m["q"]),
            r=np.array(m["r"]),
            id=m["id"],
        )
        for m in doc["models"]
    )
    radii = HeterogeneityRadii(**doc["radii"])
    return Fleet(
        models=models,
        init=init,
        radii=radii,
        seed=doc["seed"],
        retries=doc.get("retries", 0),
    )


def save_fleet(fleet: Fleet, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(fleet_to_json(fleet), handle, indent=2, sort_keys=True)


def load_fleet(path) -> Fleet:
    with open(path, "r", encoding="utf-8") as handle:
        return fleet_from_json(json.load(handle))
