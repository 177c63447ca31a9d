"""Experiment definitions, presets, artifact I/O and trace summaries.

The builtin nominal plant is the reference 4-state/2-input system used by all
presets; its matrices are reproduced digit-for-digit.  The builtin initial
controller is a stabilizing but deliberately detuned Riccati gain (solved with
an inflated input penalty), giving a meaningful initial optimality gap while
keeping every preset inside the divergence-safe step-size regime.

Each preset expands to one or more labeled runs ("arms").  A run writes a
trace CSV plus a JSON metadata sidecar; the fleet shared by a preset's arms
is also serialized so experiments are replayable across implementations.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .engine import DelayModel, TraceRecord, run_async, run_sync, write_trace_csv
from .fleet import Fleet, HeterogeneityRadii, generate_fleet, save_fleet
from .lqr_core import Controller, InitialStateSpec, PlantModel
from .matops import solve_dare
from .zo import ZoConfig

RUN_SCHEMA = "asynclqr-run-v1"
GAP_THRESHOLD = 0.3
PLATEAU_WINDOW = 100

# Reference system: open-loop unstable 4-state plant with 2 inputs.
NOMINAL_A = np.array(
    [
        [1.22, 0.03, -0.02, -0.32],
        [0.01, 0.47, 4.70, 0.00],
        [0.02, -0.06, 0.40, 0.00],
        [0.01, -0.04, 0.72, 1.55],
    ]
)
NOMINAL_B = np.array(
    [
        [0.01, 0.99],
        [-3.44, 1.66],
        [-0.83, 0.44],
        [-0.47, 0.25],
    ]
)
NOMINAL_Q = np.eye(4)
NOMINAL_R = np.eye(2)

# Heterogeneity radii used by the straggler comparison and the staleness sweep.
FIG2_RADII = HeterogeneityRadii(eps_a=5.46e-2, eps_b=2.74e-2, eps_q=3.96e-2, eps_r=2.82e-2)
# Smaller radii for the batch-size sweep.
FIG3B_RADII = HeterogeneityRadii(eps_a=5.25e-3, eps_b=2.80e-3, eps_q=4.00e-3, eps_r=2.82e-3)

# Desk-scale presets shrink the radii so the heterogeneity-bias plateau sits
# well below the 0.3 gap readout on the builtin plant; full-scale presets keep
# the values above unchanged.
DESK_FIG2_FACTOR = 0.03
DESK_FIG3A_FACTOR = 0.05
DESK_FIG3B_FACTOR = 0.25
DESK_FIG3C_FACTOR = 0.05

# Input-penalty inflation used to construct the suboptimal initial gain.
INIT_DETUNE = 3.0
# Step size just under the stability ceiling 2/h_max of the nominal landscape.
DEFAULT_ETA = 5e-5
DEFAULT_ZO_RADIUS = 1e-4
DEFAULT_ZO_SAMPLES = 20


class ConfigError(ValueError):
    """Invalid experiment configuration (message names the field)."""


class IncompatibleTraces(ValueError):
    """Traces passed to a summary do not share a comparable schema."""


def nominal_model() -> PlantModel:
    return PlantModel(a=NOMINAL_A, b=NOMINAL_B, q=NOMINAL_Q, r=NOMINAL_R, id=0)


def default_init_spec() -> InitialStateSpec:
    return InitialStateSpec.identity(4)


def initial_controller() -> Controller:
    """Stabilizing, suboptimal initial gain: Riccati design with R inflated.

    Detuning the input penalty yields a sluggish gain that stabilizes the
    nominal plant with a healthy margin while starting several cost units
    away from the true optimum.
    """
    _, k_init = solve_dare(NOMINAL_A, NOMINAL_B, NOMINAL_Q, INIT_DETUNE * NOMINAL_R)
    return Controller(k_init, 0)


@dataclass(frozen=True)
class DelaySpec:
    """Compact delay description expanded to a per-agent DelayModel."""

    kind: str = "deterministic"
    base_scale: float = 1.0
    tier_scales: tuple = ()  # (scale, count) pairs appended after the base agents
    straggler_ids: tuple = ()
    straggler_factor: float = 1.0

    def build(self, m_count: int) -> DelayModel:
        scales = []
        for scale, count in self.tier_scales:
            scales.extend([float(scale)] * int(count))
        if len(scales) > m_count:
            raise ConfigError("delay tiers name more agents than M")
        scales = [self.base_scale] * (m_count - len(scales)) + scales
        return DelayModel(
            kind=self.kind,
            per_agent_scale=tuple(scales),
            straggler_ids=frozenset(self.straggler_ids),
            straggler_factor=self.straggler_factor,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; presets produce lists of these."""

    label: str = "run"
    algorithm: str = "async"  # async | sync
    mode: str = engine.MODE_ZO  # zo | exact-grad
    nominal_source: str = "paper-nominal"  # builtin name or fleet JSON path
    radii: HeterogeneityRadii = field(default_factory=HeterogeneityRadii)
    radius_scale: float = 1.0
    m_count: int = 20
    b_s: int = 5
    eta: float = DEFAULT_ETA
    n_iters: int = 1000
    zo_radius: float = DEFAULT_ZO_RADIUS
    zo_samples: int = DEFAULT_ZO_SAMPLES
    zo_redraw: int = 0
    tau_cap: int | None = None
    delays: DelaySpec = field(default_factory=DelaySpec)
    seed: int = 0

    def validate(self) -> None:
        if self.algorithm not in ("async", "sync"):
            raise ConfigError(f"algorithm: expected async|sync, got {self.algorithm!r}")
        if self.mode not in (engine.MODE_ZO, engine.MODE_EXACT):
            raise ConfigError(f"mode: expected zo|exact-grad, got {self.mode!r}")
        if self.m_count < 1:
            raise ConfigError("m_count: must be >= 1")
        if not (1 <= self.b_s <= self.m_count):
            raise ConfigError(f"b_s: must be in [1, M={self.m_count}], got {self.b_s}")
        if self.eta <= 0:
            raise ConfigError("eta: must be positive")
        if self.n_iters < 1:
            raise ConfigError("n_iters: must be >= 1")
        if self.zo_radius <= 0:
            raise ConfigError("zo_radius: must be positive")
        if self.zo_samples < 1:
            raise ConfigError("zo_samples: must be >= 1")
        if self.radius_scale < 0:
            raise ConfigError("radius_scale: must be >= 0")
        if self.tau_cap is not None and self.tau_cap < 1:
            raise ConfigError("tau_cap: must be >= 1 when set")
        if self.seed < 0:
            raise ConfigError("seed: must be nonnegative")

    def scaled_radii(self) -> HeterogeneityRadii:
        return self.radii.scaled(self.radius_scale)

    def metadata(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["radii"] = {k: float(v) for k, v in doc["radii"].items()}
        doc["delays"]["straggler_ids"] = list(self.delays.straggler_ids)
        doc["delays"]["tier_scales"] = [list(t) for t in self.delays.tier_scales]
        doc["schema"] = RUN_SCHEMA
        return doc


# Fleet admission keeps initial costs within this factor of the nominal one,
# so no member starts with a near-unit closed-loop radius (exploding costs and
# gradients would put the preset outside the convergent step-size regime).
COST_CAP_FACTOR = 1.2


def build_fleet(cfg: ExperimentConfig) -> Fleet:
    from .fleet import load_fleet
    from .lqr_core import lqr_cost

    if cfg.nominal_source == "paper-nominal":
        nominal = nominal_model()
        k0 = initial_controller()
        init = default_init_spec()
        cap = COST_CAP_FACTOR * lqr_cost(nominal, k0.k, init)
        return generate_fleet(
            nominal,
            cfg.scaled_radii(),
            cfg.m_count,
            seed=cfg.seed,
            stabilizer=k0,
            init=init,
            cost_cap=cap,
        )
    return load_fleet(cfg.nominal_source)


def execute(cfg: ExperimentConfig, fleet: Fleet | None = None, audit: dict | None = None):
    """Run one configuration and return its trace records."""
    cfg.validate()
    if fleet is None:
        fleet = build_fleet(cfg)
    zo_cfg = ZoConfig(r=cfg.zo_radius, m=cfg.zo_samples, redraw_limit=cfg.zo_redraw)
    k0 = initial_controller()
    delays = cfg.delays.build(fleet.size)
    if cfg.algorithm == "sync":
        return run_sync(
            fleet, k0, cfg.eta, cfg.n_iters, zo_cfg, delays, seed=cfg.seed, mode=cfg.mode
        )
    return run_async(
        fleet,
        k0,
        cfg.eta,
        cfg.b_s,
        cfg.n_iters,
        zo_cfg,
        delays,
        tau_cap=cfg.tau_cap,
        seed=cfg.seed,
        mode=cfg.mode,
        audit=audit,
    )


def run_experiment(cfg: ExperimentConfig, out_dir, fleet: Fleet | None = None) -> dict:
    """Run one arm and write its artifacts (trace CSV + metadata JSON)."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fleet is None:
        fleet = build_fleet(cfg)
        save_fleet(fleet, out / f"{cfg.label}.fleet.json")
    records = execute(cfg, fleet=fleet)
    trace_path = out / f"{cfg.label}.csv"
    meta_path = out / f"{cfg.label}.meta.json"
    write_trace_csv(records, trace_path)
    with open(meta_path, "w", encoding="utf-8") as handle:
        json.dump(cfg.metadata(), handle, indent=2, sort_keys=True)
    return {"trace": str(trace_path), "metadata": str(meta_path), "records": records}


# ---------------------------------------------------------------------------
# Presets (desk scale by default: M=20; --full-scale restores M=100 shapes).
# ---------------------------------------------------------------------------


def preset_fig2(seed: int, full_scale: bool = False, mode: str = engine.MODE_ZO):
    """Async vs sync under a single x20 straggler, shared fleet."""
    m_count, b_s = (100, 20) if full_scale else (20, 5)
    radii = FIG2_RADII if full_scale else FIG2_RADII.scaled(DESK_FIG2_FACTOR)
    delays = DelaySpec(straggler_ids=(m_count - 1,), straggler_factor=20.0)
    base = ExperimentConfig(
        mode=mode,
        radii=radii,
        m_count=m_count,
        b_s=b_s,
        eta=5e-6,
        n_iters=6000,
        tau_cap=20,
        delays=delays,
        seed=seed,
    )
    return [
        dataclasses.replace(base, label="fig2_async", algorithm="async"),
        dataclasses.replace(
            base, label="fig2_sync", algorithm="sync", tau_cap=None, n_iters=4500
        ),
    ]


def preset_fig3a(seed: int, full_scale: bool = False, mode: str = engine.MODE_ZO):
    """Staleness sweep: same fleet and delays, tau_cap in {1, 3, 10}.

    Two mildly slow agents give the uncapped schedule a max staleness of ~3,
    so the tightest cap binds (deferral) while the looser ones run free; the
    slow tier is kept small so that cap-dependent batch composition does not
    reweight the effective objective across arms.
    """
    m_count, b_s = (100, 80) if full_scale else (20, 16)
    radii = FIG2_RADII if full_scale else FIG2_RADII.scaled(DESK_FIG3A_FACTOR)
    delays = DelaySpec(base_scale=1.0, tier_scales=((3.0, 2),))
    base = ExperimentConfig(
        mode=mode,
        radii=radii,
        m_count=m_count,
        b_s=b_s,
        eta=2.5e-5,
        n_iters=16000,
        delays=delays,
        seed=seed,
    )
    return [
        dataclasses.replace(base, label=f"fig3a_tau{tau}", tau_cap=tau)
        for tau in (1, 3, 10)
    ]


def preset_fig3b(seed: int, full_scale: bool = False, mode: str = engine.MODE_ZO):
    """Batch-size sweep with small heterogeneity and equal delays.

    Each arm uses the step size eta_base * sqrt(b_s / M): aggregating more
    estimates cuts the update variance, which is precisely what admits a
    proportionally larger step, and that is the regime where batch size buys
    per-iteration speed.  At a fixed step size the effect drowns in
    first-passage noise at this scale.
    """
    m_count = 100 if full_scale else 20
    batch_sizes = (20, 50, 100) if full_scale else (5, 10, 20)
    radii = FIG3B_RADII if full_scale else FIG3B_RADII.scaled(DESK_FIG3B_FACTOR)
    eta_base = 2e-5
    base = ExperimentConfig(
        mode=mode,
        radii=radii,
        m_count=m_count,
        n_iters=2500,
        delays=DelaySpec(),
        seed=seed,
    )
    return [
        dataclasses.replace(
            base,
            label=f"fig3b_bs{b}",
            b_s=b,
            eta=eta_base * math.sqrt(b / m_count),
        )
        for b in batch_sizes
    ]


def preset_fig3c(seed: int, full_scale: bool = False, mode: str = engine.MODE_EXACT):
    """Heterogeneity sweep: base radii x0, x1, x2 (exact gradients by default
    so the plateau is a pure heterogeneity bias)."""
    m_count = 100 if full_scale else 20
    radii = FIG2_RADII if full_scale else FIG2_RADII.scaled(DESK_FIG3C_FACTOR)
    base = ExperimentConfig(
        mode=mode,
        radii=radii,
        m_count=m_count,
        b_s=m_count,
        eta=4e-5,
        n_iters=32000,
        tau_cap=5,
        delays=DelaySpec(),
        seed=seed,
    )
    return [
        dataclasses.replace(base, label=f"fig3c_scale{s}", radius_scale=float(s))
        for s in (0, 1, 2)
    ]


PRESETS = {
    "fig2": preset_fig2,
    "fig3a": preset_fig3a,
    "fig3b": preset_fig3b,
    "fig3c": preset_fig3c,
}


def expand_preset(name: str, seed: int, full_scale: bool = False, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r} (have {sorted(PRESETS)})")
    arms = PRESETS[name](seed, full_scale=full_scale)
    if overrides:
        arms = [dataclasses.replace(cfg, **overrides) for cfg in arms]
    return arms


def run_preset(name: str, seed: int, out_dir, full_scale: bool = False, **overrides):
    """Run every arm of a preset against one shared fleet per radius scale."""
    arms = expand_preset(name, seed, full_scale=full_scale, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fleets: dict = {}
    results = {}
    for cfg in arms:
        key = (cfg.radius_scale, cfg.m_count, cfg.seed)
        if key not in fleets:
            fleets[key] = build_fleet(cfg)
            save_fleet(fleets[key], out / f"fleet_scale{cfg.radius_scale:g}.json")
        results[cfg.label] = run_experiment(cfg, out, fleet=fleets[key])
    return results


# ---------------------------------------------------------------------------
# Trace loading and summaries.
# ---------------------------------------------------------------------------


def records_to_columns(records) -> dict:
    gaps = np.array([rec.gaps for rec in records])
    cols = {
        "n": np.array([rec.n for rec in records]),
        "clock": np.array([rec.clock for rec in records]),
        "avg_grad_norm_sq": np.array([rec.avg_grad_norm_sq for rec in records]),
        "max_staleness": np.array([rec.max_staleness for rec in records]),
        "all_stable": np.array([rec.all_stable for rec in records], dtype=bool),
    }
    for i in range(gaps.shape[1]):
        cols[f"gap_{i + 1}"] = gaps[:, i]
    return cols


def load_trace(path) -> dict:
    """Parse a trace CSV back into numpy columns."""
    import csv as _csv

    with open(path, "r", encoding="utf-8") as handle:
        reader = _csv.reader(handle)
        header = next(reader)
        rows = [row for row in reader]
    if not header or header[0] != "n":
        raise IncompatibleTraces(f"{path}: not a trace CSV (header {header[:3]}...)")
    table = np.array(rows, dtype=np.float64)
    cols = {name: table[:, idx] for idx, name in enumerate(header)}
    cols["n"] = cols["n"].astype(int)
    cols["max_staleness"] = cols["max_staleness"].astype(int)
    cols["all_stable"] = cols["all_stable"].astype(bool)
    return cols


def iterations_to_threshold(cols: dict, threshold: float = GAP_THRESHOLD):
    hit = np.where(cols["gap_1"] <= threshold)[0]
    return int(cols["n"][hit[0]]) if hit.size else None

def clock_to_threshold(cols: dict, threshold: float = GAP_THRESHOLD):
    hit = np.where(cols["gap_1"] <= threshold)[0]
    return float(cols["clock"][hit[0]]) if hit.size else None


def plateau_gap(cols: dict, window: int = PLATEAU_WINDOW) -> float:
    return float(np.mean(cols["gap_1"][-window:]))


def summarize(traces: dict, threshold: float = GAP_THRESHOLD) -> dict:
    """Per-trace readouts: iterations/clock to threshold, plateau, stability.

    ``traces`` maps labels to column dicts (from load_trace or
    records_to_columns).  All traces must expose the same gap columns.
    """
    if not traces:
        raise IncompatibleTraces("no traces given")
    gap_counts = set()
    for label, cols in traces.items():
        if "gap_1" not in cols:
            raise IncompatibleTraces(f"{label}: missing gap columns")
        gap_counts.add(sum(1 for key in cols if key.startswith("gap_")))
    if len(gap_counts) != 1:
        raise IncompatibleTraces(f"traces disagree on system count: {gap_counts}")
    report = {"threshold": threshold, "traces": {}}
    for label, cols in traces.items():
        report["traces"][label] = {
            "iterations_to_threshold": iterations_to_threshold(cols, threshold),
            "clock_to_threshold": clock_to_threshold(cols, threshold),
            "plateau_gap": plateau_gap(cols),
            "final_gap": float(cols["gap_1"][-1]),
            "max_staleness": int(np.max(cols["max_staleness"])),
            "all_stable": bool(np.all(cols["all_stable"])),
            "iterations": int(cols["n"][-1]),
        }
    return report


def summarize_dir(directory, threshold: float = GAP_THRESHOLD) -> dict:
    out = Path(directory)
    traces = {}
    for path in sorted(out.glob("*.csv")):
        traces[path.stem] = load_trace(path)
    if not traces:
        raise IncompatibleTraces(f"no trace CSVs under {directory}")
    return summarize(traces, threshold)


def env_seed(default: int) -> int:
    value = os.environ.get("ASYNCLQR_SEED")
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"ASYNCLQR_SEED: not an integer: {value!r}") from None
