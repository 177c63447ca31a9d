"""Asynchronous heterogeneous model-free LQR design, simulated in virtual time."""

from .engine import (
    DelayModel,
    DivergenceDetected,
    GradientReport,
    StalenessCapInfeasible,
    TraceRecord,
    run_async,
    run_sync,
    staleness_stats,
    write_trace_csv,
)
from .fleet import (
    Fleet,
    FleetStats,
    GenerationFailed,
    HeterogeneityRadii,
    generate_fleet,
    load_fleet,
    measure_heterogeneity,
    save_fleet,
)
from .lqr_core import (
    Controller,
    InitialStateSpec,
    PlantModel,
    TheoryConstants,
    Unstable,
    analytic_gradient,
    check_sublevel,
    estimate_gradient_lipschitz,
    gradient_dominance_lambda,
    lqr_cost,
)
from .matops import (
    DimensionMismatch,
    LyapunovSolution,
    NoConvergence,
    NotContractive,
    is_contractive,
    solve_dare,
    solve_dlyap,
    spectral_radius_estimate,
)
from .zo import PerturbationUnstable, ZoConfig, ZoEstimate, draw_sphere_perturbation, zo_estimate

__version__ = "0.1.0"
