"""Command-line entry point: run presets, verify acceptance suites, summarize."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .engine import MODE_EXACT, MODE_ZO, DivergenceDetected, StalenessCapInfeasible
from .harness import ConfigError, IncompatibleTraces
from .zo import PerturbationUnstable


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asynclqr",
        description="Virtual-time simulator for asynchronous heterogeneous LQR policy gradient design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset (or a custom config) and write trace artifacts")
    run.add_argument(
        "--preset",
        default="custom",
        choices=["fig2", "fig3a", "fig3b", "fig3c", "custom"],
        help="experiment family; 'custom' runs a single configurable arm",
    )
    run.add_argument("--seed", type=int, default=0, help="RNG seed (ASYNCLQR_SEED overrides)")
    run.add_argument("--out", required=True, help="output directory for CSV/JSON artifacts")
    run.add_argument("--mode", choices=[MODE_ZO, MODE_EXACT], default=None)
    run.add_argument("--M", type=int, default=None, help="number of systems")
    run.add_argument("--bs", type=int, default=None, help="aggregation batch size")
    run.add_argument("--eta", type=float, default=None, help="step size")
    run.add_argument("--N", type=int, default=None, help="server iterations")
    run.add_argument("--radius-scale", type=float, default=None, help="heterogeneity radii multiplier")
    run.add_argument("--tau-cap", type=int, default=None, help="staleness cap (deferral-enforced)")
    run.add_argument("--zo-redraw", action="store_true",
                     help="redraw destabilizing perturbations (up to 10 per sample) instead of aborting")
    run.add_argument("--full-scale", action="store_true",
                     help="use the full-scale preset shapes (M=100) instead of desk scale")

    verify = sub.add_parser("verify", help="run the acceptance suites")
    verify.add_argument("--suite", default="all", choices=["oracles", "properties", "figures", "all"])
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", default="acceptance-artifacts")

    summarize = sub.add_parser("summarize", help="report readouts for a directory of traces")
    summarize.add_argument("directory")
    summarize.add_argument("--threshold", type=float, default=harness.GAP_THRESHOLD)
    return parser


def _overrides_from(args) -> dict:
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.M is not None:
        overrides["m_count"] = args.M
    if args.bs is not None:
        overrides["b_s"] = args.bs
    if args.eta is not None:
        overrides["eta"] = args.eta
    if args.N is not None:
        overrides["n_iters"] = args.N
    if args.radius_scale is not None:
        overrides["radius_scale"] = args.radius_scale
    if args.tau_cap is not None:
        overrides["tau_cap"] = args.tau_cap
    if args.zo_redraw:
        overrides["zo_redraw"] = 10
    return overrides


def _cmd_run(args) -> int:
    seed = harness.env_seed(args.seed)
    overrides = _overrides_from(args)
    if args.preset == "custom":
        cfg = harness.ExperimentConfig(
            label="custom",
            radii=harness.FIG2_RADII.scaled(harness.DESK_FIG2_FACTOR),
            seed=seed,
            **overrides,
        )
        results = {cfg.label: harness.run_experiment(cfg, args.out)}
    else:
        results = harness.run_preset(
            args.preset, seed, args.out, full_scale=args.full_scale, **overrides
        )
    for label, res in results.items():
        print(f"{label}: {res['trace']}")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_suite

    seed = harness.env_seed(args.seed)
    results = run_suite(args.suite, seed=seed, out_dir=args.out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def _cmd_summarize(args) -> int:
    report = harness.summarize_dir(args.directory, threshold=args.threshold)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_summarize(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except IncompatibleTraces as err:
        print(f"trace error: {err}", file=sys.stderr)
        return 2
    except (DivergenceDetected, StalenessCapInfeasible, PerturbationUnstable) as err:
        print(f"run aborted: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
