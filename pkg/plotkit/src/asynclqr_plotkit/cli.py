"""asynclqr-plot: turn trace CSVs into convergence-curve images."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import MissingColumn, PlotSpec, SchemaMismatch, render


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asynclqr-plot",
        description="Plot optimality-gap curves from asynclqr trace CSVs.",
    )
    parser.add_argument("traces", nargs="*", help="trace CSV paths (ignored with --spec)")
    parser.add_argument("--spec", default=None, help="JSON plot specification file")
    parser.add_argument("--out", default="gap.png", help="output image path")
    parser.add_argument("--x", dest="x_axis", choices=["iteration", "clock"], default="iteration")
    parser.add_argument("--labels", nargs="*", default=None, help="one label per trace")
    parser.add_argument("--linear", action="store_true", help="linear y-axis (default log)")
    parser.add_argument("--title", default="")
    parser.add_argument("--gap-column", default="gap_1")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.spec is not None:
            spec_path = Path(args.spec)
            try:
                doc = json.loads(spec_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as err:
                print(f"spec error: {err}", file=sys.stderr)
                return 2
            spec = PlotSpec.from_document(doc, base_dir=spec_path.parent)
        else:
            spec = PlotSpec(
                traces=tuple(args.traces),
                output=args.out,
                x_axis=args.x_axis,
                labels=tuple(args.labels or ()),
                log_scale=not args.linear,
                title=args.title,
                gap_column=args.gap_column,
            )
        info = render(spec)
    except (SchemaMismatch, MissingColumn) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    print(f"{info.output}: {info.series} series vs {info.x_axis} ({info.width_px}x{info.height_px})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
