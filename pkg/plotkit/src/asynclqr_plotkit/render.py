"""Render convergence curves (nominal-system optimality gap) from trace CSVs.

plotkit deliberately shares no code with the simulator: it re-parses the
documented CSV schema

    n,clock,avg_grad_norm_sq,max_staleness,all_stable,gap_1,...,gap_M

and draws one series per input trace, against either the iteration count or
the virtual clock.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REQUIRED_PREFIX = ("n", "clock", "avg_grad_norm_sq", "max_staleness", "all_stable")
X_AXES = {"iteration": "n", "clock": "clock"}


class SchemaMismatch(ValueError):
    """Input is not a trace CSV with the documented header."""


class MissingColumn(ValueError):
    """A required column is absent from an otherwise valid trace."""


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: which traces, which x-axis, labels, scale, destination."""

    traces: tuple
    output: str
    x_axis: str = "iteration"
    labels: tuple = ()
    log_scale: bool = True
    title: str = ""
    gap_column: str = "gap_1"

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(str(t) for t in self.traces))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.traces:
            raise SchemaMismatch("no input traces given")
        if self.x_axis not in X_AXES:
            raise SchemaMismatch(f"x_axis must be iteration|clock, got {self.x_axis!r}")
        if self.labels and len(self.labels) != len(self.traces):
            raise SchemaMismatch(
                f"{len(self.labels)} labels for {len(self.traces)} traces"
            )

    @classmethod
    def from_document(cls, doc: dict, base_dir: Path | None = None) -> "PlotSpec":
        traces = doc.get("traces", ())
        if base_dir is not None:
            traces = [str((base_dir / t) if not Path(t).is_absolute() else t) for t in traces]
        return cls(
            traces=tuple(traces),
            output=str(doc["output"]) if base_dir is None or Path(doc["output"]).is_absolute()
            else str(base_dir / doc["output"]),
            x_axis=doc.get("x_axis", "iteration"),
            labels=tuple(doc.get("labels", ())),
            log_scale=bool(doc.get("log_scale", True)),
            title=doc.get("title", ""),
            gap_column=doc.get("gap_column", "gap_1"),
        )


@dataclass(frozen=True)
class RenderInfo:
    """What was drawn, for callers that verify the output."""

    output: str
    series: int
    width_px: int
    height_px: int
    x_axis: str
    labels: tuple = field(default=())


def load_trace(path) -> dict:
    """Parse a trace CSV into float columns, validating the schema."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaMismatch(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as err:
        raise SchemaMismatch(f"{path}: {err}") from None
    if tuple(header[: len(REQUIRED_PREFIX)]) != REQUIRED_PREFIX:
        raise SchemaMismatch(
            f"{path}: header {header[:5]} does not match the trace schema "
            f"{list(REQUIRED_PREFIX)} + gap columns"
        )
    if not any(name.startswith("gap_") for name in header):
        raise MissingColumn(f"{path}: no gap columns")
    if not rows:
        raise SchemaMismatch(f"{path}: no data rows")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as err:
        raise SchemaMismatch(f"{path}: non-numeric cell ({err})") from None
    if table.shape[1] != len(header):
        raise SchemaMismatch(f"{path}: ragged rows")
    return {name: table[:, idx] for idx, name in enumerate(header)}


def render(spec: PlotSpec) -> RenderInfo:
    """Draw one gap-vs-x series per trace and write the image."""
    columns = [load_trace(path) for path in spec.traces]
    x_key = X_AXES[spec.x_axis]
    for path, cols in zip(spec.traces, columns):
        if spec.gap_column not in cols:
            raise MissingColumn(f"{path}: missing column {spec.gap_column}")
        if x_key not in cols:
            raise MissingColumn(f"{path}: missing column {x_key}")

    labels = spec.labels or tuple(Path(p).stem for p in spec.traces)
    fig, ax = plt.subplots(figsize=(8.0, 5.0), dpi=120)
    for cols, label in zip(columns, labels):
        ax.plot(cols[x_key], cols[spec.gap_column], label=label, linewidth=1.4)
    ax.set_xlabel("iteration n" if spec.x_axis == "iteration" else "virtual clock")
    ax.set_ylabel("optimality gap")
    if spec.log_scale:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out)
    width = round(fig.get_figwidth() * fig.dpi)
    height = round(fig.get_figheight() * fig.dpi)
    plt.close(fig)
    return RenderInfo(
        output=str(out),
        series=len(columns),
        width_px=width,
        height_px=height,
        x_axis=spec.x_axis,
        labels=labels,
    )
