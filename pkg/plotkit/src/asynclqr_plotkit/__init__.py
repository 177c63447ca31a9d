"""Plotting companion for asynclqr trace artifacts."""

from .render import MissingColumn, PlotSpec, RenderInfo, SchemaMismatch, load_trace, render

__version__ = "0.1.0"
