import json

import numpy as np
import pytest

from asynclqr_plotkit import MissingColumn, PlotSpec, SchemaMismatch, load_trace, render

HEADER = "n,clock,avg_grad_norm_sq,max_staleness,all_stable,gap_1"


def write_trace(path, rows=40, gaps=1, seed=0):
    rng = np.random.default_rng(seed)
    header = HEADER + "".join(f",gap_{i}" for i in range(2, gaps + 1))
    lines = [header]
    clock = 0.0
    for n in range(rows):
        clock += float(rng.uniform(0.5, 1.5))
        gap_vals = ",".join(
            repr(float(3.0 * np.exp(-0.05 * n) + 0.01 * g)) for g in range(gaps)
        )
        lines.append(f"{n},{clock!r},{0.1!r},0,1,{gap_vals}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadTrace:
    def test_parses_valid_trace(self, tmp_path):
        cols = load_trace(write_trace(tmp_path / "t.csv", gaps=3))
        assert set(cols) >= {"n", "clock", "gap_1", "gap_2", "gap_3"}
        assert len(cols["n"]) == 40

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,value\n1,2\n", encoding="utf-8")
        with pytest.raises(SchemaMismatch):
            load_trace(path)

    def test_rejects_empty_and_nonnumeric(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(SchemaMismatch):
            load_trace(empty)
        headers_only = tmp_path / "headers.csv"
        headers_only.write_text(HEADER + "\n", encoding="utf-8")
        with pytest.raises(SchemaMismatch):
            load_trace(headers_only)
        garbled = tmp_path / "garbled.csv"
        garbled.write_text(HEADER + "\n0,zero,0,0,1,1\n", encoding="utf-8")
        with pytest.raises(SchemaMismatch):
            load_trace(garbled)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaMismatch):
            load_trace(tmp_path / "nope.csv")


class TestRender:
    def test_series_count_and_dimensions(self, tmp_path):
        traces = [write_trace(tmp_path / f"t{i}.csv", seed=i) for i in range(3)]
        spec = PlotSpec(
            traces=tuple(str(t) for t in traces),
            output=str(tmp_path / "out.png"),
            x_axis="iteration",
            labels=("a", "b", "c"),
        )
        info = render(spec)
        assert info.series == 3
        assert info.x_axis == "iteration"
        assert (tmp_path / "out.png").exists()
        assert info.width_px == 960 and info.height_px == 600

    def test_clock_axis(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        info = render(
            PlotSpec(traces=(str(trace),), output=str(tmp_path / "c.png"), x_axis="clock")
        )
        assert info.x_axis == "clock"
        assert info.series == 1

    def test_identical_inputs_identical_shape(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        spec1 = PlotSpec(traces=(str(trace),), output=str(tmp_path / "one.png"))
        spec2 = PlotSpec(traces=(str(trace),), output=str(tmp_path / "two.png"))
        one, two = render(spec1), render(spec2)
        assert (one.series, one.width_px, one.height_px) == (
            two.series,
            two.width_px,
            two.height_px,
        )

    def test_inputs_not_mutated(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        before = trace.read_bytes()
        render(PlotSpec(traces=(str(trace),), output=str(tmp_path / "o.png")))
        assert trace.read_bytes() == before

    def test_empty_trace_list_rejected(self, tmp_path):
        with pytest.raises(SchemaMismatch):
            PlotSpec(traces=(), output=str(tmp_path / "o.png"))

    def test_missing_gap_column(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv", gaps=1)
        spec = PlotSpec(
            traces=(str(trace),), output=str(tmp_path / "o.png"), gap_column="gap_9"
        )
        with pytest.raises(MissingColumn):
            render(spec)

    def test_label_count_must_match(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        with pytest.raises(SchemaMismatch):
            PlotSpec(traces=(str(trace),), output="o.png", labels=("a", "b"))


class TestSpecDocument:
    def test_from_document_resolves_relative_paths(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        doc = {
            "traces": ["t.csv"],
            "output": "img/out.png",
            "x_axis": "clock",
            "labels": ["run"],
            "log_scale": False,
        }
        spec = PlotSpec.from_document(doc, base_dir=tmp_path)
        assert spec.traces == (str(trace),)
        assert spec.output == str(tmp_path / "img" / "out.png")
        info = render(spec)
        assert info.series == 1
        assert (tmp_path / "img" / "out.png").exists()

    def test_round_trip_via_json(self, tmp_path):
        trace = write_trace(tmp_path / "t.csv")
        doc = {"traces": [str(trace)], "output": str(tmp_path / "o.png")}
        spec = PlotSpec.from_document(json.loads(json.dumps(doc)))
        assert render(spec).series == 1
