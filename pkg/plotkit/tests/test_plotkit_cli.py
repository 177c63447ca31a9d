import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from asynclqr_plotkit.cli import main
from test_plotkit_render import write_trace


class TestCliDirect:
    def test_positional_traces(self, tmp_path, capsys):
        traces = [str(write_trace(tmp_path / f"t{i}.csv", seed=i)) for i in range(2)]
        code = main(traces + ["--out", str(tmp_path / "o.png"), "--x", "clock"])
        assert code == 0
        assert (tmp_path / "o.png").exists()
        assert "2 series vs clock" in capsys.readouterr().out

    def test_spec_file(self, tmp_path):
        write_trace(tmp_path / "t.csv")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(
            json.dumps({"traces": ["t.csv"], "output": "out.png", "x_axis": "iteration"}),
            encoding="utf-8",
        )
        assert main(["--spec", str(spec_path)]) == 0
        assert (tmp_path / "out.png").exists()

    def test_schema_mismatch_nonzero_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("who,what\n1,2\n", encoding="utf-8")
        assert main([str(bad), "--out", str(tmp_path / "o.png")]) == 2
        assert "input error" in capsys.readouterr().err

    def test_empty_input_nonzero_exit(self, tmp_path, capsys):
        assert main(["--out", str(tmp_path / "o.png")]) == 2

    def test_missing_spec_file_nonzero_exit(self, tmp_path):
        assert main(["--spec", str(tmp_path / "none.json")]) == 2


@pytest.mark.slow
class TestFigureStyleImages:
    """Regenerate figure-style images from simulator artifacts.

    Uses the acceptance artifacts when ASYNCLQR_ACCEPTANCE_DIR points at them;
    otherwise produces shortened preset runs through the simulator CLI (the
    only coupling is the documented artifact format).
    """

    def _artifacts(self, tmp_path, preset, extra):
        env_dir = os.environ.get("ASYNCLQR_ACCEPTANCE_DIR")
        if env_dir and (Path(env_dir) / preset).is_dir():
            found = sorted(str(p) for p in (Path(env_dir) / preset).glob("*.csv"))
            if found:
                return found
        out = tmp_path / preset
        cmd = [
            sys.executable,
            "-m",
            "asynclqr.cli",
            "run",
            "--preset",
            preset,
            "--seed",
            "0",
            "--out",
            str(out),
        ] + extra
        subprocess.run(cmd, check=True, capture_output=True)
        return sorted(str(p) for p in out.glob("*.csv"))

    def test_fig2_style_two_series_vs_clock(self, tmp_path):
        traces = self._artifacts(tmp_path, "fig2", ["--N", "60"])
        assert len(traces) == 2
        from asynclqr_plotkit import PlotSpec, render

        info = render(
            PlotSpec(
                traces=tuple(traces),
                output=str(tmp_path / "fig2.png"),
                x_axis="clock",
                labels=("asynchronous", "synchronous"),
            )
        )
        assert info.series == 2 and info.x_axis == "clock"

    def test_fig3a_style_three_series_vs_iteration(self, tmp_path):
        traces = self._artifacts(
            tmp_path, "fig3a", ["--N", "60", "--mode", "exact-grad"]
        )
        assert len(traces) == 3
        from asynclqr_plotkit import PlotSpec, render

        info = render(
            PlotSpec(
                traces=tuple(traces),
                output=str(tmp_path / "fig3a.png"),
                x_axis="iteration",
                labels=("cap 1", "cap 3", "cap 10"),
            )
        )
        assert info.series == 3 and info.x_axis == "iteration"
