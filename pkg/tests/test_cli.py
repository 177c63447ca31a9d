import json
from pathlib import Path

import pytest

from asynclqr.cli import main


class TestRunCommand:
    def test_custom_run_writes_artifacts(self, tmp_path, capsys):
        code = main(
            [
                "run",
                "--preset", "custom",
                "--out", str(tmp_path),
                "--M", "4",
                "--bs", "4",
                "--eta", "2e-5",
                "--N", "25",
                "--mode", "exact-grad",
                "--seed", "3",
            ]
        )
        assert code == 0
        assert (tmp_path / "custom.csv").exists()
        meta = json.loads((tmp_path / "custom.meta.json").read_text())
        assert meta["m_count"] == 4 and meta["seed"] == 3
        assert "custom.csv" in capsys.readouterr().out

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ASYNCLQR_SEED", "17")
        main(
            [
                "run", "--preset", "custom", "--out", str(tmp_path),
                "--M", "2", "--bs", "2", "--N", "5", "--mode", "exact-grad",
            ]
        )
        meta = json.loads((tmp_path / "custom.meta.json").read_text())
        assert meta["seed"] == 17

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        code = main(
            ["run", "--preset", "custom", "--out", str(tmp_path), "--M", "4", "--bs", "9"]
        )
        assert code == 2
        assert "configuration error" in capsys.readouterr().err

    def test_divergent_run_exits_3(self, tmp_path, capsys):
        code = main(
            [
                "run", "--preset", "custom", "--out", str(tmp_path),
                "--M", "2", "--bs", "2", "--N", "50", "--eta", "0.05",
                "--mode", "exact-grad",
            ]
        )
        assert code == 3
        assert "DivergenceDetected" in capsys.readouterr().err

    def test_zo_redraw_flag_recorded(self, tmp_path):
        main(
            [
                "run", "--preset", "custom", "--out", str(tmp_path),
                "--M", "2", "--bs", "2", "--N", "3", "--zo-redraw",
            ]
        )
        meta = json.loads((tmp_path / "custom.meta.json").read_text())
        assert meta["zo_redraw"] == 10


class TestSummarizeCommand:
    def test_summarize_directory(self, tmp_path, capsys):
        main(
            [
                "run", "--preset", "custom", "--out", str(tmp_path),
                "--M", "3", "--bs", "3", "--N", "20", "--mode", "exact-grad",
            ]
        )
        capsys.readouterr()  # drain the run command's output
        code = main(["summarize", str(tmp_path)])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["threshold"] == 0.3
        assert "custom" in report["traces"]
        assert report["traces"]["custom"]["all_stable"] is True

    def test_empty_directory_exits_2(self, tmp_path, capsys):
        code = main(["summarize", str(tmp_path)])
        assert code == 2
        assert "trace error" in capsys.readouterr().err
