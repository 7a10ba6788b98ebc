from __future__ import annotations

import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from gacl import cli
from gacl.cli import emit_svg, main, parse_args
from gacl.harness import EXPERIMENTS

SVG = "{http://www.w3.org/2000/svg}"
FAST_ISO = ["--set", "steps=10", "--set", "replicates=2"]


def polylines(path: Path) -> list[list[str]]:
    root = ET.parse(path).getroot()
    return [p.get("points").split() for p in root.iter(f"{SVG}polyline")]


class TestParse:
    def test_seed(self):
        cfg = parse_args(["experiment", "uniform-convergence", "--seed", "7"])
        assert cfg.command == "experiment" and cfg.experiment_name == "uniform-convergence"
        assert cli._spec(cfg.experiment_name, cfg).master_seed == 7

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("GACL_OUT", raising=False)
        cfg = parse_args(["all"])
        assert cfg.seed == 42 and cfg.out_dir == Path("out") and cfg.overrides == {}

    def test_out_precedence(self, monkeypatch):
        monkeypatch.setenv("GACL_OUT", "/tmp/envout")
        assert parse_args(["all"]).out_dir == Path("/tmp/envout")
        assert parse_args(["all", "--out", "x"]).out_dir == Path("x")

    @pytest.mark.parametrize(
        "argv, needle",
        [
            (["experiment", "iso-curve", "--foo=1"], "--foo=1"),
            (["experiment", "iso-curve", "--set", "foo=1"], "foo"),
            (["experiment", "iso-curve", "--set", "grid=1,2"], "grid"),
            (["simulate", "--set", "train.eta=1"], "train.eta"),
            (["experiment", "nope"], "nope"),
            (["frobnicate"], "frobnicate"),
            (["experiment", "iso-curve", "--set", "novalue"], "novalue"),
        ],
    )
    def test_usage_errors_exit_2(self, argv, needle, capsys):
        with pytest.raises(SystemExit) as exc:
            parse_args(argv)
        assert exc.value.code == 2
        assert needle in capsys.readouterr().err

    def test_help_lists_experiments(self, capsys):
        for argv in (["--help"], ["experiment", "--help"]):
            with pytest.raises(SystemExit) as exc:
                parse_args(argv)
            assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in EXPERIMENTS:
            assert name in out

    def test_config_file(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"colony.rho_gen": 0.2, "steps": 10}))
        cfg = parse_args(["experiment", "iso-curve", "--config", str(conf), "--set", "steps=12"])
        spec = cli._spec("iso-curve", cfg)
        assert spec.colony().rho_gen == 0.2
        # flags win over the file
        assert spec.params()["steps"] == 12

    def test_bad_config_file(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(SystemExit) as exc:
            parse_args(["experiment", "iso-curve", "--config", str(conf)])
        assert exc.value.code == 2 and "bogus" in capsys.readouterr().err
        conf.write_text("[1, 2]")
        with pytest.raises(SystemExit):
            parse_args(["all", "--config", str(conf)])


class TestRun:
    def test_experiment_writes_outputs(self, tmp_path, capsys):
        assert main(["experiment", "iso-curve", "--out", str(tmp_path), *FAST_ISO]) == 0
        csv_path, summary = tmp_path / "iso-curve.csv", tmp_path / "summary.json"
        assert csv_path.exists() and summary.exists()
        first = csv_path.read_bytes(), summary.read_bytes()
        assert main(["experiment", "iso-curve", "--out", str(tmp_path), *FAST_ISO]) == 0
        assert (csv_path.read_bytes(), summary.read_bytes()) == first
        assert "iso-curve: pass" in capsys.readouterr().out
        assert json.loads(summary.read_text())["iso-curve"]["metadata"]["replicates"] == 2

    def test_gacl_out_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GACL_OUT", str(tmp_path / "env"))
        assert main(["experiment", "mean-field", "--set", "steps=5", "--set", "fixed_point_steps=10"]) == 0
        assert (tmp_path / "env" / "mean-field.csv").exists()

    def test_io_failure_exit_1(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["experiment", "iso-curve", "--out", str(blocker / "sub"), *FAST_ISO]) == 1
        assert str(blocker / "sub") in capsys.readouterr().err

    def test_experiment_error_exit_1(self, tmp_path, capsys):
        assert main(["experiment", "adaptation", "--out", str(tmp_path), "--set", "shift=2"]) == 1
        assert "shift" in capsys.readouterr().err

    def test_simulate_and_train(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--set", "generations=5"]) == 0
        lines = (tmp_path / "simulate.csv").read_text().splitlines()
        assert lines[0].startswith("generation,fitness,true_fitness,tau_0") and len(lines) == 6
        assert main(["train", "--out", str(tmp_path), "--set", "train.epochs=3"]) == 0
        lines = (tmp_path / "train.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,accuracy,grad_norm,val_accuracy" and len(lines) == 4

    def test_bench(self, tmp_path, capsys):
        argv = ["bench", "--out", str(tmp_path), "--set", "replicates=2", "--set", "train.epochs=5"]
        assert main(argv) == 0
        out = capsys.readouterr().out
        for name in ("iris-easy", "iris-hard", "mtcars", "swiss", "usarrests", "average"):
            assert name in out
        assert (tmp_path / "benchmark.csv").exists()

    def test_plot_long_csv(self, tmp_path):
        assert main(["experiment", "iso-curve", "--out", str(tmp_path), *FAST_ISO]) == 0
        y = "paired/gacl/error_norm,paired/mlp/loss_norm"
        argv = ["plot", str(tmp_path / "iso-curve.csv"), "--out", str(tmp_path), "--y", y, "--band"]
        assert main(argv) == 0
        lines = polylines(tmp_path / "iso-curve.svg")
        assert len(lines) == 2 and all(len(p) == 11 for p in lines)
        assert (tmp_path / "iso-curve-wide.csv").exists()

    def test_plot_missing_file_exit_1(self, tmp_path, capsys):
        assert main(["plot", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1
        assert "none.csv" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "gacl", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and all(f"  {n}\n" in proc.stdout for n in EXPERIMENTS)


class TestSvg:
    def write(self, tmp_path: Path, text: str) -> Path:
        p = tmp_path / "in.csv"
        p.write_text(text)
        return p

    def test_one_polyline_three_points(self, tmp_path):
        src = self.write(tmp_path, "x,y\n0,1\n1,3\n2,2\n")
        out = emit_svg(src, "x", ["y"], tmp_path / "o.svg")
        lines = polylines(out)
        assert len(lines) == 1 and len(lines[0]) == 3

    def test_missing_column(self, tmp_path):
        src = self.write(tmp_path, "x,y\n0,1\n")
        with pytest.raises(KeyError, match="z"):
            emit_svg(src, "x", ["z"], tmp_path / "o.svg")
        with pytest.raises(KeyError, match="y_se"):
            emit_svg(src, "x", ["y"], tmp_path / "o.svg", band=True)

    def test_band_and_well_formed(self, tmp_path):
        src = self.write(tmp_path, "step,a,a_se,b<&>,b<&>_se\n0,1,0.1,2,0.2\n1,0.5,0.1,1,0.2\n2,0.2,0.05,nan,0\n")
        out = emit_svg(src, "step", ["a", "b<&>"], tmp_path / "o.svg", band=True, title="t & u")
        root = ET.parse(out).getroot()
        polys = list(root.iter(f"{SVG}polygon"))
        assert len(polys) == 2 and all(p.get("fill-opacity") == "0.2" for p in polys)
        # the non-finite point is skipped
        assert [len(p) for p in polylines(out)] == [3, 2]
        text = out.read_text()
        assert "href" not in text and "url(" not in text and "<image" not in text
        assert "b&lt;&amp;&gt;" in text
