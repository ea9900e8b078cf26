import hashlib
import os

import numpy as np
import pytest

from halfspec.cli import main
from halfspec.gridio import load_cube, save_cube
from halfspec.synthgen import default_spec, generate


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def cube_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "in.cube"
    spec = default_spec(8, 16, 24, seed=5, kappa_low=4.0, kappa_high=30.0)
    cube = generate(spec)
    save_cube(cube.grid, cube, path)
    return str(path)


def run(*argv):
    return main(list(argv))


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run("inspect", "--bogus", "x") == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_missing_file_is_runtime_error(self, tmp_path):
        assert run("inspect", str(tmp_path / "absent.arc")) == 2

    def test_simulate_without_seed(self, cube_file, tmp_path, capsys):
        arc = str(tmp_path / "a.arc")
        assert run("compress", cube_file, arc, "--ratio", "3", "--M", "20",
                   "--J", "0") == 0
        assert run("decompress", arc, str(tmp_path / "o.cube"),
                   "--mode", "simulate") == 1
        assert "seed" in capsys.readouterr().err

    def test_bad_ratio_is_validation_error(self, cube_file, tmp_path):
        assert run("compress", cube_file, str(tmp_path / "a.arc"),
                   "--ratio", "0.5") == 1


class TestPipelines:
    def test_compress_deterministic(self, cube_file, tmp_path):
        a1 = tmp_path / "a1.arc"
        a2 = tmp_path / "a2.arc"
        args = ["--ratio", "3", "--M", "20", "--J", "1", "--seed", "7"]
        assert run("compress", cube_file, str(a1), *args) == 0
        assert run("compress", cube_file, str(a2), *args) == 0
        assert sha(a1) == sha(a2)

    def test_threads_identical_outputs(self, cube_file, tmp_path):
        a1 = tmp_path / "t1.arc"
        a2 = tmp_path / "t2.arc"
        args = ["--ratio", "3", "--M", "20", "--J", "1", "--seed", "7",
                "--variant", "distributed"]
        assert run("compress", cube_file, str(a1), *args, "--threads", "1") == 0
        assert run("compress", cube_file, str(a2), *args, "--threads", "3") == 0
        assert sha(a1) == sha(a2)
        o1 = tmp_path / "o1.cube"
        o2 = tmp_path / "o2.cube"
        assert run("decompress", str(a1), str(o1), "--threads", "1") == 0
        assert run("decompress", str(a1), str(o2), "--threads", "3") == 0
        assert sha(o1) == sha(o2)

    def test_inputs_not_mutated(self, cube_file, tmp_path):
        before = sha(cube_file)
        arc = tmp_path / "m.arc"
        assert run("compress", cube_file, str(arc), "--ratio", "3",
                   "--M", "25", "--J", "0") == 0
        assert sha(cube_file) == before
        arc_before = sha(arc)
        assert run("decompress", str(arc), str(tmp_path / "m.cube")) == 0
        assert run("inspect", str(arc)) == 0
        assert sha(arc) == arc_before

    def test_full_pipeline_with_evaluate(self, cube_file, tmp_path, capsys):
        arc = tmp_path / "p.arc"
        rec = tmp_path / "p.cube"
        report = tmp_path / "report"
        assert run("compress", cube_file, str(arc), "--ratio", "2.5",
                   "--M", "30", "--J", "1", "--seed", "3") == 0
        assert run("decompress", str(arc), str(rec), "--mode", "mean") == 0
        assert run("evaluate", cube_file, str(rec), str(report)) == 0
        assert (report / "metrics.csv").exists()
        assert (report / "rmspe_map.cube").exists()
        capsys.readouterr()

    def test_inspect_prints_report(self, cube_file, tmp_path, capsys):
        arc = tmp_path / "i.arc"
        run("compress", cube_file, str(arc), "--ratio", "3", "--M", "20",
            "--J", "0")
        capsys.readouterr()
        assert run("inspect", str(arc)) == 0
        out = capsys.readouterr().out
        assert "bits/pair" in out
        assert "stored per frequency" in out

    def test_emulate_writes_realizations(self, cube_file, tmp_path):
        arc = tmp_path / "e.arc"
        outdir = tmp_path / "reals"
        run("compress", cube_file, str(arc), "--ratio", "3", "--M", "20",
            "--J", "0")
        assert run("emulate", str(arc), str(outdir), "--count", "2",
                   "--seed", "11") == 0
        files = sorted(os.listdir(outdir))
        assert files == ["realization_000.cube", "realization_001.cube"]
        _, r0 = load_cube(outdir / files[0])
        _, r1 = load_cube(outdir / files[1])
        assert np.abs(r0.values - r1.values).max() > 0

    def test_synth_with_spec_file(self, tmp_path):
        spec_path = tmp_path / "gen.spec"
        spec_path.write_text("mu0 5.0\nkappa_low 6\nkappa_high 20\n")
        out = tmp_path / "synth.cube"
        assert run("synth", str(out), "--nlat", "6", "--nlon", "12",
                   "--ntime", "16", "--seed", "2", "--spec", str(spec_path)) == 0
        grid, cube = load_cube(out)
        assert grid.n == 72 and cube.T == 16

    def test_summary_dumps_maps(self, cube_file, tmp_path):
        outdir = tmp_path / "maps"
        assert run("summary", cube_file, str(outdir), "--bandwidth", "5") == 0
        for name in ("mean", "seasonal", "sigma_tilde", "norm_forecast_sd"):
            assert (outdir / f"{name}.cube").exists()
        assert (outdir / "summary_maps.csv").exists()

    def test_trace_file_written(self, cube_file, tmp_path):
        arc = tmp_path / "tr.arc"
        trace = tmp_path / "trace.log"
        assert run("compress", cube_file, str(arc), "--ratio", "3",
                   "--M", "20", "--J", "1", "--trace", str(trace)) == 0
        text = trace.read_text()
        assert "seed" in text and "reestimate" in text
