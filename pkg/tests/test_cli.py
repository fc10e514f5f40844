import json
import os

import pytest

from dynlab import cli


def run_cli(args):
    return cli.main(args)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestDispatch:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as err:
            cli.build_parser().parse_args(["frobnicate"])
        assert err.value.code == 2

    def test_missing_config_file(self, tmp_path, capsys):
        out = os.path.join(tmp_path, "out")
        code = run_cli(["encode", "--out", out, "--config", "/nonexistent/config.json"])
        assert code == cli.EXIT_MISSING_FILE
        assert "/nonexistent/config.json" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path, capsys):
        bad = os.path.join(tmp_path, "bad.json")
        with open(bad, "w") as fh:
            fh.write("{not json")
        code = run_cli(["encode", "--out", os.path.join(tmp_path, "o"), "--config", bad])
        assert code == cli.EXIT_BAD_CONFIG

    def test_missing_dataset_file(self, tmp_path):
        code = run_cli([
            "classify-matrix", "--out", os.path.join(tmp_path, "o"),
            "--data", "/nonexistent/data.csv",
        ])
        assert code == cli.EXIT_MISSING_FILE


class TestEncode:
    def test_writes_csv_and_manifest(self, tmp_path):
        out = os.path.join(tmp_path, "enc")
        code = run_cli(["encode", "--out", out, "--delta", "2.0",
                        "--features", "1.0,-0.5", "--n-steps", "5", "--t-total", "8.0"])
        assert code == 0
        csv_bytes = read(os.path.join(out, "trajectories.csv"))
        assert csv_bytes.startswith(b"feature_idx,frame,x,y,z\n")
        manifest = json.loads(read(os.path.join(out, "manifest.json")))
        assert manifest["subcommand"] == "encode"
        assert manifest["config"]["delta"] == 2.0
        assert "decisions" in manifest

    def test_rerun_byte_identical(self, tmp_path):
        out_a = os.path.join(tmp_path, "a")
        out_b = os.path.join(tmp_path, "b")
        args = ["--delta", "-1.5", "--features", "0.3,0.9", "--n-steps", "8",
                "--t-total", "4.0", "--seed", "11"]
        assert run_cli(["encode", "--out", out_a] + args) == 0
        assert run_cli(["encode", "--out", out_b] + args) == 0
        assert read(os.path.join(out_a, "trajectories.csv")) == read(
            os.path.join(out_b, "trajectories.csv"))


class TestMetricsCommands:
    def test_lyapunov_row(self, tmp_path):
        out = os.path.join(tmp_path, "lyap")
        code = run_cli(["lyapunov", "--out", out, "--deltas", "2.0", "--t-total", "200"])
        assert code == 0
        lines = read(os.path.join(out, "lyapunov.csv")).decode().strip().splitlines()
        assert lines[0] == "delta,lam1,lam2,lam3,sum"
        fields = lines[1].split(",")
        assert abs(float(fields[4]) + 4.0) < 0.4

    def test_ais_determinism(self, tmp_path):
        args = ["--deltas", "2.0,10.0", "--n-inputs", "30", "--seed", "3"]
        out_a, out_b = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
        assert run_cli(["ais", "--out", out_a] + args) == 0
        assert run_cli(["ais", "--out", out_b] + args) == 0
        assert read(os.path.join(out_a, "ais.csv")) == read(os.path.join(out_b, "ais.csv"))

    def test_spectral_scan_csv(self, tmp_path):
        out = os.path.join(tmp_path, "scan")
        code = run_cli(["spectral-scan", "--out", out, "--deltas", "2.0",
                        "--t-grid", "8.0", "--n-grid", "64", "--n-seeds", "1"])
        assert code == 0
        lines = read(os.path.join(out, "spectral_scan.csv")).decode().strip().splitlines()
        assert lines[0] == "delta,T,N,centroid,entropy,dominant_freq,status"
        assert len(lines) == 2


class TestSelftest:
    def test_selftest_passes(self, capsys):
        assert run_cli(["selftest", "--out", "/tmp/selftest"]) == 0
        output = capsys.readouterr().out
        assert "[PASS]" in output
        assert "[FAIL]" not in output
