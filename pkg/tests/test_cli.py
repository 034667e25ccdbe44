"""Command-line front end: config merging, exit codes, manifests and outputs."""

import json

import numpy as np
import pytest

from lrrw import ModelParams
from lrrw.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, THEOREMS, main
from lrrw.engine import SimConfig, read_spool
from lrrw.manifest import ExperimentManifest, file_sha256, git_blob_hash

DIFF = ["--p", "0.6", "--q", "0.2", "--r", "0.2", "--theta", "0.5"]
CRIT = ["--p", "0.9", "--q", "0.1", "--r", "0", "--theta", "0.625"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConstants:
    def test_symmetric(self, capsys):
        code, out, _ = run(capsys, "constants", "--p", "0.5", "--q", "0.5", "--r", "0", "--theta", "0.5")
        assert code == EXIT_OK
        assert "alpha = 0\n" in out
        assert "sigma2 = 1\n" in out

    def test_superdiffusive_block(self, capsys):
        code, out, _ = run(capsys, "constants", "--p", "0.8", "--q", "0.1", "--r", "0.1", "--theta", "0.9")
        assert code == EXIT_OK
        assert "regime = superdiffusive" in out
        assert "[L moments]" in out and "second_moment_L" in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "constants", "--json", *DIFF)
        d = json.loads(out)
        assert d["regime"] == "diffusive"
        assert d["sigma2"] == pytest.approx(29 / 48)

    def test_invalid_params(self, capsys):
        code, _, err = run(capsys, "constants", "--p", "0.5", "--q", "0.5", "--r", "0.5", "--theta", "0.5")
        assert code == EXIT_USAGE
        assert "p + q + r = 1" in err

    def test_missing_params(self, capsys):
        code, _, err = run(capsys, "constants", "--p", "0.5")
        assert code == EXIT_USAGE
        assert "--q" in err

    def test_config_file_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[model]\np = 0.6\nq = 0.2\nr = 0.2\ntheta = 0.9\n")
        _, out, _ = run(capsys, "constants", "--json", "--config", str(cfg))
        assert json.loads(out)["alpha"] == pytest.approx(0.36)
        _, out, _ = run(capsys, "constants", "--json", "--config", str(cfg), "--theta", "0.5")
        assert json.loads(out)["alpha"] == pytest.approx(0.2)

    def test_bad_config(self, capsys, tmp_path):
        assert run(capsys, "constants", "--config", str(tmp_path / "nope.ini"))[0] == EXIT_USAGE
        cfg = tmp_path / "c.ini"
        cfg.write_text("[model]\np = lots\n")
        code, _, err = run(capsys, "constants", "--config", str(cfg))
        assert code == EXIT_USAGE and "[model] p" in err

    def test_unknown_flag_and_help(self, capsys):
        assert run(capsys, "constants", "--bogus", "1")[0] == EXIT_USAGE
        code, out, _ = run(capsys, "verify", "--help")
        assert code == EXIT_OK
        assert "--fclt-grid" in out and "default" in out


class TestOracle:
    def test_first_level(self, capsys):
        code, out, _ = run(capsys, "oracle", *DIFF, "--n", "1")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[:4] == ["s,z,mass", "-1,1,0.2", "0,0,0.2", "1,1,0.6"]
        assert any(line.startswith("E[S_n]") for line in lines)

    def test_cap(self, capsys):
        code, _, err = run(capsys, "oracle", *DIFF, "--n", "600")
        assert code == EXIT_USAGE and "cap 500" in err

    def test_csv_output(self, capsys, tmp_path):
        code, out, _ = run(capsys, "oracle", *DIFF, "--n", "30", "--out", str(tmp_path))
        assert code == EXIT_OK
        assert (tmp_path / "oracle_n30.csv").exists()
        table = [line.split() for line in out.splitlines() if line.startswith("E[")]
        assert all(float(row[-2]) < 1e-10 for row in table)


class TestSimulate:
    def test_smoke(self, capsys):
        code, out, _ = run(capsys, "simulate", *DIFF, "--n", "100", "--paths", "1")
        assert code == EXIT_OK and "paths=1" in out

    def test_manifest_rerun_is_bitwise(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "simulate", *CRIT, "--n", "2000", "--paths", "50", "--seed", "9", "--checkpoints", "10,100", "--out", str(a))
        m = ExperimentManifest.read(a / "manifest.json")
        assert m.master_seed == 9 and m.finished
        assert m.constants["regime"] == "critical"
        assert m.outputs["checkpoints.bin"] == file_sha256(a / "checkpoints.bin")
        code, _, _ = run(capsys, "simulate", "--from-manifest", str(a / "manifest.json"), "--workers", "2", "--block-size", "7", "--out", str(b))
        assert code == EXIT_OK
        assert (a / "checkpoints.bin").read_bytes() == (b / "checkpoints.bin").read_bytes()
        assert ExperimentManifest.read(b / "manifest.json").input_hash == m.input_hash
        rec = read_spool(a / "checkpoints.bin")
        assert len(rec) == 50 * 3
        assert np.all(rec["n"][:3] == [10, 100, 2000])

    def test_csv_spool(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", *DIFF, "--n", "50", "--paths", "2", "--format", "csv", "--out", str(tmp_path))
        assert code == EXIT_OK
        assert (tmp_path / "checkpoints.csv").read_text().startswith("path_index,n,s,z,M")

    def test_bad_format(self, capsys):
        assert run(capsys, "simulate", *DIFF, "--n", "50", "--paths", "2", "--format", "xml")[0] == EXIT_USAGE

    def test_bad_sampler(self, capsys):
        assert run(capsys, "simulate", *DIFF, "--n", "50", "--sampler", "magic")[0] == EXIT_USAGE


class TestVerify:
    def test_lln_diffusive(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", *DIFF, "--theorem", "lln", "--seed", "3", "--out", str(tmp_path))
        assert code == EXIT_OK
        assert "PASS" in out
        report = json.loads((tmp_path / "verdicts.json").read_text())
        assert report["verdicts"][0]["status"] == "pass"
        assert report["manifest"]["master_seed"] == 3
        assert set(report["manifest"]["outputs"]) >= {"checkpoints.bin", "lln.csv"}

    def test_all_critical(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", *CRIT, "--all", "--n", "4000", "--paths", "200", "--out", str(tmp_path))
        assert code in (EXIT_OK, EXIT_FAIL)
        report = json.loads((tmp_path / "verdicts.json").read_text())
        assert [v["theorem"] for v in report["verdicts"]] == ["lln", "clt", "fclt", "qsl", "asclt", "lil"]
        for name in ("fclt.csv", "qsl.csv", "asclt.csv", "lil.csv", "manifest.json"):
            assert (tmp_path / name).exists()

    def test_all_superdiffusive(self, capsys):
        code, out, _ = run(capsys, "verify", "--p", "0.9", "--q", "0", "--r", "0.1", "--theta", "0.9", "--all", "--n", "200000", "--paths", "100")
        assert code in (EXIT_OK, EXIT_FAIL)
        for t in ("lln", "lmoments", "fluct", "lil"):
            assert t in out

    def test_unknown_theorem(self, capsys):
        code, _, err = run(capsys, "verify", *DIFF, "--theorem", "xyz")
        assert code == EXIT_USAGE
        assert all(t in err for t in THEOREMS)

    def test_inapplicable_theorem(self, capsys):
        code, _, err = run(capsys, "verify", *DIFF, "--theorem", "lmoments")
        assert code == EXIT_USAGE and "does not apply" in err

    def test_no_selection(self, capsys):
        assert run(capsys, "verify", *DIFF)[0] == EXIT_USAGE

    def test_lil_start_floor(self, capsys):
        code, _, err = run(capsys, "verify", *DIFF, "--theorem", "lil", "--lil-start", "10")
        assert code == EXIT_USAGE and "lil_start" in err

    def test_failure_exit_code(self, capsys):
        # 20 steps is far from the limit: the critical CLT is rejected
        code, out, _ = run(capsys, "verify", *CRIT, "--theorem", "clt", "--n", "20", "--paths", "5000")
        assert code == EXIT_FAIL and "FAIL" in out


class TestManifest:
    def test_blob_hash_matches_git(self):
        # `printf hello | git hash-object --stdin`
        assert git_blob_hash(b"hello") == "b6fc4c620b67d95f953a5c1c1230aaab5db5a1b0"

    def test_round_trip(self, tmp_path):
        cfg = SimConfig(ModelParams(0.8, 0.1, 0.1, 0.9), horizon=10, num_paths=2, master_seed=4)
        m = ExperimentManifest.for_config(cfg)
        assert "superdiffusive" in m.constants
        m.write(tmp_path / "m.json")
        again = ExperimentManifest.read(tmp_path / "m.json")
        assert again.sim_config().as_dict() == cfg.as_dict()
