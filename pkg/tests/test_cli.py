import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from skewcwm import cli, preset, simulate_cwm

FAST = ["--tol", "1e-6", "--screen-tol", "1e-4", "--max-iter", "500"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--preset", "table1-stn", "--n", "150", "--seed", "3", "--out", str(out)]) == 0
    return out


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestIngest:
    def _write(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text)
        return p

    def test_round_trip_of_simulated_data(self, sim_dir):
        data = cli.ingest_csv(sim_dir / "data.csv", ["y1", "y2"], ["x1", "x2", "x3"], "label")
        spec, params = preset("table1-stn")
        ref = simulate_cwm(spec, params, 150, np.random.default_rng(3))
        assert np.array_equal(data.x, ref.x) and np.array_equal(data.y, ref.y)
        assert np.array_equal(data.labels, ref.labels)

    def test_string_labels_coded_in_sorted_order(self, tmp_path):
        p = self._write(tmp_path, "a,b,g\n1,2,m\n3,4,f\n5,6,m\n")
        assert cli.ingest_csv(p, ["a"], ["b"], "g").labels.tolist() == [2, 1, 2]

    def test_blank_lines_skipped(self, tmp_path):
        p = self._write(tmp_path, "a,b\n1,2\n\n3,4\n")
        assert cli.ingest_csv(p, ["a"], ["b"]).n == 2

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("a,b\n1,2\n3\n", "line 3"),
            ("a,b\n1,x\n", "line 2: column 'b'"),
            ("a,b\n1,nan\n", "non-finite"),
            ("a,c\n1,2\n", "missing column"),
            ("a,b\n", "empty dataset"),
            ("", "file is empty"),
        ],
    )
    def test_errors_name_the_line(self, tmp_path, text, fragment):
        p = self._write(tmp_path, text)
        with pytest.raises(cli.DataError, match=fragment):
            cli.ingest_csv(p, ["a"], ["b"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(cli.DataError, match="cannot open"):
            cli.ingest_csv(tmp_path / "nope.csv", ["a"], ["b"])


class TestCommands:
    def test_simulate_outputs(self, sim_dir):
        prov = json.loads((sim_dir / "provenance.json").read_text())
        assert prov["model"] == "ST-N" and prov["N"] == 150
        assert len(_read(sim_dir / "data.csv")) == 150

    def test_simulate_is_byte_identical(self, tmp_path, sim_dir):
        cli.main(["simulate", "--preset", "table1-stn", "--n", "150", "--seed", "3", "--out", str(tmp_path)])
        assert (tmp_path / "data.csv").read_bytes() == (sim_dir / "data.csv").read_bytes()

    def _select(self, sim_dir, out, *extra):
        args = ["select", "--input", str(sim_dir / "data.csv"), "--responses", "y1,y2", "--covariates", "x1,x2,x3",
                "--labels", "label", "--models", "ST-N,N-N,FMR-N", "--gmin", "1", "--gmax", "2",
                "--seed", "1", "--out", str(out), *FAST, *extra]
        return cli.main(args)

    def test_select_deterministic_and_sensible(self, sim_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert self._select(sim_dir, a) == 0
        assert self._select(sim_dir, b) == 0
        for name in ("rows.csv", "labels.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        doc = json.loads((a / "select.json").read_text())
        other = json.loads((b / "select.json").read_text())
        # Only the recorded output directory differs.
        doc["config"].pop("out"), other["config"].pop("out")
        assert doc == other
        assert doc["winner"]["model"] == "ST-N" and doc["winner"]["G"] == 2
        assert doc["winner"]["ari"] > 0.95
        assert doc["fmr_winner"]["model"] == "FMR-N"
        rows = _read(a / "rows.csv")
        assert len(rows) == 6
        assert rows[-1]["model"] == "FMR-N"
        assert doc["config"]["models"] == ["ST-N", "N-N", "FMR-N"]

        pred = a / "labels.csv"
        assert cli.main(["eval", "--input", str(sim_dir / "data.csv"), "--labels", "label",
                         "--pred", str(pred), "--out", str(a)]) == 0
        ev = json.loads((a / "eval.json").read_text())
        assert ev["ari"] == pytest.approx(doc["winner"]["ari"])

    def test_fit_single_model(self, sim_dir, tmp_path):
        args = ["fit", "--input", str(sim_dir / "data.csv"), "--responses", "y1,y2", "--covariates", "x1,x2,x3",
                "--models", "ST-N", "--gmin", "2", "--gmax", "2", "--out", str(tmp_path), *FAST]
        assert cli.main(args) == 0
        doc = json.loads((tmp_path / "fit.json").read_text())
        assert len(doc["params"]["weights"]) == 2
        assert {r["label"] for r in _read(tmp_path / "labels.csv")} == {"1", "2"}

    def test_study(self, tmp_path):
        args = ["study", "--preset", "table1-stn", "--models", "ST-N", "--gmin", "1", "--gmax", "2",
                "--replicates", "1", "--n", "150", "--out", str(tmp_path), *FAST]
        assert cli.main(args) == 0
        doc = json.loads((tmp_path / "study.json").read_text())
        assert doc["winner"] == [{"model": "ST-N", "G": 2}]
        assert sum(int(r["count"]) for r in _read(tmp_path / "tally.csv")) == 1


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        assert cli.main(["fit", "--models", "ST-N,N-N", "--gmin", "2", "--gmax", "2", "--input", "x"]) == 1
        assert cli.main(["select", "--gmin", "3", "--gmax", "2"]) == 1
        assert cli.main(["select", "--models", "ZZ-N"]) == 1
        assert cli.main(["simulate", "--preset", "nope"]) == 1
        assert cli.main(["select", "--responses", "a", "--covariates", "a", "--input", "x"]) == 1
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 1

    def test_data_errors(self, sim_dir, tmp_path):
        args = ["select", "--input", str(sim_dir / "data.csv"), "--responses", "y9", "--covariates", "x1",
                "--out", str(tmp_path)]
        assert cli.main(args) == 2
        assert cli.main(["select", "--input", str(tmp_path / "missing.csv"), "--responses", "a",
                         "--covariates", "b", "--out", str(tmp_path)]) == 2

    def test_all_fits_failed(self, tmp_path):
        p = tmp_path / "tiny.csv"
        rng = np.random.default_rng(0)
        rows = "\n".join(",".join(f"{v:.6f}" for v in r) for r in rng.standard_normal((8, 2)))
        p.write_text("a,b\n" + rows + "\n")
        args = ["select", "--input", str(p), "--responses", "a", "--covariates", "b", "--models", "N-N",
                "--gmin", "3", "--gmax", "3", "--out", str(tmp_path), *FAST]
        assert cli.main(args) == 3

    def test_console_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "skewcwm.cli", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "select" in res.stdout
