import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hmmselect.errors import ConfigError
from hmmselect.harness import (
    RESULT_HEADER,
    ExperimentConfig,
    derive_seed,
    reproduce_figures,
    run_experiment,
    run_replication,
    write_csv,
)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.preset == "easier-beta"
        assert cfg.method == "both"

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(replications=0)
        with pytest.raises(ConfigError):
            ExperimentConfig(n_values=(2,))
        with pytest.raises(ConfigError):
            ExperimentConfig(method="bayes")

    def test_from_json_roundtrip(self, tmp_path):
        doc = {"preset": "harder-beta", "n_values": [300], "replications": 2,
               "method": "spectral", "seed": 5}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        cfg = ExperimentConfig.from_json(path)
        assert cfg.preset == "harder-beta"
        assert cfg.n_values == (300,)
        assert cfg.replications == 2

    def test_from_json_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"presett": "easier-beta"}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(path)

    def test_from_json_rejects_garbage(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(path)


class TestSeeds:
    def test_disjoint_across_cells(self):
        seeds = {derive_seed(0, n, rep) for n in (100, 200) for rep in range(50)}
        assert len(seeds) == 100

    def test_deterministic(self):
        assert derive_seed(3, 1000, 7) == derive_seed(3, 1000, 7)


SPECTRAL_CFG = dict(
    n_values=(900,), replications=1, method="spectral",
    spectral_M=12, spectral_M_reg=10, spectral_M_params=8, seed=1,
)


class TestRunReplication:
    def test_spectral_row_shape(self):
        cfg = ExperimentConfig(**SPECTRAL_CFG)
        rows = run_replication(cfg, 900, 0)
        assert len(rows) == 1
        row = rows[0]
        assert row["method"] == "spectral"
        assert set(RESULT_HEADER) <= set(row)
        assert row["error"] == ""
        assert isinstance(row["K_hat"], int)

    def test_ls_row_shape(self):
        cfg = ExperimentConfig(
            n_values=(400,), replications=1, method="ls",
            K_max=2, M_values=(3, 5), budget=300, seed=2,
        )
        row = run_replication(cfg, 400, 0)[0]
        assert row["method"] == "ls"
        assert row["error"] == ""
        assert row["K_hat"] in (1, 2)
        assert row["M_hat"] in (3, 5)

    def test_errors_become_rows_not_exceptions(self):
        # M_reg > M makes the spectral order step raise for every replication.
        cfg = ExperimentConfig(
            n_values=(300,), replications=1, method="spectral",
            spectral_M=6, spectral_M_reg=10, seed=3,
        )
        row = run_replication(cfg, 300, 0)[0]
        assert row["error"] != ""
        assert row["K_hat"] == ""

    def test_deterministic_given_seed(self):
        cfg = ExperimentConfig(**SPECTRAL_CFG)
        a = run_replication(cfg, 900, 0)[0]
        b = run_replication(cfg, 900, 0)[0]
        assert a["K_hat"] == b["K_hat"]
        assert a["d_perm_to_truth"] == b["d_perm_to_truth"]


class TestRunExperiment:
    def test_writes_results_and_aggregate(self, tmp_path):
        cfg = ExperimentConfig(**{**SPECTRAL_CFG, "replications": 2})
        rows, aggregate, n_failures = run_experiment(cfg, tmp_path)
        assert n_failures == 0
        assert len(rows) == 2
        res = read_csv(tmp_path / "results.csv")
        assert len(res) == 2
        assert set(res[0]) == set(RESULT_HEADER)
        agg = read_csv(tmp_path / "aggregate.csv")
        assert len(agg) == 1
        assert agg[0]["method"] == "spectral"
        assert float(agg[0]["p_correct"]) == pytest.approx(
            sum(1 for r in rows if r["K_hat"] == 3) / 2
        )

    def test_failures_counted_not_raised(self, tmp_path):
        cfg = ExperimentConfig(
            n_values=(300,), replications=2, method="spectral",
            spectral_M=6, spectral_M_reg=10, seed=3,
        )
        rows, _, n_failures = run_experiment(cfg, tmp_path)
        assert n_failures == 2
        assert len(rows) == 2


class TestCsv:
    def test_write_csv_formats_floats(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a", "b"], [{"a": 1.0 / 3.0, "b": "s"}])
        lines = path.read_text().splitlines()
        assert lines[0] == "a,b"
        assert lines[1].startswith("0.333333333333,")

    def test_missing_fields_become_empty(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a", "b"], [{"a": 1}])
        assert path.read_text().splitlines()[1] == "1,"


class TestFigures:
    def test_emits_source_csvs(self, tmp_path):
        cfg = ExperimentConfig(
            n_values=(600,), replications=1, method="both",
            K_max=2, M_values=(3, 5), budget=300,
            spectral_M=12, spectral_M_reg=10, spectral_M_params=8, seed=4,
        )
        written = reproduce_figures(cfg, tmp_path)
        assert set(written) == {"spectrum.csv", "fits.csv", "calibration.csv"}
        spec_rows = read_csv(tmp_path / "spectrum.csv")
        assert len(spec_rows) == 12
        sv = [float(r["sigma_empirical"]) for r in spec_rows]
        assert sv == sorted(sv, reverse=True)
        fits = read_csv(tmp_path / "fits.csv")
        assert len(fits) == 4  # 2 K values x 2 M values
        cal = read_csv(tmp_path / "calibration.csv")
        assert len(cal) == 64


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "hmmselect.cli", *args],
            capture_output=True, text=True,
        )

    def test_simulate_writes_series(self, tmp_path):
        res = self.run_cli(
            "simulate", "--preset", "easier-beta", "--n", "50",
            "--seed", "1", "--out", str(tmp_path),
        )
        assert res.returncode == 0, res.stderr
        obs = tmp_path / "observations.csv"
        assert obs.exists() and (tmp_path / "params.json").exists()
        body = [l for l in obs.read_text().splitlines()
                if not l.startswith("#") and l != "value"]
        vals = np.array([float(v) for v in body])
        assert vals.size == 52  # n + L - 1
        assert np.all((vals >= 0) & (vals <= 1))

    def test_fit_spectral_reports_k(self, tmp_path):
        sim_dir = tmp_path / "sim"
        self.run_cli("simulate", "--preset", "easier-beta", "--n", "999",
                     "--seed", "2", "--out", str(sim_dir))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"spectral_M": 12, "spectral_M_reg": 10}))
        out = tmp_path / "fit"
        res = self.run_cli(
            "fit-spectral", "--config", str(cfg),
            "--input", str(sim_dir / "observations.csv"), "--out", str(out),
        )
        assert res.returncode == 0, res.stderr
        assert "K_hat" in res.stdout
        spec = read_csv(out / "spectrum.csv")
        assert len(spec) == 12

    def test_bad_config_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"unknown_key": 1}))
        res = self.run_cli("experiment", "--config", str(cfg),
                           "--out", str(tmp_path / "out"))
        assert res.returncode == 2
