from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from sparsegof.harness import (
    ConfigError,
    IngestError,
    RunConfig,
    analyze_spectrum,
    example_config,
    format_table,
    ingest_spectrum,
    power_study,
    write_csv,
    write_spectrum,
)
from sparsegof.harness.cli import main
from sparsegof.measure import Grid
from sparsegof.models import parse_model
from sparsegof.projection import gaussian_test


def write_rows(path, rows, header="bin_low,bin_high,count"):
    path.write_text("\n".join([header] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


@pytest.fixture
def spectrum(tmp_path, texp_model, grid100):
    z = np.random.default_rng(21).poisson(texp_model.bin_means(grid100))
    path = tmp_path / "spec.csv"
    write_spectrum(path, grid100, z)
    return path, z


class TestConfig:
    def test_validation(self):
        for bad in [dict(alpha=0.0), dict(replicates=50), dict(test="x"), dict(sides="x"),
                    dict(test="ks_star", estimator="ls"), dict(domain=(1.0, 0.0))]:
            with pytest.raises(ConfigError):
                RunConfig(**bad)

    def test_sections_and_unknown(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"models": {"model": "texp", "theta": [5, 1.5]}, "run": {"replicates": 200}}))
        cfg = RunConfig.from_file(p)
        assert cfg.model == "texp" and cfg.replicates == 200
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"bogus": 1})
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.from_file(p)

    def test_override(self):
        cfg = RunConfig().override(K=50, seed=None)
        assert cfg.K == 50 and cfg.seed == 0


class TestIngest:
    def test_valid(self, tmp_path):
        grid, counts = ingest_spectrum(write_rows(tmp_path / "a.csv", [(0, 1, 3), (1, 2, 0), (2, 3, 7)]))
        assert grid.K == 3 and grid.low == 0 and grid.high == 3
        np.testing.assert_array_equal(counts.counts, [3, 0, 7])

    def test_gap(self, tmp_path):
        with pytest.raises(IngestError, match="line 3"):
            ingest_spectrum(write_rows(tmp_path / "a.csv", [(0, 1, 3), (1.5, 2.5, 0)]))

    def test_negative(self, tmp_path):
        with pytest.raises(IngestError, match="line 2"):
            ingest_spectrum(write_rows(tmp_path / "a.csv", [(0, 1, -3)]))

    @pytest.mark.parametrize("rows,header,msg", [
        ([(0, 1, 3), (1, 3, 1)], "bin_low,bin_high,count", "width"),
        ([(0, 1, 1.5)], "bin_low,bin_high,count", "integer"),
        ([(0, 1, "x")], "bin_low,bin_high,count", "non-numeric"),
        ([(0, 1)], "bin_low,bin_high,count", "3 fields"),
        ([(0, 1, 2)], "lo,hi,n", "header"),
        ([], "bin_low,bin_high,count", "no data"),
    ])
    def test_errors(self, tmp_path, rows, header, msg):
        with pytest.raises(IngestError, match=msg):
            ingest_spectrum(write_rows(tmp_path / "a.csv", rows, header))

    def test_roundtrip(self, spectrum, grid100):
        path, z = spectrum
        grid, counts = ingest_spectrum(path)
        np.testing.assert_array_equal(counts.counts, z)
        np.testing.assert_allclose(grid.edges, grid100.edges, atol=1e-15)


class TestReport:
    def test_table_and_csv(self, tmp_path):
        rows = [{"a": 1, "b": 0.5}, {"a": 22, "b": 1e-9, "c": "x"}]
        txt = format_table(rows)
        assert txt.splitlines()[0].split() == ["a", "b", "c"]
        path = write_csv(rows, tmp_path / "o" / "r.csv")
        with path.open() as fh:
            got = list(csv.DictReader(fh))
        assert got[1]["c"] == "x" and got[0]["c"] == ""


class TestPower:
    def test_determinism_across_workers(self):
        cfg = example_config("ex4", kernel="wlinear", estimator="mle", replicates=3000, seed=5)
        a = power_study(cfg)
        b = power_study(cfg.override(workers=3))
        assert a.row() == b.row()

    @pytest.mark.parametrize("test,kernel", [("single", "pearson"), ("ks", "wlinear"), ("ks_star", "pearson")])
    def test_null_size(self, test, kernel):
        cfg = RunConfig(model="texp", theta=[5.0, 1.5], kernel=kernel, estimator="mle", test=test,
                        replicates=4000, seed=2)
        rep = power_study(cfg)
        se = np.sqrt(0.05 * 0.95 / 4000)
        # null and alternative draws are independent, so the null-vs-null rate is a fresh size estimate
        assert abs(rep.power - 0.05) < 3 * se + 0.002

    def test_asymptotic_calibration(self):
        cfg = RunConfig(model="constant", theta=[5.0], K=200, kernel="pearson", estimator="mle",
                        calibration="asymptotic", replicates=4000, seed=3)
        rep = power_study(cfg)
        assert abs(rep.power - 0.05) < 0.02
        assert rep.null_var == pytest.approx(2.0, rel=0.08)

    def test_ks_needs_mc(self):
        cfg = RunConfig(model="constant", theta=[5.0], test="ks", calibration="asymptotic", replicates=200)
        with pytest.raises(ConfigError):
            power_study(cfg)

    def test_unknown_example(self):
        with pytest.raises(ConfigError):
            example_config("ex9")


class TestAnalysis:
    def test_gaussian(self, spectrum):
        path, z = spectrum
        grid, counts = ingest_spectrum(path)
        rep = analyze_spectrum(grid, counts, "texp", "pearson", "gaussian")
        assert 0 < rep.pvalue <= 1
        assert rep.theta_hat[0] == pytest.approx(z.mean(), rel=1e-12)

    def test_constant_gaussian_formula(self, tmp_path):
        grid = Grid(0.0, 1.0, 750)
        z = np.random.default_rng(4).poisson(7.0, 750)
        write_spectrum(tmp_path / "c.csv", grid, z)
        grid_, counts = ingest_spectrum(tmp_path / "c.csv")
        rep = analyze_spectrum(grid_, counts, "constant", "pearson", "gaussian")
        c = z.mean()
        stat = (((z - c) ** 2 / c - 1).sum()) / np.sqrt(750)
        assert rep.statistic == pytest.approx(stat, rel=1e-12)
        assert rep.pvalue == pytest.approx(gaussian_test(stat, 2.0), abs=1e-12)

    def test_projected_single_needs_linear(self, spectrum):
        grid, counts = ingest_spectrum(spectrum[0])
        with pytest.raises(ConfigError):
            analyze_spectrum(grid, counts, "texp", "pearson", "single", bootstrap="projected", replicates=1000)

    def test_ks_star(self, spectrum):
        grid, counts = ingest_spectrum(spectrum[0])
        rep = analyze_spectrum(grid, counts, "texp", test="ks_star")
        assert 0 < rep.pvalue <= 1


class TestCLI:
    def test_ingest_and_fit(self, spectrum, tmp_path, capsys):
        path, _ = spectrum
        assert main(["ingest-check", "--data", str(path)]) == 0
        assert main(["fit", "--model", "texp", "--data", str(path), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "fit.csv").exists()
        assert "theta1" in capsys.readouterr().out

    def test_gof_and_dfree(self, spectrum):
        path, _ = spectrum
        assert main(["gof", "--model", "texp", "--data", str(path), "--stat", "ks", "--bootstrap", "projected",
                     "--reps", "1000", "--seed", "1"]) == 0
        assert main(["dfree", "--model", "texp", "--data", str(path)]) == 0
        assert main(["dfree", "--model", "texp", "--data", str(path), "--p", "3"]) == 2

    def test_power(self, tmp_path):
        assert main(["power", "--example", "ex4", "--kernel", "pearson", "--estimator", "known", "--reps", "500",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "power.csv").exists()

    def test_power_from_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"models": {"model": "constant", "theta": [5.0]}, "run": {"replicates": 300}}))
        assert main(["power", "--config", str(p), "--seed", "2"]) == 0

    def test_exit_codes(self, tmp_path, spectrum):
        path, _ = spectrum
        bad = write_rows(tmp_path / "bad.csv", [(0, 1, -1)])
        assert main(["ingest-check", "--data", str(bad)]) == 2
        assert main(["fit", "--model", "nosuch", "--data", str(path)]) == 2
        assert main(["gof", "--model", "texp", "--kernel", "bogus", "--data", str(path)]) == 2
        assert main(["power", "--reps", "10"]) == 2
        assert main(["nosuchcommand"]) == 2
        zeros = tmp_path / "zeros.csv"
        write_spectrum(zeros, Grid(0, 1, 10), np.zeros(10, int))
        assert main(["fit", "--model", "texp", "--data", str(zeros)]) == 3
